import csv
import json
import math

import numpy as np
import pytest

from _oracles import random_net
from intpde.errors import ExtrapolationError, HeteroSolveError
from intpde.evolution import GaConfig
from intpde.genome import GenomeConfig, parse_genome
from intpde.stepwise import (
    WindowPlan,
    classify,
    discover_windows,
    hetero_system,
    parity_components,
    solve_hetero,
    solve_hetero_arrays,
    vote,
    write_series,
)


def planted_problem(coef_fns, nx=60, nt=40):
    """Exact two-term flux system ``int u_t = [C1 u + C2 u_x]`` built from closed forms.

    u = sin(x + t) + 0.5 cos(2x - 3t); the lhs is the flux difference of the
    planted coefficients, so the solve must return them to round-off.
    """
    x = np.linspace(0.0, 3.0, nx)
    t = np.linspace(0.0, 2.0, nt)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    u = np.sin(xx + tt) + 0.5 * np.cos(2 * xx - 3 * tt)
    ux = np.cos(xx + tt) - np.sin(2 * xx - 3 * tt)
    terms = np.stack([u, ux])
    c = np.stack([f(x) for f in coef_fns])
    flux = np.einsum("nk,ntk->tk", c, terms)
    lhs = flux[:, 2:] - flux[:, :-2]
    return x, lhs, terms, c


def test_window_partition():
    plan = WindowPlan((0.0, 8.0), (0.5, 5.5), n_local=10)
    w = plan.windows
    assert len(w) == 10 and w[0] == (0.0, 0.8) and w[-1][1] == 8.0
    assert all(a[1] == pytest.approx(b[0]) for a, b in zip(w, w[1:]))
    with pytest.raises(ValueError):
        WindowPlan((1.0, 1.0), (0.0, 1.0))


def test_vote_identical_structures_is_fully_stable():
    g = parse_genome("[2],{[2]}")
    best, s, freq = vote([g] * 10)
    assert best == g and s == 1.0 and freq == {g: 10}


def test_vote_counts_failed_windows_in_denominator():
    a, b = parse_genome("[1],{[1]}"), parse_genome("[1],{[0]}")
    best, s, _ = vote([a, a, b, None])
    assert best == a and s == 0.5
    assert vote([None, None]) == (None, 0.0, {})


def test_vote_tie_breaks_on_mean_fitness_then_string():
    a, b = parse_genome("[1],{[1]}"), parse_genome("[1],{[0]}")
    assert vote([a, b], {a: 1.0, b: 2.0})[0] == a
    assert vote([a, b])[0] == b  # "[1],{[0]}" < "[1],{[1]}"


def test_classify():
    c = classify([3.0, 3.0, 3.0])
    assert c.is_constant and c.cv == 0.0 and c.mean == 3.0
    z = classify([1.0, -1.0])
    assert z.zero_mean and math.isnan(z.cv) and not z.is_constant
    h = classify([1.0, 2.0])
    assert h.cv == pytest.approx(100 / 3) and h.kind == "heterogeneous"
    with pytest.raises(ValueError):
        classify([])


def test_system_layout():
    x, lhs, terms, c = planted_problem([np.cos, lambda x: 1 + 0 * x], nx=6, nt=3)
    a, b = hetero_system(lhs, terms)
    assert a.shape == (3 * 4, 2 * 6) and b.shape == (12,)
    # row for (t=1, k=2) references nodes 1 and 3 of each term
    row = a.getrow(1 * 4 + 1).toarray().ravel()
    assert np.flatnonzero(row).tolist() == [1, 3, 7, 9]
    assert row[3] == terms[0, 1, 3] and row[1] == -terms[0, 1, 1]
    with pytest.raises(ValueError):
        hetero_system(lhs[:, :-1], terms)


def test_parity_decoupling():
    _, lhs, terms, _ = planted_problem([np.cos, np.sin], nx=20, nt=10)
    n, labels = parity_components(hetero_system(lhs, terms)[0])
    assert n == 2
    assert labels[0] != labels[1] and labels[0] == labels[2] == labels[20]


def test_planted_heterogeneous_coefficients_recovered():
    fns = [lambda x: 1 + 0.5 * np.sin(x), lambda x: 0.2 * np.exp(-x)]
    x, lhs, terms, c = planted_problem(fns)
    res = solve_hetero_arrays(x, lhs, terms, ["u", "u_x"])
    np.testing.assert_allclose(res.coefficients, c, rtol=1e-6)
    assert res.residual_mse < 1e-20
    assert res.n_unknowns == 2 * 60 and res.n_equations == 40 * 58
    assert res.flagged_nodes.tolist() == [0, 1, 58, 59]
    assert [k.kind for k in res.classifications] == ["heterogeneous", "heterogeneous"]


def test_constant_coefficient_classified_constant():
    x, lhs, terms, c = planted_problem([lambda x: -1 + 0 * x, lambda x: 0.3 + 0.1 * np.cos(x)])
    res = solve_hetero_arrays(x, lhs, terms)
    assert res.classifications[0].is_constant and res.classifications[0].cv < 5
    assert res.classifications[0].mean == pytest.approx(-1.0, rel=1e-8)
    assert not res.classifications[1].is_constant
    assert res.terms == ("C0", "C1")


def test_underdetermined_and_degenerate_rejected():
    x, lhs, terms, _ = planted_problem([np.cos, np.sin], nx=10, nt=2)
    with pytest.raises(HeteroSolveError):
        solve_hetero_arrays(x, lhs, terms)
    with pytest.raises(HeteroSolveError):
        solve_hetero_arrays(np.arange(8.0), np.zeros((5, 6)), np.zeros((1, 5, 8)))


def test_series_csv_and_summary(tmp_path):
    x, lhs, terms, _ = planted_problem([np.cos, np.sin], nx=12, nt=8)
    res = solve_hetero_arrays(x, lhs, terms, ["u", "u_x"])
    path = tmp_path / "series.csv"
    write_series(res, path)
    rows = list(csv.reader(open(path, encoding="utf-8")))
    assert rows[0] == ["x", "C0(u)", "C1(u_x)"] and len(rows) == 13
    assert float(rows[5][1]) == res.coefficients[0, 4]
    summary = json.load(open(str(path) + ".json", encoding="utf-8"))
    assert summary["n_unknowns"] == 24 and summary["n_unknowns_interior_count"] == 20


def test_solve_hetero_on_network_runs_and_checks_range():
    net = random_net(1, bounds=(0.0, 2.0, 0.0, 1.0))
    res = solve_hetero(net, parse_genome("[1],{[0],[1]}"), (0.1, 1.9), (0.1, 0.9), nx=30, nt=20)
    assert res.coefficients.shape == (2, 30) and np.all(np.isfinite(res.coefficients))
    with pytest.raises(ExtrapolationError):
        solve_hetero(net, parse_genome("[1],{[0]}"), (0.0, 3.0), (0.1, 0.9))


def test_window_discovery_is_thread_independent():
    net = random_net(2, widths=(2, 8, 8, 1), bounds=(0.0, 2.0, 0.0, 1.0))
    plan = WindowPlan((0.0, 2.0), (0.1, 0.9), n_local=3, nx=20, nt=10)
    ga = GaConfig(population=10, generations=3, genome=GenomeConfig(max_modules=2))
    a = discover_windows(net, plan, ga)
    b = discover_windows(net, plan, ga, threads=3)
    assert a.structures == b.structures and a.stability == b.stability
    assert 0 < a.stability <= 1 and sum(a.frequencies.values()) == 3
    assert a.table()[0][0] == str(a.best)
