import csv

import numpy as np
import pytest
from scipy.integrate import quad

from _oracles import random_net
from intpde.errors import DegenerateSystemError
from intpde.genome import Genome, make_genome
from intpde.quadrature import (
    IntegralInterval,
    assemble,
    boundary_term,
    gauss_legendre,
    integrate_lhs,
    intervals_on_grid,
    least_squares,
    write_design_csv,
)
from intpde.surrogate import derivative, evaluate


def test_one_point_rule_is_midpoint():
    r = gauss_legendre(1)
    assert r.nodes.tolist() == [0.0] and r.weights.tolist() == [2.0]


def test_two_point_rule_closed_form():
    r = gauss_legendre(2)
    np.testing.assert_allclose(r.nodes, [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-15)
    np.testing.assert_allclose(r.weights, [1.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("n", range(1, 17))
def test_rule_matches_numpy_leggauss(n):
    r = gauss_legendre(n)
    x, w = np.polynomial.legendre.leggauss(n)
    np.testing.assert_allclose(r.nodes, x, atol=1e-14)
    np.testing.assert_allclose(r.weights, w, atol=1e-14)
    assert abs(r.weights.sum() - 2.0) < 1e-12
    assert np.all(np.diff(r.nodes) > 0)
    np.testing.assert_array_equal(r.nodes, -r.nodes[::-1])
    # roots of P_n
    assert np.max(np.abs(np.polynomial.legendre.legval(r.nodes, [0] * n + [1]))) < 1e-14


@pytest.mark.parametrize("n", [2, 5, 8])
def test_polynomial_exactness(n):
    r = gauss_legendre(n)
    for d in range(2 * n):
        exact = 0.0 if d % 2 else 2.0 / (d + 1)
        assert abs(np.sum(r.weights * r.nodes**d) - exact) < 1e-12


def test_rule_size_bounds():
    for bad in (0, 17):
        with pytest.raises(ValueError):
            gauss_legendre(bad)


def test_intervals_fit_inside_range():
    x = np.linspace(0.0, 1.0, 11)
    ivs = intervals_on_grid(x, 0.2)
    assert [round(iv.midpoint, 12) for iv in ivs] == [round(v, 12) for v in x[1:-1]]
    assert all(iv.left >= -1e-12 and iv.right <= 1 + 1e-12 for iv in ivs)
    with pytest.raises(ValueError):
        IntegralInterval(0.0, 0.0)


def test_integrate_lhs_matches_adaptive_quadrature():
    net = random_net(4)
    iv = IntegralInterval(0.1, 0.3)
    for order in (1, 2):
        ref, _ = quad(lambda x: derivative(net, x, 0.4, 0, order), iv.left, iv.right, epsabs=1e-14, epsrel=1e-12)
        got = integrate_lhs(net, iv, 0.4, order, gauss_legendre(8))
        assert got == pytest.approx(ref, rel=1e-6, abs=1e-12)


def test_interval_additivity():
    net = random_net(5)
    rule = gauss_legendre(8)
    whole = integrate_lhs(net, IntegralInterval(0.0, 0.2), 0.6, 1, rule)
    left = integrate_lhs(net, IntegralInterval(-0.06, 0.08), 0.6, 1, rule)
    right = integrate_lhs(net, IntegralInterval(0.04, 0.12), 0.6, 1, rule)
    assert abs(whole - left - right) < 1e-8


def test_boundary_term_is_difference_of_products():
    net = random_net(6)
    iv = IntegralInterval(-0.2, 0.1)
    u_r, u_l = evaluate(net, iv.right, 0.5), evaluate(net, iv.left, 0.5)
    assert boundary_term(net, (0,), iv, 0.5) == pytest.approx(u_r - u_l, rel=1e-12)
    assert boundary_term(net, (0, 0), iv, 0.5) == pytest.approx(u_r**2 - u_l**2, rel=1e-12)
    ux_r, ux_l = derivative(net, iv.right, 0.5, 1, 0), derivative(net, iv.left, 0.5, 1, 0)
    assert boundary_term(net, (0, 1), iv, 0.5) == pytest.approx(u_r * ux_r - u_l * ux_l, rel=1e-10)


def test_assemble_shape_and_row_order():
    net = random_net(0)
    ivs = [IntegralInterval(m, 0.1) for m in (-0.3, 0.0, 0.3)]
    times = [0.2, 0.7]
    dm = assemble(net, make_genome(1, [(0,)]), ivs, times)
    assert dm.ux.shape == (6, 1) and dm.ut.shape == (6,)
    assert dm.row(2, 1) == 5
    assert dm.ux[dm.row(1, 1), 0] == pytest.approx(boundary_term(net, (0,), ivs[1], 0.7), rel=1e-12)
    assert dm.ut[dm.row(0, 1)] == pytest.approx(integrate_lhs(net, ivs[0], 0.7), rel=1e-12)


def test_assemble_rejects_non_canonical_genome():
    net = random_net(0)
    with pytest.raises(ValueError):
        assemble(net, Genome(1, ((1,), (1,))), [IntegralInterval(0.0, 0.1)], [0.5])


def test_assembly_scales_with_degree():
    net = random_net(2)
    ivs = intervals_on_grid(np.linspace(-0.5, 0.5, 6), 0.2)
    g = make_genome(1, [(0,), (0, 1), (0, 0, 2)])
    a = assemble(net, g, ivs, [0.3, 0.8])
    b = assemble(net.scaled(1.7), g, ivs, [0.3, 0.8])
    np.testing.assert_allclose(b.ut, 1.7 * a.ut, rtol=1e-10)
    for col, module in enumerate(g.modules):
        np.testing.assert_allclose(b.ux[:, col], 1.7 ** len(module) * a.ux[:, col], rtol=1e-9, atol=1e-14)


def test_design_csv(tmp_path):
    net = random_net(0)
    dm = assemble(net, make_genome(1, [(0, 0), (2,)]), [IntegralInterval(0.0, 0.1)], [0.1, 0.2])
    path = tmp_path / "design.csv"
    write_design_csv(dm, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["k", "j", "lhs", "u^2", "u_xx"]
    assert len(rows) == 3


def test_least_squares_constant_column():
    r = least_squares(np.ones((5, 1)), 2 * np.ones(5))
    assert r.beta.tolist() == pytest.approx([2.0]) and r.mse == pytest.approx(0.0, abs=1e-28)


def test_least_squares_recovers_planted_coefficients():
    rng = np.random.default_rng(0)
    ux = rng.standard_normal((1000, 3))
    beta = np.array([0.5, -2.0, 3.0])
    ut = ux @ beta + 1e-6 * rng.standard_normal(1000)
    r = least_squares(ux, ut)
    assert np.max(np.abs(r.beta - beta)) < 1e-4
    # optimality: random perturbations never reduce the residual
    base = np.sum((ut - ux @ r.beta) ** 2)
    for d in rng.standard_normal((100, 3)):
        d = 1e-3 * d / np.linalg.norm(d)
        assert np.sum((ut - ux @ (r.beta + d)) ** 2) >= base


def test_least_squares_rank_deficient_is_minimum_norm():
    rng = np.random.default_rng(1)
    col = rng.standard_normal(50)
    ux = np.stack([col, col], axis=1)
    ut = 3 * col + 0.01 * rng.standard_normal(50)
    r = least_squares(ux, ut)
    np.testing.assert_allclose(r.beta, np.linalg.pinv(ux) @ ut, rtol=1e-10)
    assert r.beta[0] == pytest.approx(r.beta[1])
    single = least_squares(col[:, None], ut)
    assert r.mse == pytest.approx(single.mse, rel=1e-10)
    assert r.rank == 1


def test_least_squares_degenerate():
    with pytest.raises(DegenerateSystemError):
        least_squares(np.zeros((4, 2)), np.ones(4))
    with pytest.raises(ValueError):
        least_squares(np.ones((1, 2)), np.ones(1))
