import numpy as np
import pytest

from intpde.errors import CflError, UnsupportedStructureError
from intpde.genome import parse_genome
from intpde.pdegen import (
    GridDataset,
    NoiseSpec,
    SampleSet,
    add_noise,
    all_samples,
    read_dataset,
    relative_l2_percent,
    solution_error,
    solve_boussinesq,
    solve_convdiff,
    solve_kdv,
    solve_ks,
    solve_periodic,
    solve_wave,
    subsample,
    write_dataset,
)


@pytest.fixture(scope="module")
def small_kdv():
    return solve_kdv(nx=128, nt=21, t_end=0.2)


def test_kdv_grid_and_initial_state(small_kdv):
    ds = small_kdv
    assert ds.shape == (128, 21) and ds.x[0] == -1.0 and ds.x[-1] < 1.0
    np.testing.assert_allclose(ds.u[:, 0], np.cos(np.pi * ds.x), atol=1e-15)
    assert ds.params["scheme"] == "fourier-etdrk4"


def test_periodic_heat_decay_matches_closed_form():
    x = np.arange(64) / 64
    t = np.linspace(0, 0.1, 6)
    u = solve_periodic([(0.3, (2,))], np.sin(2 * np.pi * x), 1.0, t, 1e-3)
    exact = np.sin(2 * np.pi * x)[:, None] * np.exp(-0.3 * (2 * np.pi) ** 2 * t)[None, :]
    np.testing.assert_allclose(u, exact, atol=1e-12)


def test_periodic_advection_is_a_shift():
    x = 2 * np.arange(128) / 128 - 1
    u = solve_periodic([(-0.5, (1,))], np.cos(np.pi * x), 2.0, np.array([0.0, 0.4]), 1e-2)
    np.testing.assert_allclose(u[:, 1], np.cos(np.pi * (x - 0.2)), atol=1e-12)


def test_kdv_invariants_conserved(small_kdv):
    dx = small_kdv.x[1] - small_kdv.x[0]
    mass = small_kdv.u.sum(axis=0) * dx
    energy = (small_kdv.u**2).sum(axis=0) * dx
    assert np.ptp(mass) < 1e-10
    assert np.ptp(energy) / energy[0] < 1e-5


def test_kdv_time_step_convergence():
    a = solve_kdv(nx=128, nt=11, t_end=0.2, dt=1e-3).u
    b = solve_kdv(nx=128, nt=11, t_end=0.2, dt=5e-4).u
    assert relative_l2_percent(b, a) / 100 < 1e-6


def test_ks_walls_and_odd_extension():
    ds = solve_ks(nx=64, nt=6, t_end=1.0)
    assert ds.shape == (64, 6) and ds.x[0] == -10.0 and ds.x[-1] == 10.0
    assert np.all(ds.u[0] == 0.0) and np.all(ds.u[-1] == 0.0)
    np.testing.assert_allclose(ds.u[:, 0], np.sin(-np.pi * ds.x / 10), atol=1e-15)
    # sin is an eigenfunction of the linear part: u_xx + u_xxxx = (k^4 - k^2) sin
    lin = solve_ks(nx=64, nt=3, t_end=0.2, terms=[(-1.0, (2,)), (-1.0, (4,))])
    k = np.pi / 10
    np.testing.assert_allclose(lin.u[:, -1], lin.u[:, 0] * np.exp((k**2 - k**4) * 0.2), atol=1e-12)


def test_convdiff_constant_coefficients_decay_mode():
    # u = sin(pi x / L) is an eigenmode when v = 0
    L = 8.0
    ds = solve_convdiff(0.5, v=0.0, nx=401, nt=11, t_end=1.0, u0=lambda s: np.sin(np.pi * s / L))
    rate = 0.5 * (np.pi / L) ** 2
    exact = np.sin(np.pi * ds.x / L)[:, None] * np.exp(-rate * ds.t)[None, :]
    np.testing.assert_allclose(ds.u, exact, atol=1e-5)
    assert ds.u[0].max() == 0.0 and ds.u[-1].max() == 0.0


def test_convdiff_frozen_without_transport():
    ds = solve_convdiff(0.0, v=0.0, nx=81, nt=5)
    assert np.all(ds.u == ds.u[:, :1])


def test_default_dataset_sizes():
    assert solve_kdv().size == 102_912
    assert solve_convdiff(lambda x: 1 + 0 * x).size == 201_051
    assert solve_wave(1.0).size == 100_651
    assert solve_boussinesq(1.0).size == 100_651


@pytest.mark.parametrize("solver", ["convdiff", "wave", "boussinesq", "ks"])
def test_time_step_halving(solver):
    ea = lambda x: np.exp(0.5 * np.sin(x))
    run = {
        "convdiff": lambda dt: solve_convdiff(ea, nx=201, nt=11, t_end=1.0, dt=dt),
        "wave": lambda dt: solve_wave(ea, nx=101, nt=11, t_end=2.0, dt=dt),
        "boussinesq": lambda dt: solve_boussinesq(lambda x: 1 + x, nx=101, nt=11, t_end=0.5, dt=dt),
        "ks": lambda dt: solve_ks(nx=128, nt=11, t_end=5.0, dt=dt),
    }[solver]
    dt = {"convdiff": 5e-4, "wave": 2e-3, "boussinesq": 5e-5, "ks": 4e-3}[solver]
    a, b = run(dt).u, run(dt / 2).u
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-4


def test_convdiff_default_initial_state_and_field_params():
    ds = solve_convdiff(lambda x: 1 + 0 * x, nx=81, nt=3, t_end=0.1)
    np.testing.assert_allclose(ds.u[1:-1, 0], ((8 - ds.x) * np.sin(ds.x))[1:-1])
    assert ds.params["v"] == -1.0


def test_wave_standing_mode_constant_stiffness():
    c = 1.5
    ds = solve_wave(c**2, nt=26, u0=lambda s: np.sin(np.pi * s / 8))
    exact = np.sin(np.pi * ds.x / 8)[:, None] * np.cos(c * np.pi * ds.t / 8)[None, :]
    np.testing.assert_allclose(ds.u, exact, atol=1e-3)


def test_wave_energy_drift_below_one_percent():
    ea = lambda x: np.exp(0.5 * np.sin(x))
    ds = solve_wave(ea, nt=601)
    dx, dt = ds.x[1] - ds.x[0], ds.t[1] - ds.t[0]
    ut = np.gradient(ds.u, dt, axis=1, edge_order=2)
    xh = 0.5 * (ds.x[1:] + ds.x[:-1])
    ux = np.diff(ds.u, axis=0) / dx
    e = 0.5 * (ut**2).sum(axis=0) * dx + 0.5 * (ea(xh)[:, None] * ux**2).sum(axis=0) * dx
    assert np.ptp(e) / e[0] < 1e-2


def test_variable_field_self_convergence():
    ea = lambda x: np.exp(0.3 * np.sin(x))
    coarse = solve_wave(ea, nx=101, nt=5, t_end=2.0)
    mid = solve_wave(ea, nx=201, nt=5, t_end=2.0)
    fine = solve_wave(ea, nx=401, nt=5, t_end=2.0)
    e1 = np.max(np.abs(coarse.u - fine.u[::4]))
    e2 = np.max(np.abs(mid.u - fine.u[::2]))
    assert e1 / e2 > 3.0  # second order in space


def test_cfl_violation_reports_suggestion():
    with pytest.raises(CflError) as info:
        solve_wave(1.0, nx=401, nt=5, t_end=1.0, dt=0.1)
    assert info.value.suggested_dt < 0.1


def test_boussinesq_frozen_when_k_zero():
    ds = solve_boussinesq(0.0, nx=51, nt=4)
    assert np.all(ds.u == ds.u[:, :1])


def test_boussinesq_spreads_and_stays_positive():
    ds = solve_boussinesq(lambda x: 1 + x, nx=101, nt=11, t_end=0.2)
    assert ds.u.min() >= -1e-8
    assert ds.u[:, -1].max() < ds.u[:, 0].max()


def test_grid_dataset_validation():
    with pytest.raises(ValueError):
        GridDataset(np.arange(3.0), np.arange(2.0), np.zeros((2, 3)), "x")
    with pytest.raises(ValueError):
        GridDataset(np.arange(3.0), np.arange(2.0), np.full((3, 2), np.nan), "x")


def test_noise_model(small_kdv):
    same = add_noise(small_kdv, NoiseSpec(0.0, seed=3))
    np.testing.assert_array_equal(same.u, small_kdv.u)
    noisy = add_noise(small_kdv, NoiseSpec(0.1, seed=3))
    rel = np.abs(noisy.u - small_kdv.u)
    assert np.all(rel <= 0.1 * np.abs(small_kdv.u) + 1e-15)
    assert noisy.gamma == 0.1
    again = add_noise(small_kdv, NoiseSpec(0.1, seed=3))
    np.testing.assert_array_equal(noisy.u, again.u)
    with pytest.raises(ValueError):
        NoiseSpec(-0.1)


def test_subsample(small_kdv):
    s = subsample(small_kdv, 500, seed=2)
    assert len(s) == 500
    assert len(set(zip(s.x.tolist(), s.t.tolist()))) == 500
    assert np.array_equal(subsample(small_kdv, 500, seed=2).u, s.u)
    assert len(all_samples(small_kdv)) == small_kdv.size
    with pytest.raises(ValueError):
        subsample(small_kdv, small_kdv.size + 1)
    with pytest.raises(ValueError):
        SampleSet([2.0], [0.0], [1.0], (0.0, 1.0, 0.0, 1.0))


def test_csv_round_trip_bit_exact(tmp_path, small_kdv):
    path = tmp_path / "kdv.csv"
    write_dataset(small_kdv, path)
    back = read_dataset(path)
    np.testing.assert_array_equal(back.u, small_kdv.u)
    np.testing.assert_array_equal(back.x, small_kdv.x)
    assert back.pde == "kdv" and back.params == small_kdv.params
    (tmp_path / "kdv.csv.json").unlink()
    bare = read_dataset(path)
    np.testing.assert_allclose(bare.x, small_kdv.x, atol=1e-14)


def test_solution_error_truth_vs_perturbed(small_kdv):
    g = parse_genome("[1],{[0,0],[2]}")
    truth = solution_error(small_kdv, g, [-0.5, -0.0025])
    off = solution_error(small_kdv, g, [-1.0, -0.005])
    assert truth < 1e-6 and off > 1.0
    diff_form = solution_error(small_kdv, parse_genome("[1],{[0,1],[3]}"), [-1.0, -0.0025], integral=False)
    assert diff_form == pytest.approx(truth, abs=1e-9)


def test_solution_error_refuses_unsupported():
    wave = solve_wave(1.0, nx=41, nt=3, t_end=0.1)
    with pytest.raises(UnsupportedStructureError):
        solution_error(wave, parse_genome("[1],{[1]}"), [1.0])
    with pytest.raises(UnsupportedStructureError):
        solution_error(wave, parse_genome("[2],{[1]}"), [1.0])
