"""Reference forward solvers, noise model, subsampling and posterior error.

Grids are stored ``u[i, j] = u(x_i, t_j)`` (shape ``(nx, nt)``).

Periodic problems (KdV, and KS through its odd extension) use a Fourier
pseudo-spectral discretisation with exponential time differencing (ETDRK4).
The divergence-form problems use conservative second-order finite differences
on the half-node fluxes with explicit time stepping.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CflError, InstabilityError, UnsupportedStructureError
from .genome import Genome, integral_to_differential

log = logging.getLogger(__name__)

BLOWUP = 1e3


@dataclass(frozen=True)
class GridDataset:
    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    pde: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    gamma: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        t = np.asarray(self.t, dtype=float)
        u = np.asarray(self.u, dtype=float)
        if u.shape != (x.size, t.size):
            raise ValueError(f"u has shape {u.shape}, expected {(x.size, t.size)}")
        if not np.all(np.isfinite(u)):
            raise ValueError("dataset contains non-finite values")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("grids must be strictly increasing")
        for name, arr in (("x", x), ("t", t), ("u", u)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.u.shape

    @property
    def size(self) -> int:
        return self.u.size


@dataclass(frozen=True)
class NoiseSpec:
    gamma: float
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("noise level must be non-negative")


@dataclass(frozen=True)
class SampleSet:
    """Scattered observations with declared domain bounds."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    bounds: tuple[float, float, float, float]

    def __post_init__(self):
        x, t, u = (np.asarray(a, dtype=float).ravel() for a in (self.x, self.t, self.u))
        if not (x.size == t.size == u.size) or x.size == 0:
            raise ValueError("sample arrays must be nonempty and of equal length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t)) and np.all(np.isfinite(u))):
            raise ValueError("samples must be finite")
        x0, x1, t0, t1 = self.bounds
        if not (x0 < x1 and t0 < t1):
            raise ValueError(f"degenerate bounds {self.bounds}")
        if x.min() < x0 or x.max() > x1 or t.min() < t0 or t.max() > t1:
            raise ValueError("samples fall outside the declared bounds")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))

    def __len__(self):
        return self.x.size


# --------------------------------------------------------------------------
# pseudo-spectral machinery

def _etdrk4_coefficients(lin: np.ndarray, h: float, m: int = 64):
    roots = np.exp(2j * np.pi * (np.arange(1, m + 1) - 0.5) / m)
    lr = h * lin[:, None] + roots[None, :]
    e_lr = np.exp(lr)
    q = h * np.mean((np.exp(lr / 2) - 1) / lr, axis=1)
    f1 = h * np.mean((-4 - lr + e_lr * (4 - 3 * lr + lr**2)) / lr**3, axis=1)
    f2 = h * np.mean((2 + lr + e_lr * (-2 + lr)) / lr**3, axis=1)
    f3 = h * np.mean((-4 - 3 * lr - lr**2 + e_lr * (4 - lr)) / lr**3, axis=1)
    if np.all(np.isreal(lin)):
        q, f1, f2, f3 = q.real, f1.real, f2.real, f3.real
    return np.exp(h * lin), np.exp(h * lin / 2), q, f1, f2, f3


def solve_periodic(
    terms,
    u0: np.ndarray,
    period: float,
    record_times: np.ndarray,
    dt: float,
    odd_symmetric: bool = False,
) -> np.ndarray:
    """Integrate ``u_t = sum c * prod(d^o u)`` on a periodic grid with ETDRK4.

    ``terms`` is a list of ``(coefficient, orders)``; single-factor terms are
    treated exactly in the linear operator. Returns ``(n, len(record_times))``.
    With ``odd_symmetric`` the real part of the spectrum is zeroed every step,
    keeping the solution odd about ``x = 0`` of the supplied grid.
    """
    n = u0.size
    k = 2 * np.pi / period * np.fft.rfftfreq(n, 1.0 / n)
    ik = 1j * k
    ik_odd = ik.copy()
    if n % 2 == 0:
        ik_odd[-1] = 0.0  # Nyquist mode of an odd derivative

    def dmult(order):
        return (ik_odd if order % 2 else ik) ** order

    lin = np.zeros(k.size, dtype=complex)
    nonlinear = []
    for coef, orders in terms:
        if len(orders) == 1:
            lin += coef * dmult(orders[0])
        else:
            nonlinear.append((coef, tuple(orders)))
    if np.allclose(lin.imag, 0):
        lin = lin.real

    needed = sorted({o for _, orders in nonlinear for o in orders})
    mults = {o: dmult(o) for o in needed}

    def nl(v_hat):
        if not nonlinear:
            return np.zeros_like(v_hat, dtype=complex)
        fields = {o: np.fft.irfft(mults[o] * v_hat, n) for o in needed}
        total = np.zeros(n)
        for coef, orders in nonlinear:
            prod = coef * fields[orders[0]]
            for o in orders[1:]:
                prod = prod * fields[o]
            total += prod
        return np.fft.rfft(total)

    record_times = np.asarray(record_times, dtype=float)
    out = np.empty((n, record_times.size))
    t_now = record_times[0]
    v = np.fft.rfft(np.asarray(u0, dtype=float))
    out[:, 0] = u0
    cache = {}
    for r in range(1, record_times.size):
        span = record_times[r] - t_now
        steps = max(1, int(np.ceil(span / dt - 1e-9)))
        h = span / steps
        key = round(h, 15)
        if key not in cache:
            cache[key] = _etdrk4_coefficients(lin, h)
        e, e2, q, f1, f2, f3 = cache[key]
        for _ in range(steps):
            nv = nl(v)
            a = e2 * v + q * nv
            na = nl(a)
            b = e2 * v + q * na
            nb = nl(b)
            c = e2 * a + q * (2 * nb - nv)
            nc = nl(c)
            v = e * v + nv * f1 + 2 * (na + nb) * f2 + nc * f3
            if odd_symmetric:
                v = 1j * v.imag
        t_now = record_times[r]
        u = np.fft.irfft(v, n)
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > BLOWUP:
            raise InstabilityError(f"solution blew up before t={t_now:g}")
        out[:, r] = u
    return out


def solve_kdv(
    nx: int = 512,
    nt: int = 201,
    t_end: float = 1.0,
    dispersion: float = 0.0025,
    dt: float = 2.5e-4,
) -> GridDataset:
    """u_t = -u u_x - dispersion u_xxx, x in [-1, 1) periodic, u(0, x) = cos(pi x)."""
    x = -1.0 + 2.0 * np.arange(nx) / nx
    t = np.linspace(0.0, t_end, nt)
    terms = [(-1.0, (0, 1)), (-dispersion, (3,))]
    u = solve_periodic(terms, np.cos(np.pi * x), 2.0, t, dt)
    params = {"dispersion": dispersion, "dt_internal": dt, "scheme": "fourier-etdrk4", "modes": nx}
    return GridDataset(x, t, u, "kdv", params)


def _ks_grid(nx: int):
    n_fine = 2 * nx - 1
    xf = np.linspace(-10.0, 10.0, n_fine)
    return xf, 40.0


def _odd_extend(u_fine: np.ndarray) -> np.ndarray:
    return np.concatenate([u_fine, -u_fine[-2:0:-1]])


def solve_ks(nx: int = 512, nt: int = 251, t_end: float = 50.0, dt: float = 2e-3, terms=None) -> GridDataset:
    """u_t = -u u_x - u_xx - u_xxxx on [-10, 10], u = u_xx = 0 at both ends.

    Solved on a ``2*nx - 1`` point fine grid (odd periodic extension about the
    walls), then every other fine point is recorded.
    """
    xf, period = _ks_grid(nx)
    t = np.linspace(0.0, t_end, nt)
    if terms is None:
        terms = [(-1.0, (0, 1)), (-1.0, (2,)), (-1.0, (4,))]
    u0 = _odd_extend(np.sin(-np.pi * xf / 10.0))
    u0[0] = 0.0
    ext = solve_periodic(terms, u0, period, t, dt, odd_symmetric=True)
    fine = ext[: xf.size]
    fine[0] = fine[-1] = 0.0
    params = {"dt_internal": dt, "scheme": "sine-etdrk4", "fine_points": xf.size}
    return GridDataset(xf[::2], t, fine[::2], "ks", params)


# --------------------------------------------------------------------------
# finite-difference divergence-form solvers

def _field_on(field, x):
    if callable(field):
        vals = np.asarray(field(x), dtype=float)
        return np.broadcast_to(vals, x.shape).astype(float)
    arr = np.asarray(field, dtype=float)
    if arr.ndim == 0:
        return np.full(x.shape, float(arr))
    raise TypeError("field must be callable or scalar; sample arrays with a callable")


def _field_params(field):
    if callable(field):
        describe = getattr(field, "describe", None)
        return describe() if describe else {"callable": getattr(field, "__name__", repr(field))}
    return float(field)


def _record_plan(t_end, nt, dt_max, dt=None, min_substeps=1):
    t = np.linspace(0.0, t_end, nt)
    rec = t[1] - t[0]
    if dt is None:
        dt = min(0.5 * dt_max, rec / min_substeps)
    elif dt > dt_max:
        raise CflError(dt, dt_max)
    sub = max(1, int(np.ceil(rec / dt - 1e-9)))
    return t, rec / sub, sub


RK4_REAL_LIMIT = 2.785


def _rk4_integrate(rhs, u0, sub, h, nt, check):
    u = u0.copy()
    out = np.empty((u.size, nt))
    out[:, 0] = u
    for r in range(1, nt):
        for _ in range(sub):
            k1 = rhs(u)
            k2 = rhs(u + 0.5 * h * k1)
            k3 = rhs(u + 0.5 * h * k2)
            k4 = rhs(u + h * k3)
            u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        check(u, r)
        out[:, r] = u
    return out


def _blowup_check(u, r):
    if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > BLOWUP:
        raise InstabilityError(f"solution blew up before record {r}")


def solve_convdiff(
    D,
    v: float = -1.0,
    nx: int = 801,
    nt: int = 251,
    length: float = 8.0,
    t_end: float = 2.5,
    dt: float | None = None,
    u0: Callable | None = None,
) -> GridDataset:
    """u_t = d/dx (D(x) u_x + v u) with u = 0 at both ends.

    Initial condition defaults to ``(8 - x) sin(x)``. ``D`` is a callable of x
    (evaluated at half nodes) or a scalar.
    """
    x = np.linspace(0.0, length, nx)
    dx = x[1] - x[0]
    xh = 0.5 * (x[1:] + x[:-1])
    dh = _field_on(D, xh)
    if np.any(dh < 0):
        raise ValueError("diffusivity must be non-negative")
    rho = np.max(dh[1:] + dh[:-1]) * 2 / dx**2 + abs(v) / dx
    dt_max = RK4_REAL_LIMIT / rho if rho > 0 else np.inf
    t, h, sub = _record_plan(t_end, nt, dt_max if np.isfinite(dt_max) else t_end, dt)
    init = (lambda s: (8.0 - s) * np.sin(s)) if u0 is None else u0
    start = np.asarray(init(x), dtype=float)
    start[0] = start[-1] = 0.0

    def rhs(u):
        flux = dh * (u[1:] - u[:-1]) / dx + v * 0.5 * (u[1:] + u[:-1])
        du = np.zeros_like(u)
        du[1:-1] = (flux[1:] - flux[:-1]) / dx
        return du

    u = _rk4_integrate(rhs, start, sub, h, nt, _blowup_check)
    params = {"D": _field_params(D), "v": v, "dt_internal": h, "scheme": "fd-flux-rk4"}
    return GridDataset(x, t, u, "convdiff", params)


def solve_wave(
    EA,
    nx: int = 401,
    nt: int = 251,
    length: float = 8.0,
    t_end: float = 6.0,
    dt: float | None = None,
    u0: Callable | None = None,
) -> GridDataset:
    """u_tt = d/dx (EA(x) u_x), fixed ends, zero initial velocity.

    Default initial shape ``0.5 sin(pi x / 4)``. Leapfrog in time on the
    conservative half-node stencil.
    """
    x = np.linspace(0.0, length, nx)
    dx = x[1] - x[0]
    xh = 0.5 * (x[1:] + x[:-1])
    eah = _field_on(EA, xh)
    if np.any(eah <= 0):
        raise ValueError("stiffness must be positive")
    omega2 = np.max(eah[1:] + eah[:-1]) * 2 / dx**2
    dt_max = 2.0 / np.sqrt(omega2)
    # leapfrog is only second order: default to ~1000 steps per record
    t, h, sub = _record_plan(t_end, nt, dt_max, dt, min_substeps=1000)
    init = (lambda s: 0.5 * np.sin(np.pi * s / 4.0)) if u0 is None else u0
    u_now = np.asarray(init(x), dtype=float)
    u_now[0] = u_now[-1] = 0.0

    def accel(u):
        flux = eah * (u[1:] - u[:-1]) / dx
        a = np.zeros_like(u)
        a[1:-1] = (flux[1:] - flux[:-1]) / dx
        return a

    out = np.empty((nx, nt))
    out[:, 0] = u_now
    u_prev = u_now + 0.5 * h * h * accel(u_now)  # zero initial velocity: Taylor step back
    for r in range(1, nt):
        for _ in range(sub):
            u_next = 2 * u_now - u_prev + h * h * accel(u_now)
            u_prev, u_now = u_now, u_next
        _blowup_check(u_now, r)
        out[:, r] = u_now
    params = {"EA": _field_params(EA), "dt_internal": h, "scheme": "fd-flux-leapfrog"}
    return GridDataset(x, t, out, "wave", params)


def solve_boussinesq(
    K,
    nx: int = 401,
    nt: int = 251,
    t_end: float = 1.0,
    dt: float | None = None,
) -> GridDataset:
    """u_t = d/dx (K(x) u u_x) on [0, 1], u(0, x) = x sin(pi x), u = 0 at the ends.

    Homogeneous Dirichlet data at both ends.
    """
    x = np.linspace(0.0, 1.0, nx)
    dx = x[1] - x[0]
    xh = 0.5 * (x[1:] + x[:-1])
    kh = _field_on(K, xh)
    if np.any(kh < 0):
        raise ValueError("permeability must be non-negative")
    start = x * np.sin(np.pi * x)
    start[0] = start[-1] = 0.0
    umax = np.max(np.abs(start))
    rho = np.max(kh[1:] + kh[:-1]) * 2 * umax / dx**2
    dt_max = RK4_REAL_LIMIT / rho if rho > 0 else t_end
    t, h, sub = _record_plan(t_end, nt, dt_max, dt)

    def rhs(u):
        flux = kh * 0.5 * (u[1:] + u[:-1]) * (u[1:] - u[:-1]) / dx
        du = np.zeros_like(u)
        du[1:-1] = (flux[1:] - flux[:-1]) / dx
        return du

    def check(u, r):
        _blowup_check(u, r)
        if u.min() < -1e-8:
            raise InstabilityError(f"solution went negative before record {r}")

    u = _rk4_integrate(rhs, start, sub, h, nt, check)
    params = {"K": _field_params(K), "dt_internal": h, "scheme": "fd-flux-rk4"}
    return GridDataset(x, t, u, "boussinesq", params)


# --------------------------------------------------------------------------
# data perturbation

def add_noise(dataset: GridDataset, spec: NoiseSpec) -> GridDataset:
    """Multiplicative noise u * (1 + gamma * e), e ~ U(-1, 1)."""
    rng = np.random.default_rng(spec.seed)
    e = rng.uniform(-1.0, 1.0, size=dataset.u.shape)
    params = dict(dataset.params)
    params["noise_seed"] = spec.seed
    return GridDataset(
        dataset.x, dataset.t, dataset.u * (1.0 + spec.gamma * e), dataset.pde, params, dataset.seed, spec.gamma
    )


def subsample(dataset: GridDataset, n: int, seed: int = 0) -> SampleSet:
    """Uniform sample of ``n`` distinct grid points."""
    total = dataset.size
    if not 1 <= n <= total:
        raise ValueError(f"sample size must be in [1, {total}], got {n}")
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.choice(total, size=n, replace=False))
    i, j = np.unravel_index(flat, dataset.u.shape)
    bounds = (dataset.x[0], dataset.x[-1], dataset.t[0], dataset.t[-1])
    return SampleSet(dataset.x[i], dataset.t[j], dataset.u[i, j], bounds)


def all_samples(dataset: GridDataset) -> SampleSet:
    xx, tt = np.meshgrid(dataset.x, dataset.t, indexing="ij")
    bounds = (dataset.x[0], dataset.x[-1], dataset.t[0], dataset.t[-1])
    return SampleSet(xx.ravel(), tt.ravel(), dataset.u.ravel(), bounds)


# --------------------------------------------------------------------------
# posterior error

def relative_l2_percent(u_ref: np.ndarray, u_new: np.ndarray) -> float:
    return float(np.linalg.norm(u_ref - u_new) / np.linalg.norm(u_ref) * 100.0)


def solve_terms(reference: GridDataset, terms) -> np.ndarray:
    """Re-solve ``u_t = sum c * prod(d^o u)`` from the reference initial state.

    ``terms`` is a list of ``(coefficient, module)`` pairs in differential form.
    A solution that blows up is returned as an array of ``inf``.
    """
    terms = [(float(c), tuple(m)) for c, m in terms]
    try:
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up is detected and reported below
            return _resolve(reference, terms)
    except InstabilityError:
        return np.full(reference.u.shape, np.inf)


def _resolve(reference: GridDataset, terms) -> np.ndarray:
    if reference.pde == "kdv":
        dt = reference.params.get("dt_internal", 2.5e-4)
        period = (reference.x[1] - reference.x[0]) * reference.x.size
        return solve_periodic(terms, reference.u[:, 0], period, reference.t, dt)
    if reference.pde == "ks":
        return solve_ks(reference.x.size, reference.t.size, reference.t[-1],
                        reference.params.get("dt_internal", 2e-3), terms).u
    raise UnsupportedStructureError(f"no re-solver for dataset {reference.pde!r}")


def solve_discovered(reference: GridDataset, genome: Genome, coefficients, integral: bool = True) -> np.ndarray:
    """Re-solve a discovered constant-coefficient PDE on the reference grid."""
    if genome.lhs != 1:
        raise UnsupportedStructureError("only first-order-in-time structures can be re-solved")
    if integral:
        terms = integral_to_differential(genome, coefficients)
    else:
        terms = list(zip(coefficients, genome.modules))
    return solve_terms(reference, terms)


def solution_error(reference: GridDataset, genome: Genome, coefficients, integral: bool = True) -> float:
    """Relative L2 discrepancy (percent) between reference and re-solved field."""
    u_new = solve_discovered(reference, genome, coefficients, integral)
    if not np.all(np.isfinite(u_new)):
        return float("inf")
    return relative_l2_percent(reference.u, u_new)


# --------------------------------------------------------------------------
# file formats

def _header(ds: GridDataset) -> str:
    dx = float(ds.x[1] - ds.x[0]) if ds.x.size > 1 else 0.0
    dt = float(ds.t[1] - ds.t[0]) if ds.t.size > 1 else 0.0
    return (
        f"# pde={ds.pde} nx={ds.x.size} nt={ds.t.size} x0={float(ds.x[0])!r} dx={dx!r} "
        f"t0={float(ds.t[0])!r} dt={dt!r} seed={ds.seed} gamma={float(ds.gamma)!r}"
    )


def write_dataset(ds: GridDataset, path) -> None:
    """CSV: header line, then one line per time of comma-separated values (17 sig. digits).

    A JSON sidecar ``<path>.json`` carries the full provenance and exact grids.
    """
    path = Path(path)
    lines = [_header(ds)]
    for j in range(ds.t.size):
        lines.append(",".join(f"{v:.17g}" for v in ds.u[:, j]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    sidecar = {
        "pde": ds.pde, "params": ds.params, "seed": ds.seed, "gamma": ds.gamma,
        "x": ds.x.tolist(), "t": ds.t.tolist(),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1), encoding="utf-8")


def read_dataset(path) -> GridDataset:
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    meta = dict(item.split("=", 1) for item in text[0].lstrip("# ").split())
    nx, nt = int(meta["nx"]), int(meta["nt"])
    u = np.array([[float(v) for v in line.split(",")] for line in text[1 : 1 + nt]]).T
    sidecar_path = Path(str(path) + ".json")
    if sidecar_path.exists():
        side = json.loads(sidecar_path.read_text(encoding="utf-8"))
        x, t, params = np.array(side["x"]), np.array(side["t"]), side["params"]
    else:
        x = float(meta["x0"]) + float(meta["dx"]) * np.arange(nx)
        t = float(meta["t0"]) + float(meta["dt"]) * np.arange(nt)
        params = {}
    return GridDataset(x, t, u, meta["pde"], params, int(meta["seed"]), float(meta["gamma"]))
