"""Stepwise discovery for spatially varying coefficients.

First a structure is voted on across local windows, then the coefficient
series ``C_n(x)`` of the winning structure is solved globally on a uniform
meta grid with interval length ``2 dx``:

    int_{x_{k-1}}^{x_{k+1}} u_T dx = sum_n C_n(x_{k+1}) F_n(x_{k+1}, t_j) - C_n(x_{k-1}) F_n(x_{k-1}, t_j)
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DegeneratePopulationError, HeteroSolveError
from .evolution import EvolutionReport, GaConfig, evolve, integral_context
from .genome import Genome, module_name
from .quadrature import IntegralInterval, gauss_legendre, intervals_on_grid, lhs_integrals
from .surrogate import MlpSurrogate, check_range, derivatives

log = logging.getLogger(__name__)

CV_THRESHOLD = 5.0


@dataclass(frozen=True)
class WindowPlan:
    x_span: tuple[float, float]
    t_range: tuple[float, float]
    n_local: int = 10
    nx: int = 200
    nt: int = 100

    def __post_init__(self):
        if self.n_local < 1 or self.nx < 3 or self.nt < 2:
            raise ValueError(f"invalid window plan {self}")
        if not self.x_span[1] > self.x_span[0]:
            raise ValueError("empty spatial span")

    @property
    def windows(self) -> list[tuple[float, float]]:
        edges = np.linspace(self.x_span[0], self.x_span[1], self.n_local + 1)
        return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass
class StabilityReport:
    structures: list  # per window: Genome or None
    reports: list  # per window: EvolutionReport or None
    frequencies: dict
    best: Genome | None
    stability: float

    def table(self) -> list[tuple[str, int]]:
        # the voted structure leads its tie group
        order = sorted(self.frequencies.items(), key=lambda kv: (-kv[1], kv[0] != self.best, str(kv[0])))
        return [(str(g), n) for g, n in order]


def window_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, 7919, index]).generate_state(1)[0])


def discover_window(net, window, plan: WindowPlan, ga: GaConfig, length=None, rule=None) -> EvolutionReport:
    x = np.linspace(window[0], window[1], plan.nx)
    t = np.linspace(plan.t_range[0], plan.t_range[1], plan.nt)
    check_range(net, window, plan.t_range)
    length = 2 * (x[1] - x[0]) if length is None else length
    intervals = intervals_on_grid(x, length, window)
    ctx = integral_context(net, intervals, t, rule, ga.genome.max_order, ga.genome.lhs_choices)
    return evolve(ga, ctx)


def vote(structures, mean_fitness=None) -> tuple[Genome | None, float, dict]:
    """Modal structure and stability ``N_best / N_local``.

    Ties go to the structure with the lowest mean window fitness, then to the
    smallest string form.
    """
    freq = Counter(s for s in structures if s is not None)
    if not freq:
        return None, 0.0, {}
    mean_fitness = mean_fitness or {}

    def key(g):
        return (-freq[g], mean_fitness.get(g, math.inf), str(g))

    best = min(freq, key=key)
    return best, freq[best] / len(structures), dict(freq)


def discover_windows(net: MlpSurrogate, plan: WindowPlan, ga: GaConfig, length=None, rule=None,
                     threads: int = 1) -> StabilityReport:
    """Run the GA in each local window and vote on the structure.

    Each window gets a seed derived from ``ga.seed`` and its index, so the
    result does not depend on ``threads``.
    """
    for window in plan.windows:
        check_range(net, window, plan.t_range)

    def one(i_window):
        i, window = i_window
        cfg = replace(ga, seed=window_seed(ga.seed, i))
        try:
            rep = discover_window(net, window, plan, cfg, length, rule)
        except DegeneratePopulationError as exc:
            log.warning("window %s: no structure (%s)", window, exc)
            return None
        log.info("window [%.3g, %.3g] -> %s", window[0], window[1], rep.best)
        return rep

    items = list(enumerate(plan.windows))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            reports = list(pool.map(one, items))
    else:
        reports = [one(it) for it in items]
    structures = [None if r is None else r.best for r in reports]
    fits: dict = {}
    for g, rep in zip(structures, reports):
        if g is not None:
            fits.setdefault(g, []).append(rep.result.fitness)
    best, stability, freq = vote(structures, {g: float(np.mean(v)) for g, v in fits.items()})
    return StabilityReport(structures, reports, freq, best, stability)


# --------------------------------------------------------------------------
# coefficient series

@dataclass(frozen=True)
class Classification:
    kind: str  # "constant" or "heterogeneous"
    mean: float
    std: float
    cv: float  # percent; nan when the mean is exactly zero
    zero_mean: bool = False

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"


def classify(series, threshold: float = CV_THRESHOLD) -> Classification:
    """Constant when the coefficient of variation is below ``threshold`` percent."""
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        raise ValueError("empty coefficient series")
    mu = float(np.mean(s))
    sigma = float(np.std(s))
    if mu == 0.0:
        return Classification("heterogeneous", mu, sigma, math.nan, zero_mean=True)
    cv = abs(sigma / mu) * 100.0
    return Classification("constant" if cv < threshold else "heterogeneous", mu, sigma, cv)


@dataclass
class HeteroSolveResult:
    x: np.ndarray
    coefficients: np.ndarray  # (n_terms, nx)
    terms: tuple[str, ...]
    classifications: list
    support: np.ndarray  # equations touching each node
    residual_mse: float
    n_unknowns: int
    n_equations: int
    flagged_nodes: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    def summary(self) -> dict:
        return {
            "terms": list(self.terms),
            "n_unknowns": self.n_unknowns,
            "n_unknowns_interior_count": len(self.terms) * (self.x.size - 2),
            "n_equations": self.n_equations,
            "residual_mse": self.residual_mse,
            "flagged_nodes": self.flagged_nodes.tolist(),
            "stats": [
                {"term": name, "mean": c.mean, "std": c.std, "cv_percent": c.cv, "kind": c.kind, "zero_mean": c.zero_mean}
                for name, c in zip(self.terms, self.classifications)
            ],
        }


def hetero_system(lhs: np.ndarray, terms: np.ndarray):
    """Sparse least-squares system for the coefficient series.

    ``lhs`` has shape ``(nt, nx - 2)`` (integral over ``[x_{k-1}, x_{k+1}]``
    for interior k) and ``terms`` has shape ``(n_terms, nt, nx)`` with the
    term values at every node. Unknown ``n * nx + k`` is ``C_n(x_k)``.
    """
    n_terms, nt, nx = terms.shape
    if lhs.shape != (nt, nx - 2):
        raise ValueError(f"lhs shape {lhs.shape} does not match {(nt, nx - 2)}")
    k = np.arange(1, nx - 1)
    rows_per_t = nx - 2
    row = (np.arange(nt)[:, None] * rows_per_t + (k - 1)[None, :]).ravel()
    data, rr, cc = [], [], []
    for n in range(n_terms):
        rr += [row, row]
        cc += [np.broadcast_to(n * nx + k + 1, (nt, rows_per_t)).ravel(),
               np.broadcast_to(n * nx + k - 1, (nt, rows_per_t)).ravel()]
        data += [terms[n][:, k + 1].ravel(), -terms[n][:, k - 1].ravel()]
    a = sp.csr_matrix((np.concatenate(data), (np.concatenate(rr), np.concatenate(cc))),
                      shape=(nt * rows_per_t, n_terms * nx))
    return a, lhs.ravel()


def parity_components(a: sp.spmatrix) -> tuple[int, np.ndarray]:
    """Connected components of the unknown-coupling graph of an assembled system.

    Two unknowns are coupled when some equation references both. Each
    equation links only nodes k-1 and k+1, so even and odd nodes separate.
    """
    pattern = abs(sp.csr_matrix(a))
    pattern.data[:] = 1.0
    graph = (pattern.T @ pattern).tocsr()
    return connected_components(graph, directed=False)


def solve_system(a: sp.spmatrix, b: np.ndarray) -> np.ndarray:
    """Normal equations with a Cholesky solve; SVD least squares as fallback."""
    ata = (a.T @ a).toarray()
    atb = a.T @ b
    try:
        c, low = scipy.linalg.cho_factor(ata)
        sol = scipy.linalg.cho_solve((c, low), atb)
        if np.all(np.isfinite(sol)):
            return sol
    except (np.linalg.LinAlgError, ValueError):
        pass
    log.warning("normal equations not positive definite; falling back to SVD")
    sol, _, rank, sv = np.linalg.lstsq(ata, atb, rcond=1e-12)
    if rank == 0 or not np.all(np.isfinite(sol)):
        raise HeteroSolveError("coefficient system is degenerate")
    return sol


def solve_hetero_arrays(x: np.ndarray, lhs: np.ndarray, terms: np.ndarray, names=None) -> HeteroSolveResult:
    n_terms, nt, nx = terms.shape
    if nt <= n_terms:
        raise HeteroSolveError("need more time levels than terms for an overdetermined system")
    a, b = hetero_system(lhs, terms)
    sol = solve_system(a, b)
    coef = sol.reshape(n_terms, nx)
    resid = b - a @ sol
    # equations referencing each node; the two nodes at either end get half the support
    counts = np.bincount(a.indices % nx, minlength=nx) // n_terms
    if np.any(counts == 0):
        raise HeteroSolveError("some coefficients are untouched by every equation")
    names = tuple(names or (f"C{n}" for n in range(n_terms)))
    flagged = np.flatnonzero(counts < counts.max())
    return HeteroSolveResult(
        x=np.asarray(x, dtype=float), coefficients=coef, terms=names,
        classifications=[classify(c) for c in coef], support=counts,
        residual_mse=float(resid @ resid / b.size), n_unknowns=a.shape[1], n_equations=a.shape[0],
        flagged_nodes=flagged,
    )


def solve_hetero(net: MlpSurrogate, structure: Genome, x_range, t_range, nx: int = 400, nt: int = 300,
                 rule=None) -> HeteroSolveResult:
    """Recover ``C_n(x)`` on a uniform global meta grid (interval length ``2 dx``)."""
    check_range(net, x_range, t_range)
    x = np.linspace(x_range[0], x_range[1], nx)
    t = np.linspace(t_range[0], t_range[1], nt)
    dx = x[1] - x[0]
    intervals = [IntegralInterval(float(xk), 2 * dx) for xk in x[1:-1]]
    lhs = lhs_integrals(net, intervals, t, (structure.lhs,), rule or gauss_legendre(5))[structure.lhs]
    max_order = max(max(m) for m in structure.modules)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    vals = derivatives(net, xx, tt, [(a, 0) for a in range(max_order + 1)])
    channels = np.stack([vals[(a, 0)] for a in range(max_order + 1)])
    terms = np.stack([np.prod(channels[list(m)], axis=0) for m in structure.modules])
    return solve_hetero_arrays(x, lhs, terms, [module_name(m) for m in structure.modules])


def write_series(result: HeteroSolveResult, path) -> None:
    """Coefficient series CSV plus ``<path>.json`` summary."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"C{n}({name})" for n, name in enumerate(result.terms)])
        for k, xk in enumerate(result.x):
            w.writerow([repr(float(xk))] + [repr(float(c)) for c in result.coefficients[:, k]])
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(result.summary(), fh, indent=1)
