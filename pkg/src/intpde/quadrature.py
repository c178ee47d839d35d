"""Gauss-Legendre integration of the temporal term, boundary evaluation of the
integral-form terms, and the least-squares regression that scores a structure.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, DegenerateSystemError
from .genome import Genome, module_name, translate
from .surrogate import MlpSurrogate, derivatives

RCOND = 1e-10


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size

    def integrate(self, f, a: float, b: float):
        half = 0.5 * (b - a)
        return half * np.sum(self.weights * f(half * self.nodes + 0.5 * (a + b)))


def _legendre_and_derivative(n: int, x: np.ndarray):
    p0, p1 = np.ones_like(x), x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


def gauss_legendre(n: int) -> QuadratureRule:
    """Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].

    Newton iteration on P_n started from Chebyshev-like guesses.
    """
    if not 1 <= n <= 16:
        raise ValueError(f"rule size must be in [1, 16], got {n}")
    if n == 1:
        return QuadratureRule(np.array([0.0]), np.array([2.0]))
    i = np.arange(1, n + 1)
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(100):
        p, dp = _legendre_and_derivative(n, x)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-16:
            break
    p, dp = _legendre_and_derivative(n, x)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    # exact symmetry
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(x, w)


@dataclass(frozen=True)
class IntegralInterval:
    midpoint: float
    length: float

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("interval length must be positive")

    @property
    def left(self) -> float:
        return self.midpoint - 0.5 * self.length

    @property
    def right(self) -> float:
        return self.midpoint + 0.5 * self.length


def intervals_on_grid(x_nodes, length: float, x_range=None) -> list[IntegralInterval]:
    """One interval centred on each grid node whose interval fits inside ``x_range``."""
    x_nodes = np.asarray(x_nodes, dtype=float)
    lo, hi = (x_nodes[0], x_nodes[-1]) if x_range is None else x_range
    tol = 1e-9 * max(1.0, abs(lo), abs(hi))
    keep = (x_nodes - 0.5 * length >= lo - tol) & (x_nodes + 0.5 * length <= hi + tol)
    return [IntegralInterval(float(x), float(length)) for x in x_nodes[keep]]


def _mids_lengths(intervals):
    mids = np.array([iv.midpoint for iv in intervals], dtype=float)
    lengths = np.array([iv.length for iv in intervals], dtype=float)
    return mids, lengths


def lhs_integrals(net: MlpSurrogate, intervals, times, temporal_orders=(1, 2), rule=None) -> dict:
    """``{order: array (nt, nk)}`` of the integral of d^order u / dt^order over each interval."""
    rule = rule or gauss_legendre(5)
    mids, lengths = _mids_lengths(intervals)
    times = np.asarray(times, dtype=float)
    half = 0.5 * lengths
    xs = mids[:, None] + half[:, None] * rule.nodes[None, :]  # (nk, nl)
    xx = np.broadcast_to(xs[None], (times.size,) + xs.shape)
    tt = np.broadcast_to(times[:, None, None], xx.shape)
    vals = derivatives(net, xx, tt, [(0, o) for o in temporal_orders])
    return {o: np.einsum("jkl,l->jk", vals[(0, o)], rule.weights) * half[None, :] for o in temporal_orders}


def integrate_lhs(net: MlpSurrogate, interval: IntegralInterval, t: float, temporal_order: int = 1, rule=None) -> float:
    """(L/2) * sum_l A_l * d^order u/dt^order((L/2) x_l + x_k, t)."""
    return float(lhs_integrals(net, [interval], [t], (temporal_order,), rule)[temporal_order][0, 0])


def boundary_channels(net: MlpSurrogate, intervals, times, max_order: int):
    """Spatial derivative channels 0..max_order at the right and left interval ends.

    Returns two arrays of shape ``(max_order + 1, nt, nk)``.
    """
    mids, lengths = _mids_lengths(intervals)
    times = np.asarray(times, dtype=float)
    orders = [(a, 0) for a in range(max_order + 1)]
    out = []
    for ends in (mids + 0.5 * lengths, mids - 0.5 * lengths):
        xx = np.broadcast_to(ends[None, :], (times.size, ends.size))
        tt = np.broadcast_to(times[:, None], xx.shape)
        vals = derivatives(net, xx, tt, orders)
        out.append(np.stack([vals[o] for o in orders]))
    return out[0], out[1]


def boundary_term(net: MlpSurrogate, term, interval: IntegralInterval, t: float) -> float:
    """Product of derivative factors at the right end minus the same at the left end."""
    term = tuple(int(o) for o in term)
    right, left = boundary_channels(net, [interval], [t], max(term))
    return float(np.prod(right[list(term), 0, 0]) - np.prod(left[list(term), 0, 0]))


@dataclass(frozen=True)
class DesignMatrices:
    ut: np.ndarray  # (rows,)
    ux: np.ndarray  # (rows, n_terms)
    n_intervals: int
    n_times: int
    terms: tuple[str, ...] = ()

    def row(self, k: int, j: int) -> int:
        """Row index of interval k at time j (t-major stacking)."""
        return j * self.n_intervals + k

    @property
    def n_rows(self) -> int:
        return self.ut.size


def assemble(net: MlpSurrogate, genome: Genome, intervals, times, rule=None) -> DesignMatrices:
    """Stack the LHS integral and every module's boundary difference, t-major."""
    if not genome.is_canonical:
        raise ValueError(f"genome {genome} must be canonical before assembly")
    descriptors, _ = translate(genome)
    max_order = max(max(m) for m in descriptors)
    lhs = lhs_integrals(net, intervals, times, (genome.lhs,), rule)[genome.lhs]
    right, left = boundary_channels(net, intervals, times, max_order)
    cols = [np.prod(right[list(m)], axis=0) - np.prod(left[list(m)], axis=0) for m in descriptors]
    ux = np.stack([c.ravel() for c in cols], axis=1)
    ut = lhs.ravel()
    for name, arr in [("lhs", ut[:, None])] + [(module_name(m), c.ravel()[:, None]) for m, c in zip(descriptors, cols)]:
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            j, k = divmod(int(bad[0, 0]), len(intervals))
            raise AssemblyError(k, j, name)
    return DesignMatrices(ut, ux, len(intervals), len(times), tuple(module_name(m) for m in descriptors))


@dataclass(frozen=True)
class LstsqResult:
    beta: np.ndarray
    mse: float
    rank: int
    singular_values: np.ndarray


def least_squares(ux: np.ndarray, ut: np.ndarray, rcond: float = RCOND) -> LstsqResult:
    """Minimum-norm least squares through the SVD, relative cutoff ``rcond``."""
    ux = np.asarray(ux, dtype=float)
    ut = np.asarray(ut, dtype=float).ravel()
    if ux.ndim == 1:
        ux = ux[:, None]
    if ux.shape[0] < ux.shape[1]:
        raise ValueError("need at least as many rows as columns")
    beta, _, rank, sv = np.linalg.lstsq(ux, ut, rcond=rcond)
    if rank == 0 or sv.size == 0 or sv[0] == 0:
        raise DegenerateSystemError("all singular values fall below the cutoff")
    resid = ut - ux @ beta
    mse = float(resid @ resid) / ut.size
    if not (math.isfinite(mse) and np.all(np.isfinite(beta))):
        raise DegenerateSystemError("non-finite regression result")
    return LstsqResult(beta, mse, int(rank), sv)


def write_design_csv(dm: DesignMatrices, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "j", "lhs", *dm.terms])
        for j in range(dm.n_times):
            for k in range(dm.n_intervals):
                r = dm.row(k, j)
                w.writerow([k, j, repr(float(dm.ut[r]))] + [repr(float(v)) for v in dm.ux[r]])
