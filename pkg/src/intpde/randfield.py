"""Karhunen-Loeve expansion of a 1-D Gaussian field with exponential covariance.

``C(x, y) = var * exp(-|x - y| / eta)`` on ``[0, L]`` has closed-form
eigenpairs. The sampled log-field R(x) is exponentiated to give a positive
coefficient field, ``K(x) = exp(R(x))``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import RootSearchError


@dataclass(frozen=True)
class KleSpec:
    length: float
    eta: float | None = None  # correlation length; defaults to 0.4 * length
    variance: float = 1.0
    n_modes: int = 12
    mean: float = 0.0
    seed: int = 0
    origin: float = 0.0

    def __post_init__(self):
        if self.eta is None:
            object.__setattr__(self, "eta", 0.4 * self.length)
        if not (self.length > 0 and self.eta > 0 and self.variance >= 0):
            raise ValueError(f"invalid KLE spec {self}")
        if self.n_modes < 1:
            raise ValueError("need at least one mode")


def char_residual(omega, eta: float, length: float):
    omega = np.asarray(omega, dtype=float)
    return (eta**2 * omega**2 - 1) * np.sin(omega * length) - 2 * eta * omega * np.cos(omega * length)


def char_roots(eta: float, length: float, n: int, samples_per_pi: int = 64) -> np.ndarray:
    """The ``n`` smallest positive roots of the characteristic equation.

    Sign changes are bracketed on a uniform scan and refined with Brent's
    method. The scan range is doubled once if too few roots are found.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    upper = (n + 1) * np.pi / length
    for _ in range(2):
        grid = np.linspace(0.0, upper, (n + 1) * samples_per_pi + 1)[1:]
        vals = char_residual(grid, eta, length)
        roots = []
        for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
            if fa == 0.0:
                roots.append(a)
            elif fa * fb < 0:
                roots.append(brentq(char_residual, a, b, args=(eta, length), xtol=1e-15, rtol=1e-15, maxiter=200))
            if len(roots) == n:
                return np.array(roots)
        upper *= 2
    raise RootSearchError(f"found only {len(roots)} of {n} roots")


def eigenvalue(omega, eta: float, variance: float):
    return 2 * eta * variance / (eta**2 * np.asarray(omega) ** 2 + 1)


def eigenfunction(x, omega: float, eta: float, length: float):
    norm = np.sqrt((eta**2 * omega**2 + 1) * length / 2 + eta)
    x = np.asarray(x, dtype=float)
    return (eta * omega * np.cos(omega * x) + np.sin(omega * x)) / norm


def eigenpair(i: int, spec: KleSpec):
    """(lambda_i, omega_i) for the 1-based mode index ``i``."""
    if not 1 <= i <= spec.n_modes:
        raise ValueError(f"mode index must be in [1, {spec.n_modes}]")
    omega = char_roots(spec.eta, spec.length, i)[-1]
    return float(eigenvalue(omega, spec.eta, spec.variance)), float(omega)


def energy_fraction(spec: KleSpec) -> float:
    """Share of the total variance ``var * L`` kept by the first ``n_modes`` modes."""
    if spec.variance == 0:
        return 1.0
    omegas = char_roots(spec.eta, spec.length, spec.n_modes)
    return float(np.sum(eigenvalue(omegas, spec.eta, spec.variance)) / (spec.variance * spec.length))


@dataclass(frozen=True, eq=False)
class KleField:
    spec: KleSpec
    omegas: np.ndarray
    eigenvalues: np.ndarray
    xi: np.ndarray = field(repr=False)

    def log_field(self, x):
        s = self.spec
        local = np.asarray(x, dtype=float) - s.origin
        r = np.full(local.shape, float(s.mean))
        for lam, om, xi in zip(self.eigenvalues, self.omegas, self.xi):
            r = r + np.sqrt(lam) * eigenfunction(local, om, s.eta, s.length) * xi
        return r

    def __call__(self, x):
        return np.exp(self.log_field(x))

    def describe(self) -> dict:
        d = dict(vars(self.spec))
        d["kind"] = "kle-lognormal"
        return d


def polar_normals(rng: np.random.Generator, n: int) -> np.ndarray:
    """Standard normals by Marsaglia's polar method on ``rng.random()`` pairs.

    Fixed here so field realizations depend only on the uniform stream.
    """
    out = []
    while len(out) < n:
        v1, v2 = 2.0 * rng.random(2) - 1.0
        s = v1 * v1 + v2 * v2
        if s >= 1.0 or s == 0.0:
            continue
        f = np.sqrt(-2.0 * np.log(s) / s)
        out.extend((v1 * f, v2 * f))
    return np.array(out[:n])


def sample_field(spec: KleSpec) -> KleField:
    """Draw the mode weights with the polar method from ``default_rng(seed)``."""
    omegas = char_roots(spec.eta, spec.length, spec.n_modes)
    lams = eigenvalue(omegas, spec.eta, spec.variance)
    xi = polar_normals(np.random.default_rng(spec.seed), spec.n_modes)
    return KleField(spec, omegas, lams, xi)


def write_field(fld: KleField, path, n: int = 401) -> None:
    """CSV of x, R(x), exp(R(x)) plus a JSON sidecar echoing the spec."""
    s = fld.spec
    x = np.linspace(s.origin, s.origin + s.length, n)
    r = fld.log_field(x)
    lines = ["x,R,parameter"] + [f"{a:.17g},{b:.17g},{c:.17g}" for a, b, c in zip(x, r, np.exp(r))]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    side = fld.describe() | {"xi": fld.xi.tolist(), "omegas": fld.omegas.tolist()}
    Path(str(path) + ".json").write_text(json.dumps(side, indent=1), encoding="utf-8")
