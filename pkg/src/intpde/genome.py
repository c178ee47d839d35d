"""Numeric encoding of candidate integral-form PDEs.

A genome is a left-hand-side gene (temporal order of the integrated term) plus
a set of gene modules. Each module is a multiset of spatial derivative orders
multiplied together, so ``(0, 1)`` is ``u*u_x`` and ``(0, 0)`` is ``u^2``.

String form used throughout: ``[1],{[0,0],[1]}`` for
``∫u_t dx = c0*u^2 + c1*u_x``.
"""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

Module = tuple[int, ...]


@dataclass(frozen=True)
class GenomeConfig:
    max_order: int = 3
    max_genes_per_module: int = 3
    max_modules: int = 5
    lhs_choices: tuple[int, ...] = (1, 2)

    def __post_init__(self):
        if self.max_order < 0 or self.max_genes_per_module < 1 or self.max_modules < 1:
            raise ValueError(f"invalid genome bounds: {self}")
        if not self.lhs_choices or any(c not in (1, 2) for c in self.lhs_choices):
            raise ValueError(f"lhs choices must be drawn from (1, 2), got {self.lhs_choices}")


@dataclass(frozen=True, order=True)
class Genome:
    lhs: int
    modules: tuple[Module, ...] = field(default=())

    def __post_init__(self):
        if self.lhs not in (1, 2):
            raise ValueError(f"lhs gene must be 1 or 2, got {self.lhs}")
        if not self.modules:
            raise ValueError("a genome needs at least one module")
        for m in self.modules:
            if not m or any(int(g) < 0 for g in m):
                raise ValueError(f"invalid module {m!r}")

    @property
    def length(self) -> int:
        """Total gene count across modules (the parsimony measure)."""
        return sum(len(m) for m in self.modules)

    @property
    def is_canonical(self) -> bool:
        return canonicalize(self) == self

    def __str__(self):
        body = ",".join("[" + ",".join(map(str, m)) + "]" for m in self.modules)
        return f"[{self.lhs}],{{{body}}}"


def canonicalize(genome: Genome) -> Genome:
    modules = sorted(set(tuple(sorted(int(g) for g in m)) for m in genome.modules))
    return Genome(genome.lhs, tuple(modules))


def make_genome(lhs: int, modules) -> Genome:
    """Build a canonical genome from any iterable of gene lists."""
    return canonicalize(Genome(lhs, tuple(tuple(m) for m in modules)))


_GENOME_RE = re.compile(r"^\s*\[\s*(\d)\s*\]\s*,\s*\{(.*)\}\s*$")


def parse_genome(text: str) -> Genome:
    """Parse ``[1],{[0,0],[1]}`` into a canonical genome."""
    match = _GENOME_RE.match(text)
    if not match:
        raise ValueError(f"cannot parse genome {text!r}")
    modules = [
        tuple(int(g) for g in body.split(",") if g.strip())
        for body in re.findall(r"\[([^\]]*)\]", match.group(2))
    ]
    return make_genome(int(match.group(1)), modules)


def random_module(cfg: GenomeConfig, rng: np.random.Generator) -> Module:
    size = int(rng.integers(1, cfg.max_genes_per_module + 1))
    return tuple(sorted(int(g) for g in rng.integers(0, cfg.max_order + 1, size=size)))


def random_genome(cfg: GenomeConfig, rng: np.random.Generator) -> Genome:
    lhs = int(cfg.lhs_choices[int(rng.integers(len(cfg.lhs_choices)))])
    n_modules = int(rng.integers(1, cfg.max_modules + 1))
    return make_genome(lhs, [random_module(cfg, rng) for _ in range(n_modules)])


def factor_name(order: int) -> str:
    return "u" if order == 0 else "u_" + "x" * order


def module_name(module: Module) -> str:
    parts = []
    for order, count in sorted(Counter(module).items()):
        name = factor_name(order)
        parts.append(name if count == 1 else f"{name}^{count}")
    return "*".join(parts)


def lhs_name(lhs: int, integral: bool = True) -> str:
    base = "u_" + "t" * lhs
    return f"∫{base} dx" if integral else base


def translate(genome: Genome) -> tuple[tuple[Module, ...], str]:
    """Term descriptors (one product of orders per module) and display string."""
    if not genome.is_canonical:
        raise ValueError(f"genome {genome} is not canonical")
    rhs = " + ".join(f"c{i}*{module_name(m)}" for i, m in enumerate(genome.modules))
    return genome.modules, f"{lhs_name(genome.lhs)} = {rhs}"


def format_equation(genome: Genome, coefficients, integral: bool = True, digits: int = 4) -> str:
    """Render a genome with fitted coefficients, e.g. ``∫u_t dx = -0.497*u^2 - 0.00249*u_xx``."""
    terms = []
    for i, (m, c) in enumerate(zip(genome.modules, coefficients)):
        mag = f"{abs(c):.{digits}g}*{module_name(m)}"
        if i == 0:
            terms.append(("-" if c < 0 else "") + mag)
        else:
            terms.append(("- " if c < 0 else "+ ") + mag)
    return f"{lhs_name(genome.lhs, integral)} = " + " ".join(terms)


def differentiate_module(module: Module) -> dict[Module, int]:
    """Product rule: d/dx of a product of derivatives, as {module: multiplicity}.

    ``(0, 0)`` (u^2) maps to ``{(0, 1): 2}`` (2*u*u_x); ``(2,)`` maps to ``{(3,): 1}``.
    """
    out: Counter = Counter()
    for i in range(len(module)):
        bumped = list(module)
        bumped[i] += 1
        out[tuple(sorted(bumped))] += 1
    return dict(out)


def integral_to_differential(genome: Genome, coefficients) -> list[tuple[float, Module]]:
    """Convert integral-form terms with coefficients into differential-form terms."""
    acc: dict[Module, float] = {}
    for module, coef in zip(genome.modules, coefficients):
        for term, mult in differentiate_module(module).items():
            acc[term] = acc.get(term, 0.0) + mult * float(coef)
    return [(c, m) for m, c in sorted(acc.items())]
