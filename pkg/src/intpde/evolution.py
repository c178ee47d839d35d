"""Genetic search over integral-form (or differential-form) PDE structures."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePopulationError, DegenerateSystemError
from .genome import Genome, GenomeConfig, canonicalize, parse_genome, random_genome, random_module, translate
from .quadrature import boundary_channels, gauss_legendre, least_squares, lhs_integrals
from .surrogate import MlpSurrogate, derivatives

log = logging.getLogger(__name__)

MUTATIONS = ("order", "add", "delete")


@dataclass(frozen=True)
class GaConfig:
    population: int = 200
    generations: int = 100
    p_cross: float = 0.8
    p_mut: float = 0.2
    epsilon: float = 1e-3
    seed: int = 0
    genome: GenomeConfig = field(default_factory=GenomeConfig)
    mode: str = "integral"
    threads: int = 1

    def __post_init__(self):
        if not (0 <= self.p_cross <= 1 and 0 <= self.p_mut <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.population < 2 or self.population % 2:
            raise ValueError("population must be even and >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.mode not in ("integral", "differential"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class FitnessResult:
    mse: float
    length: int
    fitness: float
    beta: np.ndarray

    @property
    def is_sentinel(self) -> bool:
        return math.isinf(self.fitness)


class FitnessContext:
    """Precomputed derivative channels a genome's design matrix is built from.

    ``lhs[order]`` is the LHS vector for temporal order 1 or 2. For integral
    mode ``right``/``left`` hold spatial channels ``0..max_order`` at interval
    ends and a term column is ``prod(right) - prod(left)``; in differential
    mode ``left`` is ``None`` and a column is the pointwise product.
    """

    def __init__(self, lhs: dict, right: np.ndarray, left: np.ndarray | None = None):
        self.lhs = {int(k): np.asarray(v, dtype=float).ravel() for k, v in lhs.items()}
        self.right = np.asarray(right, dtype=float).reshape(len(right), -1)
        self.left = None if left is None else np.asarray(left, dtype=float).reshape(len(left), -1)
        n_rows = {v.size for v in self.lhs.values()} | {self.right.shape[1]}
        if len(n_rows) != 1:
            raise ValueError("all channels need the same number of rows")
        self._columns: dict = {}

    @property
    def mode(self) -> str:
        return "differential" if self.left is None else "integral"

    @property
    def max_order(self) -> int:
        return self.right.shape[0] - 1

    @property
    def n_rows(self) -> int:
        return self.right.shape[1]

    def column(self, module) -> np.ndarray:
        col = self._columns.get(module)
        if col is None:
            idx = list(module)
            col = np.prod(self.right[idx], axis=0)
            if self.left is not None:
                col = col - np.prod(self.left[idx], axis=0)
            self._columns[module] = col
        return col

    def design(self, genome: Genome):
        if genome.lhs not in self.lhs:
            raise KeyError(f"no LHS channel for temporal order {genome.lhs}")
        if max(max(m) for m in genome.modules) > self.max_order:
            raise KeyError("genome uses a derivative order beyond the context")
        ux = np.stack([self.column(m) for m in genome.modules], axis=1)
        return ux, self.lhs[genome.lhs]


def integral_context(net: MlpSurrogate, intervals, times, rule=None, max_order: int = 3,
                     temporal_orders=(1, 2)) -> FitnessContext:
    rule = rule or gauss_legendre(5)
    lhs = lhs_integrals(net, intervals, times, temporal_orders, rule)
    right, left = boundary_channels(net, intervals, times, max_order)
    return FitnessContext(lhs, right, left)


def differential_context(net: MlpSurrogate, x_nodes, times, max_order: int = 4,
                         temporal_orders=(1, 2)) -> FitnessContext:
    tt, xx = np.meshgrid(np.asarray(times, float), np.asarray(x_nodes, float), indexing="ij")
    orders = [(a, 0) for a in range(max_order + 1)] + [(0, o) for o in temporal_orders]
    vals = derivatives(net, xx, tt, orders)
    right = np.stack([vals[(a, 0)] for a in range(max_order + 1)])
    return FitnessContext({o: vals[(0, o)] for o in temporal_orders}, right, None)


def fitness(genome: Genome, context: FitnessContext, epsilon: float) -> FitnessResult:
    """MSE of the least-squares fit plus ``epsilon`` times the genome length.

    Degenerate or non-finite systems return the ``+inf`` sentinel.
    """
    if not genome.is_canonical:
        raise ValueError(f"genome {genome} is not canonical")
    n = genome.length
    try:
        ux, ut = context.design(genome)
        if not (np.all(np.isfinite(ux)) and np.all(np.isfinite(ut))):
            raise DegenerateSystemError("non-finite design")
        res = least_squares(ux, ut)
    except (DegenerateSystemError, KeyError, ValueError):
        return FitnessResult(math.inf, n, math.inf, np.full(len(genome.modules), np.nan))
    return FitnessResult(res.mse, n, res.mse + epsilon * n, res.beta)


def fitness_differential(genome: Genome, context: FitnessContext, epsilon: float) -> FitnessResult:
    if context.mode != "differential":
        raise ValueError("context was not built for the differential form")
    return fitness(genome, context, epsilon)


# --------------------------------------------------------------------------
# variation operators

def crossover(a: Genome, b: Genome, rng: np.random.Generator) -> tuple[Genome, Genome]:
    """Swap one uniformly chosen module between the parents."""
    i = int(rng.integers(len(a.modules)))
    j = int(rng.integers(len(b.modules)))
    ma, mb = list(a.modules), list(b.modules)
    ma[i], mb[j] = mb[j], ma[i]
    return canonicalize(Genome(a.lhs, tuple(ma))), canonicalize(Genome(b.lhs, tuple(mb)))


def draw_mutation(rng: np.random.Generator, p_mut: float) -> str | None:
    if rng.random() >= p_mut:
        return None
    return MUTATIONS[int(rng.integers(len(MUTATIONS)))]


def apply_mutation(genome: Genome, kind: str | None, cfg: GenomeConfig, rng: np.random.Generator) -> Genome:
    modules = [list(m) for m in genome.modules]
    if kind == "order":
        flat = [(i, j) for i, m in enumerate(modules) for j in range(len(m))]
        i, j = flat[int(rng.integers(len(flat)))]
        g = modules[i][j]
        modules[i][j] = cfg.max_order if g == 0 else g - 1
    elif kind == "add":
        if len(modules) < cfg.max_modules:
            modules.append(list(random_module(cfg, rng)))
    elif kind == "delete":
        if len(modules) > 1:
            del modules[int(rng.integers(len(modules)))]
    elif kind is not None:
        raise ValueError(f"unknown mutation {kind!r}")
    return canonicalize(Genome(genome.lhs, tuple(tuple(m) for m in modules)))


def mutate(genome: Genome, cfg: GenomeConfig, rng: np.random.Generator, p_mut: float = 0.2) -> Genome:
    """With probability ``p_mut`` apply one of order/add/delete, chosen uniformly."""
    return apply_mutation(genome, draw_mutation(rng, p_mut), cfg, rng)


# --------------------------------------------------------------------------
# generational loop

@dataclass
class EvolutionReport:
    best: Genome
    result: FitnessResult
    trace: list = field(default_factory=list)  # best-ever fitness per generation
    evaluations: int = 0
    history: list = field(default_factory=list)  # (generation, fitness, genome, mse, length)

    def describe(self) -> str:
        return translate(self.best)[1]


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


class _Evaluator:
    def __init__(self, context, epsilon, threads):
        self.context = context
        self.epsilon = epsilon
        self.threads = max(1, int(threads))
        self.cache: dict = {}

    def __call__(self, genomes):
        todo = [g for g in dict.fromkeys(genomes) if g not in self.cache]
        if self.threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(lambda g: fitness(g, self.context, self.epsilon), todo))
        else:
            results = [fitness(g, self.context, self.epsilon) for g in todo]
        self.cache.update(zip(todo, results))
        return [self.cache[g] for g in genomes]


def _rank_key(item):
    genome, res = item
    return (res.fitness, str(genome))


def evolve(cfg: GaConfig, context: FitnessContext, initial=None) -> EvolutionReport:
    """Run the generational GA and return the best genome ever evaluated.

    Each generation the parents are shuffled into pairs; every pair goes
    through two crossover passes (4 children), children are mutated and
    scored, and the ``population`` fittest children become the next parents.
    """
    gcfg = cfg.genome
    if context.max_order < gcfg.max_order:
        raise ValueError("context lacks derivative channels required by the genome bounds")
    evaluate = _Evaluator(context, cfg.epsilon, cfg.threads)
    if initial is None:
        parents = [random_genome(gcfg, _stream(cfg.seed, 0, i, 0)) for i in range(cfg.population)]
    else:
        parents = [canonicalize(g) for g in initial]
    scored = list(zip(parents, evaluate(parents)))
    if all(r.is_sentinel for _, r in scored):
        raise DegeneratePopulationError("every genome in the initial population is degenerate")
    best_genome, best_res = min(scored, key=_rank_key)
    report = EvolutionReport(best_genome, best_res, [best_res.fitness])
    report.history.append((0, best_res.fitness, str(best_genome), best_res.mse, best_res.length))

    for gen in range(1, cfg.generations + 1):
        order = _stream(cfg.seed, gen, 0, 1).permutation(len(parents))
        children = []
        for cross_pass in range(2):
            for p in range(len(order) // 2):
                a, b = parents[order[2 * p]], parents[order[2 * p + 1]]
                rng = _stream(cfg.seed, gen, p, 2 + cross_pass)
                if rng.random() < cfg.p_cross:
                    a, b = crossover(a, b, rng)
                children.extend((a, b))
        children = [mutate(c, gcfg, _stream(cfg.seed, gen, i, 4), cfg.p_mut) for i, c in enumerate(children)]
        scored = list(zip(children, evaluate(children)))
        if all(r.is_sentinel for _, r in scored):
            raise DegeneratePopulationError(f"generation {gen} contains only degenerate genomes")
        scored.sort(key=_rank_key)
        parents = [g for g, _ in scored[: cfg.population]]
        top_genome, top_res = scored[0]
        if _rank_key((top_genome, top_res)) < _rank_key((report.best, report.result)):
            report.best, report.result = top_genome, top_res
        report.trace.append(report.result.fitness)
        report.history.append((gen, report.result.fitness, str(report.best), report.result.mse, report.result.length))
    report.evaluations = len(evaluate.cache)
    log.info("best %s fitness %.4e after %d evaluations", report.best, report.result.fitness, report.evaluations)
    return report


def write_trace_csv(report: EvolutionReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "best_fitness", "best_genome", "best_structure", "mse", "l_genome"])
        for gen, fit, genome, mse, length in report.history:
            w.writerow([gen, repr(fit), genome, translate(parse_genome(genome))[1], repr(mse), length])
