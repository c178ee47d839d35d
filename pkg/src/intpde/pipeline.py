"""Configuration-driven experiment runner.

A run goes generate -> noise/subsample -> train -> discover (-> hetero solve)
-> evaluate. Every stage writes its artifact under ``<out_dir>/cache`` named
by a content hash of its own settings chained with the upstream hash, so a
change anywhere upstream invalidates everything downstream.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import pdegen, surrogate
from .errors import ConfigError, DegeneratePopulationError, IntPdeError, UnsupportedStructureError
from .evolution import GaConfig, differential_context, evolve, integral_context, write_trace_csv
from .genome import GenomeConfig, format_equation, integral_to_differential, lhs_name, module_name, parse_genome
from .quadrature import gauss_legendre, intervals_on_grid
from .randfield import KleSpec, sample_field
from .stepwise import WindowPlan, discover_windows, solve_hetero, write_series

log = logging.getLogger(__name__)

PDES = ("kdv", "ks", "convdiff", "wave", "boussinesq")
FIELD_PDES = {"convdiff": "D", "wave": "EA", "boussinesq": "K"}
MODES = ("integral", "differential", "hetero")


# --------------------------------------------------------------------------
# configuration

@dataclass
class DatasetConfig:
    pde: str = "kdv"
    params: dict = field(default_factory=dict)  # forwarded to the solver
    field: dict | None = None  # {"constant": c} or KleSpec keys
    noise: float = 0.0
    noise_seed: int = 1
    samples: int | None = None  # None keeps every grid point
    seed: int = 0


@dataclass
class SurrogateConfig:
    hidden_layers: int = 5
    width: int = 50
    lr: float = 1e-3
    steps: int = 30000
    batch_size: int = 0
    lr_final: float | None = None
    seed: int = 0


@dataclass
class MetaConfig:
    x_range: list = field(default_factory=lambda: [-0.5, 0.5])
    t_range: list = field(default_factory=lambda: [0.0, 1.0])
    nx: int = 500
    nt: int = 100


@dataclass
class WindowConfig:
    span: list | None = None  # defaults to the meta x range
    t_range: list | None = None  # defaults to the meta t range
    n_local: int = 10
    nx: int = 100
    nt: int = 100


@dataclass
class DiscoveryConfig:
    mode: str = "integral"
    epsilon: float = 1e-3
    interval: Any = 0.05  # length, or "2dx"
    quadrature_points: int = 5
    population: int = 200
    generations: int = 100
    p_cross: float = 0.8
    p_mut: float = 0.2
    seed: int = 0
    max_order: int = 3
    max_modules: int = 5
    max_genes_per_module: int = 3
    lhs_choices: list = field(default_factory=lambda: [1, 2])
    windows: WindowConfig | None = None
    structure: str | None = None  # hetero only: skip the window vote


@dataclass
class EvaluateConfig:
    structure: str | None = None  # expected genome, for support recovery
    truth: list | None = None  # [[coef, [orders...]], ...] in differential form
    solution_error: bool = True
    field_term: str | None = None  # hetero: term whose series should match the planted field


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"dataset.noise": 0.1})``."""
        data = self.to_dict()
        for path, value in changes.items():
            node = data
            keys = path.split(".")
            for k in keys[:-1]:
                if node.get(k) is None:
                    node[k] = {}
                node = node[k]
            node[keys[-1]] = value
        return config_from_dict(data)


_NESTED = {
    (ExperimentConfig, "dataset"): DatasetConfig,
    (ExperimentConfig, "surrogate"): SurrogateConfig,
    (ExperimentConfig, "meta"): MetaConfig,
    (ExperimentConfig, "discovery"): DiscoveryConfig,
    (ExperimentConfig, "evaluate"): EvaluateConfig,
    (DiscoveryConfig, "windows"): WindowConfig,
}


def _build(cls, data, where: str):
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value, f"{where}.{key}".lstrip(".")) if sub else value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data or {}, "")
    validate(cfg)
    return cfg


def _pair(value, where):
    if not (isinstance(value, (list, tuple)) and len(value) == 2 and float(value[1]) > float(value[0])):
        raise ConfigError(f"{where} must be an increasing pair, got {value!r}")
    return float(value[0]), float(value[1])


def validate(cfg: ExperimentConfig) -> None:
    d, s, m, g = cfg.dataset, cfg.surrogate, cfg.meta, cfg.discovery
    if d.pde not in PDES:
        raise ConfigError(f"dataset.pde must be one of {PDES}, got {d.pde!r}")
    if d.pde in FIELD_PDES and d.field is None:
        raise ConfigError(f"dataset.field is required for {d.pde}")
    if d.field is not None and "constant" in d.field and len(d.field) != 1:
        raise ConfigError("dataset.field: 'constant' excludes other keys")
    if d.field is not None and "constant" not in d.field:
        bad = set(d.field) - {f.name for f in dataclasses.fields(KleSpec)}
        if bad:
            raise ConfigError(f"unknown key(s) in dataset.field: {', '.join(sorted(bad))}")
    if not 0 <= float(d.noise) < 1:
        raise ConfigError("dataset.noise must lie in [0, 1)")
    if d.samples is not None and int(d.samples) < 1:
        raise ConfigError("dataset.samples must be positive")
    if s.steps < 1 or s.hidden_layers < 1 or s.width < 1:
        raise ConfigError("surrogate steps/layers/width must be positive")
    _pair(m.x_range, "meta.x_range")
    _pair(m.t_range, "meta.t_range")
    if m.nx < 3 or m.nt < 2:
        raise ConfigError("meta grid too small")
    if g.mode not in MODES:
        raise ConfigError(f"discovery.mode must be one of {MODES}")
    if g.mode == "hetero" and g.windows is None and g.structure is None:
        raise ConfigError("hetero mode requires discovery.windows (or a fixed discovery.structure)")
    if g.interval != "2dx":
        try:
            if float(g.interval) <= 0:
                raise ValueError
        except (TypeError, ValueError):
            raise ConfigError(f"discovery.interval must be positive or '2dx', got {g.interval!r}") from None
    if g.windows is not None:
        for name in ("span", "t_range"):
            if getattr(g.windows, name) is not None:
                _pair(getattr(g.windows, name), f"discovery.windows.{name}")
    try:
        ga_config(cfg)
        if g.structure is not None:
            parse_genome(g.structure)
        if cfg.evaluate.structure is not None:
            parse_genome(cfg.evaluate.structure)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(source) -> ExperimentConfig:
    """Read a YAML config from a path, or a bundled preset by name."""
    path = Path(source)
    if path.exists():
        text = path.read_text(encoding="utf-8")
    else:
        name = str(source) if str(source).endswith(".yaml") else f"{source}.yaml"
        preset = resources.files("intpde") / "presets" / name
        if not preset.is_file():
            raise ConfigError(f"no config file or preset named {source!r}")
        text = preset.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return config_from_dict(data)


def list_presets() -> list[str]:
    root = resources.files("intpde") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def ga_config(cfg: ExperimentConfig, threads: int = 1) -> GaConfig:
    g = cfg.discovery
    gen = GenomeConfig(max_order=g.max_order, max_genes_per_module=g.max_genes_per_module,
                       max_modules=g.max_modules, lhs_choices=tuple(g.lhs_choices))
    return GaConfig(population=g.population, generations=g.generations, p_cross=g.p_cross, p_mut=g.p_mut,
                    epsilon=float(g.epsilon), seed=g.seed, genome=gen,
                    mode="differential" if g.mode == "differential" else "integral", threads=threads)


# --------------------------------------------------------------------------
# report

@dataclass
class DiscoveryReport:
    name: str
    mode: str
    equation: str | None
    genome: str | None
    coefficients: list | None
    differential_form: list | None  # [[coef, term name], ...]
    fitness: float | None
    mse: float | None
    stability: float | None = None
    window_structures: list | None = None
    frequencies: dict | None = None
    cv_table: list | None = None
    series_file: str | None = None
    solution_error_percent: float | None = None
    coefficient_error_percent: float | None = None
    support_recovered: bool | None = None
    field_error_median: float | None = None
    hashes: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DiscoveryReport":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DiscoveryReport":
        return cls.from_dict(json.loads(text))

    def without_timings(self) -> dict:
        d = self.to_dict()
        d.pop("timings")
        return d


class StageError(IntPdeError):
    """A pipeline stage failed; carries the stage name and upstream hashes."""

    def __init__(self, stage: str, hashes: dict, cause: Exception):
        up = ", ".join(f"{k}={v}" for k, v in hashes.items()) or "none"
        super().__init__(f"stage {stage!r} failed ({type(cause).__name__}: {cause}); upstream: {up}")
        self.stage = stage
        self.hashes = dict(hashes)
        self.cause = cause


# --------------------------------------------------------------------------
# metrics

def coefficient_error(found, truth) -> float:
    """Mean relative coefficient error (percent) in differential form.

    Averaged over the true terms, a missing term counting as 100%; every
    spurious term adds one more 100% entry to the average.
    """
    found = {tuple(m): float(c) for c, m in found}
    truth = {tuple(m): float(c) for c, m in truth}
    errs = [abs(found.get(m, 0.0) - c) / abs(c) for m, c in truth.items()]
    errs += [1.0 for m in found if m not in truth]
    return 100.0 * float(np.mean(errs))


def content_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# --------------------------------------------------------------------------
# stages

def make_field(spec: dict | None):
    if spec is None:
        return None
    if "constant" in spec:
        return float(spec["constant"])
    return sample_field(KleSpec(**spec))


def generate(cfg: DatasetConfig) -> pdegen.GridDataset:
    params = dict(cfg.params)
    solver = getattr(pdegen, f"solve_{cfg.pde}")
    if cfg.pde in FIELD_PDES:
        return solver(make_field(cfg.field), **params)
    return solver(**params)


class Pipeline:
    """Runs the stages of one experiment with on-disk caching."""

    def __init__(self, cfg: ExperimentConfig, out_dir, threads: int = 1, use_cache: bool = True):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.cache = self.out / "cache"
        self.cache.mkdir(parents=True, exist_ok=True)
        self.threads = max(1, int(threads))
        self.use_cache = use_cache
        self.hashes: dict = {}
        self.timings: dict = {}
        self._dataset = None
        self._clean = None

    def _stage(self, name, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        except (StageError, ConfigError):
            raise
        except Exception as exc:
            raise StageError(name, self.hashes, exc) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 3)

    # generate ---------------------------------------------------------------
    def dataset(self) -> pdegen.GridDataset:
        if self._clean is None:
            d = self.cfg.dataset
            h = content_hash("generate", d.pde, d.params, d.field)
            self.hashes["generate"] = h
            path = self.cache / f"generate-{h}.csv"

            def run():
                if self.use_cache and path.exists():
                    return pdegen.read_dataset(path)
                ds = generate(d)
                pdegen.write_dataset(ds, path)
                return pdegen.read_dataset(path)  # identical whether cached or fresh

            self._clean = self._stage("generate", run)
        return self._clean

    # noise + subsample -------------------------------------------------------
    def samples(self) -> pdegen.SampleSet:
        ds = self.dataset()
        d = self.cfg.dataset
        h = content_hash("samples", self.hashes["generate"], d.noise, d.noise_seed, d.samples, d.seed)
        self.hashes["samples"] = h
        path = self.cache / f"samples-{h}.npz"

        def run():
            if self.use_cache and path.exists():
                z = np.load(path)
                return pdegen.SampleSet(z["x"], z["t"], z["u"], tuple(z["bounds"].tolist()))
            noisy = pdegen.add_noise(ds, pdegen.NoiseSpec(float(d.noise), d.noise_seed)) if d.noise else ds
            s = pdegen.all_samples(noisy) if d.samples is None else pdegen.subsample(noisy, int(d.samples), d.seed)
            np.savez(path, x=s.x, t=s.t, u=s.u, bounds=np.array(s.bounds))
            return s

        return self._stage("samples", run)

    # train -------------------------------------------------------------------
    def network(self) -> surrogate.MlpSurrogate:
        samples = self.samples()
        s = self.cfg.surrogate
        h = content_hash("train", self.hashes["samples"], dataclasses.asdict(s))
        self.hashes["train"] = h
        path = self.cache / f"train-{h}.json"

        def run():
            if self.use_cache and path.exists():
                return surrogate.load(path)
            tcfg = surrogate.TrainConfig(lr=s.lr, steps=s.steps, batch_size=s.batch_size, seed=s.seed,
                                         lr_final=s.lr_final, report_every=max(1, s.steps // 20))
            net, history = surrogate.train(samples, surrogate.architecture(s.hidden_layers, s.width), tcfg)
            log.info("trained surrogate: final mse %.3e", history[-1][1])
            surrogate.save(net, path)
            with open(self.cache / f"train-{h}.history.csv", "w", encoding="utf-8") as fh:
                fh.write("step,mse\n" + "".join(f"{a},{b!r}\n" for a, b in history))
            return surrogate.load(path)

        return self._stage("train", run)

    # discover ----------------------------------------------------------------
    def _meta(self):
        m = self.cfg.meta
        x = np.linspace(*_pair(m.x_range, "meta.x_range"), m.nx)
        t = np.linspace(*_pair(m.t_range, "meta.t_range"), m.nt)
        return x, t

    def _interval(self, x) -> float:
        g = self.cfg.discovery
        return 2 * (x[1] - x[0]) if g.interval == "2dx" else float(g.interval)

    def discover(self) -> DiscoveryReport:
        net = self.network()
        g = self.cfg.discovery
        h = content_hash("discover", self.hashes["train"], dataclasses.asdict(self.cfg.meta), dataclasses.asdict(g))
        self.hashes["discover"] = h
        path = self.cache / f"discover-{h}.json"
        if self.use_cache and path.exists():
            report = DiscoveryReport.from_json(path.read_text(encoding="utf-8"))
        else:
            fn = self._discover_hetero if g.mode == "hetero" else self._discover_constant
            report = self._stage("discover", lambda: fn(net, h))
            path.write_text(report.to_json(), encoding="utf-8")
        report.name = self.cfg.name
        return report

    def _discover_constant(self, net, h) -> DiscoveryReport:
        g = self.cfg.discovery
        x, t = self._meta()
        ga = ga_config(self.cfg, self.threads)
        if g.mode == "integral":
            ivs = intervals_on_grid(x, self._interval(x), tuple(self.cfg.meta.x_range))
            ctx = integral_context(net, ivs, t, gauss_legendre(g.quadrature_points), g.max_order, tuple(g.lhs_choices))
        else:
            ctx = differential_context(net, x, t, g.max_order, tuple(g.lhs_choices))
        rep = evolve(ga, ctx)
        write_trace_csv(rep, self.cache / f"discover-{h}.trace.csv")
        integral = g.mode == "integral"
        beta = [float(b) for b in rep.result.beta]
        if integral:
            diff = integral_to_differential(rep.best, beta)
        else:
            diff = list(zip(beta, rep.best.modules))
        return DiscoveryReport(
            name=self.cfg.name, mode=g.mode, equation=format_equation(rep.best, beta, integral=integral),
            genome=str(rep.best), coefficients=beta,
            differential_form=[[float(c), module_name(m), list(m)] for c, m in diff],
            fitness=float(rep.result.fitness), mse=float(rep.result.mse),
        )

    def _discover_hetero(self, net, h) -> DiscoveryReport:
        g = self.cfg.discovery
        m = self.cfg.meta
        report = DiscoveryReport(self.cfg.name, "hetero", None, None, None, None, None, None)
        if g.structure is not None:
            best = parse_genome(g.structure)
        else:
            w = g.windows
            plan = WindowPlan(tuple(w.span or m.x_range), tuple(w.t_range or m.t_range), w.n_local, w.nx, w.nt)
            ga = ga_config(self.cfg, 1)
            length = None if g.interval == "2dx" else float(g.interval)
            vote = discover_windows(net, plan, ga, length, gauss_legendre(g.quadrature_points), self.threads)
            report.stability = vote.stability
            report.window_structures = [None if s is None else str(s) for s in vote.structures]
            report.frequencies = dict(vote.table())
            if vote.best is None:
                raise DegeneratePopulationError("no window produced a structure")
            best = vote.best
        res = solve_hetero(net, best, tuple(m.x_range), tuple(m.t_range), m.nx, m.nt, gauss_legendre(g.quadrature_points))
        series = self.cache / f"discover-{h}.series.csv"
        write_series(res, series)
        report.genome = str(best)
        report.equation = _hetero_equation(best)
        report.series_file = str(series.relative_to(self.out))
        report.cv_table = res.summary()["stats"]
        report.mse = res.residual_mse
        return report

    # evaluate ----------------------------------------------------------------
    def evaluate(self, report: DiscoveryReport) -> DiscoveryReport:
        e = self.cfg.evaluate
        if e.structure is not None and report.genome is not None:
            report.support_recovered = parse_genome(e.structure) == parse_genome(report.genome)
        if e.truth is not None and report.differential_form is not None:
            found = [(c, tuple(m)) for c, _, m in report.differential_form]
            report.coefficient_error_percent = coefficient_error(found, [(c, tuple(m)) for c, m in e.truth])
        if e.solution_error and report.mode != "hetero" and report.genome is not None:
            def run():
                genome = parse_genome(report.genome)
                return pdegen.solution_error(self.dataset(), genome, report.coefficients, report.mode == "integral")
            try:
                report.solution_error_percent = self._stage("evaluate", run)
            except StageError as exc:
                if not isinstance(exc.cause, UnsupportedStructureError):
                    raise
                log.info("solution error not evaluable: %s", exc.cause)
        if e.field_term is not None and report.series_file is not None:
            report.field_error_median = self._field_error(report, e.field_term)
        return report

    def _field_error(self, report, term) -> float:
        fld = make_field(self.cfg.dataset.field)
        data = np.genfromtxt(self.out / report.series_file, delimiter=",", names=True)
        names = [c["term"] for c in report.cv_table]
        if term not in names:
            return float("inf")
        col = data.dtype.names[1 + names.index(term)]
        truth = fld(data["x"]) if callable(fld) else np.full(data["x"].shape, fld)
        return float(np.median(np.abs(data[col] - truth) / np.abs(truth)))

    def run(self) -> DiscoveryReport:
        report = self.evaluate(self.discover())
        report.hashes = dict(self.hashes)
        report.config = self.cfg.to_dict()
        report.timings = dict(self.timings)
        return report


def _hetero_equation(genome) -> str:
    rhs = " + ".join(f"C{n}(x)*{module_name(m)}" for n, m in enumerate(genome.modules))
    return f"{lhs_name(genome.lhs)} = [{rhs}]"


def run(config: ExperimentConfig, out_dir, threads: int = 1) -> DiscoveryReport:
    return Pipeline(config, out_dir, threads).run()


# --------------------------------------------------------------------------
# sweeps

SWEEPS = {"interval": "discovery.interval", "noise": "dataset.noise", "samples": "dataset.samples"}


def sweep(config: ExperimentConfig, param: str, values, out_dir, threads: int = 1) -> list[dict]:
    """Repeat ``run`` varying one setting; one table row per value."""
    if param not in SWEEPS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {sorted(SWEEPS)}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for value in values:
        cfg = config.replace(**{SWEEPS[param]: value})
        rep = run(cfg, out_dir, threads)
        rows.append({
            param: value, "equation": rep.equation, "genome": rep.genome,
            "support_recovered": rep.support_recovered, "coefficients": rep.coefficients,
            "solution_error_percent": rep.solution_error_percent,
            "coefficient_error_percent": rep.coefficient_error_percent,
        })
    return rows


def sweep_interval(config, lengths, out_dir, threads=1):
    return sweep(config, "interval", lengths, out_dir, threads)


def sweep_noise(config, gammas, out_dir, threads=1):
    return sweep(config, "noise", gammas, out_dir, threads)


def sweep_datasize(config, sizes, out_dir, threads=1):
    return sweep(config, "samples", sizes, out_dir, threads)


def write_sweep_csv(rows: list[dict], path) -> None:
    import csv

    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (json.dumps(v) if isinstance(v, list) else v) for k, v in row.items()})
