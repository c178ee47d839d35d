"""Sine-activated MLP surrogate u(x, t) with exact high-order derivatives.

Training uses Adam (through torch autograd). Evaluation and derivatives are
plain numpy in float64: derivatives come from propagating truncated bivariate
Taylor coefficients through every affine layer and sine activation, so they
are exact derivatives of the network function.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ExtrapolationError, TrainingDivergedError, UnsupportedOrderError
from .pdegen import SampleSet

log = logging.getLogger(__name__)

MAX_DX_ORDER = 4
MAX_DT_ORDER = 2
FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    steps: int = 30_000
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 0  # 0 means full batch
    seed: int = 0
    report_every: int = 100
    lr_final: float | None = None  # exponential decay target; None keeps lr fixed

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.steps < 1:
            raise ValueError("need at least one training step")
        if self.batch_size < 0:
            raise ValueError("batch size must be >= 0")
        if self.lr_final is not None and not self.lr_final > 0:
            raise ValueError("final learning rate must be positive")


@dataclass(frozen=True, eq=False)
class MlpSurrogate:
    """Fully connected net: 2 inputs -> hidden sine layers -> 1 output.

    ``weights[i]`` has shape ``(fan_out, fan_in)``. Inputs are mapped from the
    declared ``bounds`` onto ``[-1, 1]^2`` before the first layer.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    bounds: tuple[float, float, float, float]

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=float) for w in self.weights)
        bs = tuple(np.array(b, dtype=float).ravel() for b in self.biases)
        if len(ws) != len(bs) or len(ws) < 2:
            raise ValueError("need matching weights/biases and at least one hidden layer")
        if ws[0].shape[1] != 2 or ws[-1].shape[0] != 1:
            raise ValueError("network must map 2 inputs to 1 output")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape[0] != b.size or (i and w.shape[1] != ws[i - 1].shape[0]):
                raise ValueError(f"inconsistent shapes at layer {i}")
        x0, x1, t0, t1 = (float(v) for v in self.bounds)
        if not (x1 > x0 and t1 > t0):
            raise ValueError(f"degenerate bounds {self.bounds}")
        for arr in ws + bs:
            arr.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "bounds", (x0, x1, t0, t1))

    @property
    def widths(self) -> tuple[int, ...]:
        return (2,) + tuple(w.shape[0] for w in self.weights)

    @property
    def scale(self) -> tuple[float, float]:
        x0, x1, t0, t1 = self.bounds
        return 2.0 / (x1 - x0), 2.0 / (t1 - t0)

    def normalize(self, x, t):
        x0, x1, t0, t1 = self.bounds
        sx, st = self.scale
        return sx * (np.asarray(x, dtype=float) - x0) - 1.0, st * (np.asarray(t, dtype=float) - t0) - 1.0

    def scaled(self, c: float) -> "MlpSurrogate":
        """Copy with the output layer multiplied by ``c``."""
        ws = list(self.weights)
        bs = list(self.biases)
        ws[-1] = ws[-1] * c
        bs[-1] = bs[-1] * c
        return MlpSurrogate(tuple(ws), tuple(bs), self.bounds)

    def __call__(self, x, t):
        return evaluate(self, x, t)


def init_network(widths, bounds, seed: int = 0) -> MlpSurrogate:
    """Glorot-uniform weights, zero biases."""
    if len(widths) < 3 or widths[0] != 2 or widths[-1] != 1:
        raise ValueError(f"widths must look like (2, hidden..., 1), got {widths}")
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpSurrogate(tuple(ws), tuple(bs), bounds)


def architecture(hidden_layers: int = 5, width: int = 50) -> tuple[int, ...]:
    return (2,) + (width,) * hidden_layers + (1,)


# --------------------------------------------------------------------------
# training

def train(samples: SampleSet, widths=None, cfg: TrainConfig | None = None, init: MlpSurrogate | None = None):
    """Fit the surrogate to samples by minimising the mean squared error.

    Returns ``(net, history)`` where ``history`` holds ``(step, mse)`` pairs
    every ``cfg.report_every`` steps; the final entry is the full-data MSE of
    the returned network.
    """
    import torch

    cfg = cfg or TrainConfig()
    widths = tuple(widths or architecture())
    net0 = init or init_network(widths, samples.bounds, cfg.seed)
    if net0.bounds != samples.bounds:
        net0 = MlpSurrogate(net0.weights, net0.biases, samples.bounds)

    torch.manual_seed(cfg.seed)
    dtype = torch.float64
    xi, tau = net0.normalize(samples.x, samples.t)
    inputs = torch.tensor(np.stack([xi, tau], axis=1), dtype=dtype)
    target = torch.tensor(samples.u[:, None], dtype=dtype)
    params = []
    for w, b in zip(net0.weights, net0.biases):
        params.append(torch.tensor(w, dtype=dtype, requires_grad=True))
        params.append(torch.tensor(b, dtype=dtype, requires_grad=True))

    def forward(z):
        for i in range(0, len(params) - 2, 2):
            z = torch.sin(torch.addmm(params[i + 1], z, params[i].T))
        return torch.addmm(params[-1], z, params[-2].T)

    opt = torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    decay = 1.0
    if cfg.lr_final is not None and cfg.steps > 1:
        decay = (cfg.lr_final / cfg.lr) ** (1.0 / (cfg.steps - 1))
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, decay)

    n = len(samples)
    batch = n if cfg.batch_size in (0, None) or cfg.batch_size >= n else cfg.batch_size
    order_rng = np.random.default_rng(cfg.seed + 1)
    perm = None
    cursor = n
    history = []
    for step in range(1, cfg.steps + 1):
        if batch == n:
            xb, yb = inputs, target
        else:
            if cursor + batch > n:
                perm = torch.from_numpy(order_rng.permutation(n))
                cursor = 0
            idx = perm[cursor : cursor + batch]
            cursor += batch
            xb, yb = inputs[idx], target[idx]
        opt.zero_grad()
        loss = torch.mean((forward(xb) - yb) ** 2)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDivergedError(step, value)
        loss.backward()
        opt.step()
        sched.step()
        if step % cfg.report_every == 0 and step != cfg.steps:
            history.append((step, value))
            log.debug("step %d mse %.3e", step, value)

    ws = tuple(p.detach().numpy().copy() for p in params[0::2])
    bs = tuple(p.detach().numpy().copy() for p in params[1::2])
    net = MlpSurrogate(ws, bs, samples.bounds)
    final = float(np.mean((evaluate(net, samples.x, samples.t) - samples.u) ** 2))
    if not math.isfinite(final):
        raise TrainingDivergedError(cfg.steps, final)
    history.append((cfg.steps, final))
    return net, history


# --------------------------------------------------------------------------
# evaluation and Taylor-mode derivatives

def evaluate(net: MlpSurrogate, x, t) -> np.ndarray:
    xi, tau = net.normalize(x, t)
    xi, tau = np.broadcast_arrays(xi, tau)
    z = np.stack([xi.ravel(), tau.ravel()], axis=1)
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = np.sin(z @ w.T + b)
    out = z @ net.weights[-1].T + net.biases[-1]
    return out[:, 0].reshape(xi.shape)


def _sin_cos_series(z: np.ndarray):
    """sin and cos of a truncated bivariate series; coefficient axes lead."""
    na, nb = z.shape[:2]
    s = np.empty_like(z)
    c = np.empty_like(z)
    s[0, 0] = np.sin(z[0, 0])
    c[0, 0] = np.cos(z[0, 0])
    # pure t-direction: d/dt sin f = cos f * f_t
    for j in range(1, nb):
        acc_s = np.zeros_like(z[0, 0])
        acc_c = np.zeros_like(z[0, 0])
        for q in range(1, j + 1):
            acc_s += q * z[0, q] * c[0, j - q]
            acc_c += q * z[0, q] * s[0, j - q]
        s[0, j] = acc_s / j
        c[0, j] = -acc_c / j
    # x-direction recurrence with full convolution in t
    for i in range(1, na):
        for j in range(nb):
            acc_s = np.zeros_like(z[0, 0])
            acc_c = np.zeros_like(z[0, 0])
            for p in range(1, i + 1):
                for q in range(j + 1):
                    pz = p * z[p, q]
                    acc_s += pz * c[i - p, j - q]
                    acc_c += pz * s[i - p, j - q]
            s[i, j] = acc_s / i
            c[i, j] = -acc_c / i
    return s, c


def taylor_coefficients(net: MlpSurrogate, x, t, max_dx: int, max_dt: int) -> np.ndarray:
    """Normalized-coordinate Taylor coefficients, shape ``(max_dx+1, max_dt+1, npts)``.

    Entry ``[a, b]`` is the mixed partial of order (a, b) divided by ``a! b!``.
    """
    xi, tau = net.normalize(x, t)
    xi, tau = np.broadcast_arrays(np.atleast_1d(xi), np.atleast_1d(tau))
    xi, tau = xi.ravel(), tau.ravel()
    npts = xi.size
    na, nb = max_dx + 1, max_dt + 1
    w0, b0 = net.weights[0], net.biases[0]
    z = np.zeros((na, nb, npts, w0.shape[0]))
    z[0, 0] = np.outer(xi, w0[:, 0]) + np.outer(tau, w0[:, 1]) + b0
    if na > 1:
        z[1, 0] = w0[:, 0]
    if nb > 1:
        z[0, 1] = w0[:, 1]
    h, _ = _sin_cos_series(z)
    for w, b in zip(net.weights[1:-1], net.biases[1:-1]):
        z = (h.reshape(-1, h.shape[-1]) @ w.T).reshape(na, nb, npts, w.shape[0])
        z[0, 0] += b
        h, _ = _sin_cos_series(z)
    out = (h.reshape(-1, h.shape[-1]) @ net.weights[-1][0]).reshape(na, nb, npts)
    out[0, 0] += net.biases[-1][0]
    return out


def _check_orders(a, b):
    if not (0 <= a <= MAX_DX_ORDER and 0 <= b <= MAX_DT_ORDER):
        raise UnsupportedOrderError(
            f"derivative order (d/dx^{a}, d/dt^{b}) outside supported range "
            f"(<= {MAX_DX_ORDER}, <= {MAX_DT_ORDER})"
        )


def derivatives(net: MlpSurrogate, x, t, orders, chunk: int = 4096) -> dict:
    """Several derivative channels at once: ``{(a, b): array}`` in physical units."""
    orders = [tuple(int(v) for v in o) for o in orders]
    for a, b in orders:
        _check_orders(a, b)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast(x, t).shape
    xf = np.broadcast_to(x, shape).ravel()
    tf = np.broadcast_to(t, shape).ravel()
    max_a = max(a for a, _ in orders)
    max_b = max(b for _, b in orders)
    sx, st = net.scale
    out = {o: np.empty(xf.size) for o in orders}
    for start in range(0, xf.size, chunk):
        sl = slice(start, start + chunk)
        coef = taylor_coefficients(net, xf[sl], tf[sl], max_a, max_b)
        for a, b in orders:
            factor = math.factorial(a) * math.factorial(b) * sx**a * st**b
            out[(a, b)][sl] = factor * coef[a, b]
    return {o: v.reshape(shape) for o, v in out.items()}


def derivative(net: MlpSurrogate, x, t, dx_order: int = 0, dt_order: int = 0):
    """d^(dx_order) / dx d^(dt_order) / dt of the network at (x, t)."""
    res = derivatives(net, x, t, [(dx_order, dt_order)])[(dx_order, dt_order)]
    return float(res) if res.ndim == 0 else res


# --------------------------------------------------------------------------
# meta-data grids

@dataclass(frozen=True)
class MetaGrid:
    x: np.ndarray
    t: np.ndarray
    channels: dict = field(default_factory=dict)  # (a, b) -> array (nt, nx)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def size(self) -> int:
        return self.x.size * self.t.size


def check_range(net: MlpSurrogate, x_range, t_range, allow_extrapolation=False):
    x0, x1, t0, t1 = net.bounds
    tol = 1e-12 * max(1.0, abs(x1) + abs(t1))
    inside = (x_range[0] >= x0 - tol and x_range[1] <= x1 + tol
              and t_range[0] >= t0 - tol and t_range[1] <= t1 + tol)
    if not inside:
        msg = f"range x={tuple(x_range)}, t={tuple(t_range)} leaves training domain {net.bounds}"
        if not allow_extrapolation:
            raise ExtrapolationError(msg)
        log.warning("extrapolating: %s", msg)


def make_meta_grid(net: MlpSurrogate, x_range, t_range, nx: int, nt: int,
                   channels=((0, 0),), allow_extrapolation: bool = False) -> MetaGrid:
    """Evaluate requested derivative channels on a uniform (t-major) grid."""
    if nx < 2 or nt < 2:
        raise ValueError("meta grid needs at least 2 points per axis")
    check_range(net, x_range, t_range, allow_extrapolation)
    x = np.linspace(x_range[0], x_range[1], nx)
    t = np.linspace(t_range[0], t_range[1], nt)
    tt, xx = np.meshgrid(t, x, indexing="ij")
    vals = derivatives(net, xx, tt, channels)
    return MetaGrid(x, t, vals)


# --------------------------------------------------------------------------
# serialization

def to_dict(net: MlpSurrogate) -> dict:
    return {
        "version": FORMAT_VERSION,
        "widths": list(net.widths),
        "bounds": list(net.bounds),
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def from_dict(data: dict) -> MlpSurrogate:
    if data.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported network format version {data.get('version')!r}")
    widths = data["widths"]
    ws = tuple(np.array(w, dtype=float).reshape(o, i) for w, i, o in zip(data["weights"], widths[:-1], widths[1:]))
    bs = tuple(np.array(b, dtype=float) for b in data["biases"])
    return MlpSurrogate(ws, bs, tuple(data["bounds"]))


def save(net: MlpSurrogate, path) -> None:
    Path(path).write_text(json.dumps(to_dict(net)), encoding="utf-8")


def load(path) -> MlpSurrogate:
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
