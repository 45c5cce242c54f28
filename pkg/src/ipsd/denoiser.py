"""The fully convolutional denoiser and its self-supervised training loop.

Training sees only the two sub-signals of a partition (and, for the
consistency terms, the full signal they came from). Each call to
:func:`train_to_convergence` starts from a freshly initialised network.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import InvalidArgumentError, TrainingDivergedError
from .nn import AdamState, Conv1d, LeakyReLU, Sequential, adam_step
from .signals import (
    ArrayLike,
    PartitionCatalog,
    PartitionChoice,
    Signal,
    SubSignalPair,
    apply_partition,
    as_array,
    partition_indices,
)

Reduction = Literal["sum", "mean"]


class DenoiserNet(Sequential):
    """Conv(1->C) - LeakyReLU - Conv(C->C) - LeakyReLU - Conv(C->1), kernel 3, same padding."""

    def __init__(self, rng: np.random.Generator | None = None, channels: int = 48, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        super().__init__(
            ("conv1", Conv1d(1, channels, rng, dtype)),
            ("act1", LeakyReLU(0.01, inplace=True)),
            ("conv2", Conv1d(channels, channels, rng, dtype)),
            ("act2", LeakyReLU(0.01, inplace=True)),
            ("conv3", Conv1d(channels, 1, rng, dtype)),
        )

    @property
    def dtype(self):
        return self.layers[0][1].dtype

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Forward a 1D array and return a 1D array of the same length."""
        x = np.asarray(x, dtype=self.dtype).reshape(1, -1)
        return self.forward(x)[0]


def identity_denoiser(channels: int = 48, dtype=np.float64) -> DenoiserNet:
    """A denoiser configured as the identity map.

    Uses ``lrelu(a) - lrelu(-a) = (1 + slope) * a`` to pass the input
    through both rectifiers.
    """
    net = DenoiserNet(channels=channels, dtype=dtype)
    k = 1.01
    for _, p, _ in net.named_parameters():
        p[...] = 0.0
    c1, c2, c3 = (net.layers[i][1].params for i in (0, 2, 4))
    c1["weight"][0, 0, 1], c1["weight"][1, 0, 1] = 1.0, -1.0
    c2["weight"][0, 0, 1], c2["weight"][0, 1, 1] = 1.0, -1.0
    c2["weight"][1, 0, 1], c2["weight"][1, 1, 1] = -1.0, 1.0
    c3["weight"][0, 0, 1], c3["weight"][0, 1, 1] = 1.0 / k**2, -1.0 / k**2
    return net


def zero_denoiser(channels: int = 48, dtype=np.float64) -> DenoiserNet:
    net = DenoiserNet(channels=channels, dtype=dtype)
    for _, p, _ in net.named_parameters():
        p[...] = 0.0
    return net


def _reduce(sq: float, n: int, reduction: Reduction) -> float:
    if reduction == "sum":
        return sq
    if reduction == "mean":
        return sq / n
    raise InvalidArgumentError(f"unknown reduction {reduction!r}")


def _sq(a: np.ndarray) -> float:
    return float(np.dot(a, a))


def n2n_loss(net: DenoiserNet, pair: SubSignalPair, reduction: Reduction = "sum") -> float:
    """||f(s_l) - s_r||^2 + ||f(s_r) - s_l||^2 (``mean`` divides each term by its length)."""
    sl, sr = as_array(pair.left), as_array(pair.right)
    if sl.size != sr.size:
        raise InvalidArgumentError("sub-signals must have equal length")
    n = sl.size
    return _reduce(_sq(net.apply(sl) - sr), n, reduction) + _reduce(_sq(net.apply(sr) - sl), n, reduction)


def consistency_loss(net: DenoiserNet, s: ArrayLike, choice: PartitionChoice, catalog: PartitionCatalog,
                     reduction: Reduction = "sum") -> float:
    """Penalty for denoise-then-partition differing from partition-then-denoise."""
    x = as_array(s)
    li, ri = partition_indices(choice, catalog, x.size)
    fx = net.apply(x)
    n = li.size
    return (_reduce(_sq(net.apply(x[li]) - fx[li]), n, reduction)
            + _reduce(_sq(net.apply(x[ri]) - fx[ri]), n, reduction))


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Stop once the variance of the last ``window`` losses drops below ``threshold``."""

    window: int = 10
    threshold: float = 1e-6
    max_steps: int = 2000

    def __post_init__(self):
        if self.window < 1 or self.threshold <= 0 or self.max_steps < self.window:
            raise InvalidArgumentError(f"invalid convergence criterion {self}")

    def met(self, losses: list[float]) -> bool:
        return len(losses) >= self.window and float(np.var(losses[-self.window:])) < self.threshold


@dataclass(frozen=True)
class DenoiserConfig:
    lr: float = 1e-3
    channels: int = 48
    consistency: bool = True
    reduction: Reduction = "mean"
    dtype: str = "float64"


@dataclass
class TrainTrace:
    losses: list[float] = field(default_factory=list)       # N2N part, one per step
    full_losses: list[float] = field(default_factory=list)  # what was optimised
    converged: bool = False

    @property
    def n_steps(self) -> int:
        return len(self.losses)


def normalize(x: ArrayLike) -> tuple[np.ndarray, float]:
    """Scale to unit sample variance; returns the scaled array and the scale."""
    a = as_array(x)
    scale = float(np.std(a))
    if not np.isfinite(scale) or scale == 0.0:
        scale = 1.0
    return a / scale, scale


class _Objective:
    """N2N loss (plus optional consistency terms) with its gradient.

    All three network inputs go through one packed forward/backward pass.
    """

    def __init__(self, sl, sr, s=None, li=None, ri=None, reduction: Reduction = "mean", dtype=np.float64):
        self.sl = np.asarray(sl, dtype=dtype)
        self.sr = np.asarray(sr, dtype=dtype)
        self.n = self.sl.size
        self.s = None if s is None else np.asarray(s, dtype=dtype)
        self.li, self.ri = li, ri
        self.w = 1.0 / self.n if reduction == "mean" else 1.0
        parts = [self.sl, self.sr] if self.s is None else [self.sl, self.sr, self.s]
        self.packed = np.concatenate(parts).reshape(1, -1)
        self.lengths = [p.size for p in parts]

    def __call__(self, net: DenoiserNet) -> tuple[float, float]:
        n, w = self.n, self.w
        out = net.forward(self.packed, self.lengths)[0]
        fl, fr = out[:n], out[n:2 * n]
        el, er = fl - self.sr, fr - self.sl
        j = w * (_sq(el) + _sq(er))
        g = np.zeros_like(out)
        g[:n] = 2 * w * el
        g[n:2 * n] = 2 * w * er
        total = j
        if self.s is not None:
            fs = out[2 * n:]
            cl, cr = fl - fs[self.li], fr - fs[self.ri]
            total += w * (_sq(cl) + _sq(cr))
            g[:n] += 2 * w * cl
            g[n:2 * n] += 2 * w * cr
            gs = g[2 * n:]
            gs[self.li] -= 2 * w * cl
            gs[self.ri] -= 2 * w * cr
        net.zero_grad()
        net.backward(g.reshape(1, -1))
        return j, total


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def train_to_convergence(
    pair: SubSignalPair | None,
    s: ArrayLike | None = None,
    choice: PartitionChoice | None = None,
    catalog: PartitionCatalog | None = None,
    criterion: ConvergenceCriterion = ConvergenceCriterion(),
    rng=None,
    config: DenoiserConfig = DenoiserConfig(),
    init: DenoiserNet | None = None,
) -> tuple[DenoiserNet, TrainTrace]:
    """Train a fresh denoiser on a sub-signal pair until its loss settles.

    With ``s``/``choice``/``catalog`` given, the consistency terms are
    added to the optimised loss (when ``config.consistency``) and
    ``pair`` may be omitted. The trace records the N2N part at every
    step, measured before that step's update. ``init`` starts from a copy
    of the given network instead of a fresh random one.
    """
    rng = _as_rng(rng)
    dtype = np.dtype(config.dtype)
    li = ri = None
    if s is not None:
        if choice is None or catalog is None:
            raise InvalidArgumentError("choice and catalog are required with the full signal")
        x = as_array(s)
        li, ri = partition_indices(choice, catalog, x.size)
        if pair is None:
            pair = apply_partition(x, choice, catalog)
    if pair is None:
        raise InvalidArgumentError("either a pair or the full signal is required")
    sl, sr = as_array(pair.left), as_array(pair.right)
    if sl.size != sr.size:
        raise InvalidArgumentError("sub-signals must have equal length")
    use_full = s is not None and config.consistency
    objective = _Objective(sl, sr, as_array(s) if use_full else None, li, ri, config.reduction, dtype)

    net = DenoiserNet(rng, config.channels, dtype) if init is None else init.clone().astype(dtype)
    params = net.parameters()
    grads = net.gradients()
    opt = AdamState(lr=config.lr)
    trace = TrainTrace()
    while trace.n_steps < criterion.max_steps:
        j, total = objective(net)
        if not (np.isfinite(j) and np.isfinite(total)):
            raise TrainingDivergedError(f"non-finite loss at step {trace.n_steps + 1}", trace)
        trace.losses.append(j)
        trace.full_losses.append(total)
        adam_step(params, grads, opt)
        if criterion.met(trace.losses):
            trace.converged = True
            break
    return net, trace


def reward_from_trace(trace: TrainTrace, window: int = 10) -> float:
    """Negative mean of the last ``window`` N2N losses."""
    if trace.n_steps < window:
        raise InvalidArgumentError(f"trace has {trace.n_steps} steps, need at least {window}")
    return -float(np.mean(trace.losses[-window:]))


def denoise(net: DenoiserNet, s: ArrayLike) -> Signal:
    rate = s.sample_rate_hz if isinstance(s, Signal) else 256.0
    return Signal(net.apply(as_array(s)).astype(np.float64), rate)


@dataclass
class FitResult:
    net: DenoiserNet
    trace: TrainTrace
    reward: float
    scale: float


def fit_partition(s: ArrayLike, choice: PartitionChoice, catalog: PartitionCatalog,
                  criterion: ConvergenceCriterion = ConvergenceCriterion(), rng=None,
                  config: DenoiserConfig = DenoiserConfig()) -> FitResult:
    """Normalise ``s``, train on one partition of it, and score the partition."""
    xn, scale = normalize(s)
    net, trace = train_to_convergence(None, xn, choice, catalog, criterion, rng, config)
    return FitResult(net, trace, reward_from_trace(trace, criterion.window), scale)


def denoise_with_choice(s: Signal, choice: PartitionChoice, catalog: PartitionCatalog,
                        criterion: ConvergenceCriterion = ConvergenceCriterion(), rng=None,
                        config: DenoiserConfig = DenoiserConfig()) -> tuple[Signal, FitResult]:
    fit = fit_partition(s, choice, catalog, criterion, rng, config)
    xn = as_array(s) / fit.scale
    out = fit.net.apply(xn).astype(np.float64) * fit.scale
    return Signal(out, s.sample_rate_hz if isinstance(s, Signal) else 256.0), fit


def write_trace_csv(path, trace: TrainTrace, config: dict | None = None) -> Path:
    """CSV of (step, n2n_loss, full_loss); config goes in '#' header lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if config is not None:
            fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(["step", "n2n_loss", "full_loss"])
        for i, (j, f) in enumerate(zip(trace.losses, trace.full_losses), start=1):
            w.writerow([i, repr(j), repr(f)])
    return path


def config_dict(cfg) -> dict:
    return asdict(cfg)
