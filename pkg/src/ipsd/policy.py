"""Partition policy: a bidirectional GRU over windows, trained by policy gradient.

The policy reads the signal window by window and emits, for every
window, logits over the partition catalog. Rewards come from training a
fresh denoiser on each sampled partition; see :func:`train_ipsd`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from ._parallel import JobRunner
from .denoiser import (
    ConvergenceCriterion,
    DenoiserConfig,
    _as_rng,
    denoise_with_choice,
    fit_partition,
    normalize,
)
from .errors import InvalidArgumentError, UpdateDivergedError
from .nn import AdamState, BiGRU, Linear, Module, ReLU, adam_step, load_checkpoint, read_manifest, save_checkpoint
from .signals import (
    ArrayLike,
    PartitionCatalog,
    PartitionChoice,
    Signal,
    WindowGrid,
    as_array,
    enumerate_catalog,
)


class PolicyNet(Module):
    """BiGRU(W->2H) - BiGRU(2H->2H) - FC(2H->F) - ReLU - FC(F->F) - ReLU - FC(F->arms)."""

    def __init__(self, window_len: int = 8, hidden: int = 64, fc: int = 256, n_arms: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.window_len, self.hidden, self.fc = window_len, hidden, fc
        self.n_arms = n_arms if n_arms is not None else len(enumerate_catalog(window_len))
        self.gru1 = BiGRU(window_len, hidden, rng, dtype)
        self.gru2 = BiGRU(2 * hidden, hidden, rng, dtype)
        self.fc1 = Linear(2 * hidden, fc, rng, dtype)
        self.act1 = ReLU()
        self.fc2 = Linear(fc, fc, rng, dtype)
        self.act2 = ReLU()
        self.fc3 = Linear(fc, self.n_arms, rng, dtype)

    def children(self):
        for name in ("gru1", "gru2", "fc1", "act1", "fc2", "act2", "fc3"):
            yield name, getattr(self, name)

    def forward(self, features, lengths=None):
        h = features
        for _, layer in self.children():
            h = layer.forward(h)
        return h

    def backward(self, grad_logits):
        g = grad_logits
        for _, layer in reversed(list(self.children())):
            g = layer.backward(g)
        return g

    def architecture(self) -> dict:
        return {"window_len": self.window_len, "hidden": self.hidden, "fc": self.fc, "n_arms": self.n_arms}


def window_features(s: ArrayLike, grid: WindowGrid, normalized: bool = True) -> np.ndarray:
    """Window ``k`` -> the ``W`` samples ``s[k*W:(k+1)*W]`` (of the unit-variance signal)."""
    x = as_array(s)
    if x.size != grid.signal_len:
        raise InvalidArgumentError(f"signal has {x.size} samples, grid expects {grid.signal_len}")
    if normalized:
        x, _ = normalize(x)
    return x.reshape(grid.n_windows, grid.window_len).copy()


def policy_forward(net: PolicyNet, features: np.ndarray) -> np.ndarray:
    return net.forward(features)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def sample_partition(logits: np.ndarray, rng) -> tuple[PartitionChoice, float]:
    """Draw one catalog entry per window; returns the choice and its log-probability."""
    rng = _as_rng(rng)
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(logp.shape[0])[:, None] * cdf[:, -1:]
    idx = np.minimum((cdf <= u).sum(axis=1), logp.shape[1] - 1)
    return PartitionChoice(idx), float(logp[np.arange(idx.size), idx].sum())


def logprob_of(logits: np.ndarray, choice: PartitionChoice) -> float:
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    return float(logp[np.arange(len(choice)), choice.indices].sum())


def argmax_choice(logits: np.ndarray) -> PartitionChoice:
    # np.argmax returns the first maximum, i.e. the lowest catalog index on ties
    return PartitionChoice(np.argmax(logits, axis=1))


def score_gradient_logits(logits: np.ndarray, choices: Sequence[PartitionChoice], weights) -> np.ndarray:
    """sum_i w_i * d log pi(a_i) / d logits, with d log p(a)/dz = onehot(a) - softmax(z) per window."""
    p = softmax(np.asarray(logits, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    G = -weights.sum() * p
    rows = np.arange(p.shape[0])
    for c, w in zip(choices, weights):
        np.add.at(G, (rows, c.indices), w)
    return G


def policy_gradient(net: PolicyNet, features: np.ndarray, choices: Sequence[PartitionChoice], weights) -> list[np.ndarray]:
    """Parameter gradient of ``sum_i w_i log pi(a_i | s)``."""
    logits = net.forward(features)
    G = score_gradient_logits(logits, choices, weights)
    net.zero_grad()
    net.backward(G)
    return [g.copy() for g in net.gradients()]


@dataclass(frozen=True)
class PolicyRollout:
    choice: PartitionChoice
    logprob: float
    reward: float
    n_steps: int = 0


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    total_updates: int = 20000
    mode: Literal["reinforce", "clipped"] = "clipped"
    clip: float = 0.2
    epochs: int = 4
    window_len: int = 8
    plateau_window: int = 50
    plateau_tol: float = 1e-3
    stop_on_plateau: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.total_updates < 1 or self.epochs < 1:
            raise InvalidArgumentError(f"invalid training config {self}")
        if not 0 < self.clip < 1:
            raise InvalidArgumentError(f"clip ratio must lie in (0, 1), got {self.clip}")
        if self.mode not in ("reinforce", "clipped"):
            raise InvalidArgumentError(f"unknown policy update mode {self.mode!r}")


class PolicyOptimizer:
    """A policy network with its Adam state."""

    def __init__(self, net: PolicyNet, lr: float):
        self.net = net
        self.state = AdamState(lr=lr)


def _apply(opt: PolicyOptimizer, G: np.ndarray) -> None:
    net = opt.net
    net.zero_grad()
    # ascend the objective: hand Adam the negated gradient
    net.backward(-G)
    grads = net.gradients()
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise UpdateDivergedError("non-finite policy gradient")
    adam_step(net.parameters(), grads, opt.state)


def policy_update(opt: PolicyOptimizer, features: np.ndarray, rollouts: Sequence[PolicyRollout],
                  cfg: TrainConfig) -> dict:
    """One policy-gradient update from a batch of rollouts on the same signal.

    Advantages are rewards minus the batch mean. ``reinforce`` takes one
    ascent step on mean_i A_i log pi(a_i); ``clipped`` takes ``cfg.epochs``
    steps on the clipped-ratio surrogate against the stored log-probs.
    """
    if not rollouts:
        raise InvalidArgumentError("empty rollout batch")
    rewards = np.array([r.reward for r in rollouts], dtype=np.float64)
    if not np.all(np.isfinite(rewards)):
        raise UpdateDivergedError("non-finite reward in batch")
    adv = rewards - rewards.mean()
    choices = [r.choice for r in rollouts]
    B = len(rollouts)
    net = opt.net
    if cfg.mode == "reinforce":
        logits = net.forward(features)
        _apply(opt, score_gradient_logits(logits, choices, adv / B))
        return {"epochs": 1, "clip_frac": 0.0}
    old = np.array([r.logprob for r in rollouts])
    clipped_total = 0
    for _ in range(cfg.epochs):
        logits = net.forward(features)
        new = np.array([logprob_of(logits, c) for c in choices])
        ratio = np.exp(new - old)
        clipped = ((adv > 0) & (ratio > 1 + cfg.clip)) | ((adv < 0) & (ratio < 1 - cfg.clip))
        coef = np.where(clipped, 0.0, adv * ratio)
        clipped_total += int(clipped.sum())
        _apply(opt, score_gradient_logits(logits, choices, coef / B))
    return {"epochs": cfg.epochs, "clip_frac": clipped_total / (cfg.epochs * B)}


@dataclass
class TrainingReport:
    rows: list[dict] = field(default_factory=list)
    stopped_on_plateau: bool = False

    def mean_rewards(self) -> np.ndarray:
        return np.array([r["mean_reward"] for r in self.rows])


def _plateaued(means: np.ndarray, window: int, tol: float) -> bool:
    if means.size < 2 * window:
        return False
    recent = means[-window:].mean()
    before = means[-2 * window:-window].mean()
    return abs(recent - before) <= tol * max(abs(before), 1e-12)


def _reward_job(job):
    s, choice_idx, window_len, criterion, seed, dcfg = job
    cat = enumerate_catalog(window_len)
    fit = fit_partition(s, PartitionChoice(choice_idx), cat, criterion, np.random.default_rng(seed), dcfg)
    return fit.reward, fit.trace.n_steps


def train_ipsd(trainset: Sequence[Signal], cfg: TrainConfig = TrainConfig(),
               criterion: ConvergenceCriterion = ConvergenceCriterion(), rng=None,
               denoiser_config: DenoiserConfig = DenoiserConfig(), workers: int = 1,
               net: PolicyNet | None = None, progress=None) -> tuple[PolicyNet, TrainingReport]:
    """Alternate denoiser fits and policy-gradient steps over a training set.

    Each iteration draws one signal, samples ``batch_size`` partitions
    from the current policy, fits a fresh denoiser to each (possibly in
    parallel), turns the converged losses into rewards and updates the
    policy once.
    """
    if not trainset:
        raise InvalidArgumentError("empty training set")
    lengths = {len(s) for s in trainset}
    if len(lengths) != 1:
        raise InvalidArgumentError(f"training signals differ in length: {sorted(lengths)}")
    grid = WindowGrid(lengths.pop(), cfg.window_len)
    rng = _as_rng(rng)
    if net is None:
        net = PolicyNet(cfg.window_len, rng=np.random.default_rng(rng.integers(2**63)))
    opt = PolicyOptimizer(net, cfg.lr)
    report = TrainingReport()
    arrays = [as_array(s) for s in trainset]
    with JobRunner(workers) as pool:
        for it in range(cfg.total_updates):
            k = int(rng.integers(len(arrays)))
            features = window_features(arrays[k], grid)
            logits = net.forward(features)
            sampled = [sample_partition(logits, rng) for _ in range(cfg.batch_size)]
            seeds = rng.integers(2**63, size=cfg.batch_size)
            jobs = [(arrays[k], c.indices, cfg.window_len, criterion, int(sd), denoiser_config)
                    for (c, _), sd in zip(sampled, seeds)]
            results = pool.map(_reward_job, jobs)
            rollouts = [PolicyRollout(c, lp, r, n) for (c, lp), (r, n) in zip(sampled, results)]
            stats = policy_update(opt, features, rollouts, cfg)
            rewards = np.array([r.reward for r in rollouts])
            report.rows.append({
                "iteration": it + 1,
                "signal_index": k,
                "mean_reward": float(rewards.mean()),
                "reward_std": float(rewards.std()),
                "mean_steps": float(np.mean([r.n_steps for r in rollouts])),
                "clip_frac": stats["clip_frac"],
            })
            if progress is not None:
                progress(report.rows[-1])
            if cfg.stop_on_plateau and _plateaued(report.mean_rewards(), cfg.plateau_window, cfg.plateau_tol):
                report.stopped_on_plateau = True
                break
    return net, report


def denoise_with_policy(net: PolicyNet, s: Signal, criterion: ConvergenceCriterion = ConvergenceCriterion(),
                        rng=None, denoiser_config: DenoiserConfig = DenoiserConfig()) -> Signal:
    """Pick each window's most likely partition, fit a denoiser on it and apply it to ``s``."""
    grid = WindowGrid(len(s), net.window_len)
    logits = net.forward(window_features(s, grid))
    choice = argmax_choice(logits)
    out, _ = denoise_with_choice(s, choice, enumerate_catalog(net.window_len), criterion, rng, denoiser_config)
    return out


def write_report_csv(path, report: TrainingReport, config: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["iteration", "mean_reward", "reward_std", "mean_steps", "signal_index", "clip_frac"]
    with path.open("w", newline="") as fh:
        if config is not None:
            fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for row in report.rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    return path


def save_policy(stem, net: PolicyNet, config: dict | None = None):
    extra = {"architecture": net.architecture()}
    if config is not None:
        extra["config"] = config
    return save_checkpoint(stem, net, extra)


def load_policy(stem) -> PolicyNet:
    arch = read_manifest(stem)["architecture"]
    net = PolicyNet(arch["window_len"], arch["hidden"], arch["fc"], arch["n_arms"])
    return load_checkpoint(stem, net)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
