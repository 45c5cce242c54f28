"""Zero-shot partition search: lil'UCB best-arm identification over shared partitions.

Every arm is one catalog entry applied to all windows. Pulling an arm
trains a fresh denoiser on that partition and returns its reward.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._parallel import JobRunner
from .denoiser import ConvergenceCriterion, DenoiserConfig, FitResult, _as_rng, denoise_with_choice, fit_partition
from .errors import InvalidArgumentError, StateError
from .signals import PartitionChoice, Signal, WindowGrid, enumerate_catalog

_LOG_FLOOR = 1.0 + 1e-12


@dataclass(frozen=True)
class LilUcbConfig:
    beta: float = 1.0
    sigma: float = 0.008
    epsilon: float = 0.01
    delta: float = 0.55e-4
    max_rounds: int = 500

    def __post_init__(self):
        if min(self.beta, self.sigma, self.epsilon) <= 0 or not 0 < self.delta < 1:
            raise InvalidArgumentError(f"invalid lil'UCB config {self}")
        if self.max_rounds < 0:
            raise InvalidArgumentError("max_rounds must be non-negative")

    @property
    def alpha(self) -> float:
        return ((2 + self.beta) / self.beta) ** 2


@dataclass
class BanditState:
    """Pull counts and running mean rewards; ``round`` counts pulls after initialisation."""

    counts: np.ndarray
    means: np.ndarray
    round: int = 0

    @classmethod
    def empty(cls, n_arms: int) -> "BanditState":
        return cls(np.zeros(n_arms, dtype=np.int64), np.zeros(n_arms))

    @property
    def n_arms(self) -> int:
        return self.counts.size

    @property
    def initialized(self) -> bool:
        return bool(np.all(self.counts >= 1))

    def update(self, arm: int, reward: float) -> None:
        # running mean; matches sum/count to rounding
        self.counts[arm] += 1
        self.means[arm] += (reward - self.means[arm]) / self.counts[arm]


def exploration_bonus(T, cfg: LilUcbConfig):
    T = np.asarray(T, dtype=np.float64)
    eps = cfg.epsilon
    inner = np.maximum(np.log((1 + eps) * T) / cfg.delta, _LOG_FLOOR)
    return (1 + cfg.beta) * (1 + math.sqrt(eps)) * np.sqrt(2 * cfg.sigma**2 * (1 + eps) * np.log(inner) / T)


def ucb_index(state: BanditState, arm: int, cfg: LilUcbConfig) -> float:
    T = state.counts[arm]
    if T < 1:
        raise StateError(f"arm {arm} has not been pulled")
    return float(state.means[arm] + exploration_bonus(T, cfg))


def select_arm(state: BanditState, cfg: LilUcbConfig) -> int:
    if not state.initialized:
        raise StateError("every arm must be pulled once before selection")
    idx = state.means + exploration_bonus(state.counts, cfg)
    return int(np.argmax(idx))


@dataclass(frozen=True)
class Stop:
    arm: int
    capped: bool = False


def stopping_met(state: BanditState, cfg: LilUcbConfig) -> Stop | None:
    if not state.initialized:
        raise StateError("stopping rule needs every arm pulled once")
    T = state.counts
    others = T.sum() - T
    hits = np.flatnonzero(T >= 1 + cfg.alpha * others)
    if hits.size:
        return Stop(int(hits[0]))
    if state.round >= cfg.max_rounds:
        return Stop(int(np.argmax(T)), capped=True)
    return None


@dataclass
class HistoryRow:
    round: int          # 0 during initialisation
    arm: int
    reward: float
    winner_so_far: int
    index: float | None = None


@dataclass
class BanditResult:
    best_arm: int
    capped: bool
    state: BanditState
    history: list[HistoryRow] = field(default_factory=list)


def identify_best_arm(n_arms: int, reward_fn: Callable[[int, np.random.Generator], float],
                      cfg: LilUcbConfig = LilUcbConfig(), rng=None,
                      init_map: Callable | None = None) -> BanditResult:
    """lil'UCB with the dominance stopping rule.

    ``reward_fn(arm, rng)`` returns one reward draw. ``init_map``, if
    given, maps a list of (arm, seed) jobs to rewards for the
    initialisation pulls (they are independent, so they may run in
    parallel); otherwise they run in order.
    """
    rng = _as_rng(rng)
    state = BanditState.empty(n_arms)
    hist: list[HistoryRow] = []
    seeds = rng.integers(2**63, size=n_arms)
    if init_map is not None:
        init_rewards = init_map(list(zip(range(n_arms), (int(s) for s in seeds))))
    else:
        init_rewards = [reward_fn(a, np.random.default_rng(int(s))) for a, s in zip(range(n_arms), seeds)]
    for arm, r in enumerate(init_rewards):
        state.update(arm, r)
        hist.append(HistoryRow(0, arm, float(r), int(np.argmax(state.counts))))
    while True:
        stop = stopping_met(state, cfg)
        if stop is not None:
            return BanditResult(stop.arm, stop.capped, state, hist)
        arm = select_arm(state, cfg)
        idx = ucb_index(state, arm, cfg)
        r = reward_fn(arm, np.random.default_rng(int(rng.integers(2**63))))
        state.update(arm, r)
        state.round += 1
        hist.append(HistoryRow(state.round, arm, float(r), int(np.argmax(state.counts)), idx))


@dataclass
class ZeroShotResult:
    denoised: Signal
    best_arm: int
    capped: bool
    state: BanditState
    history: list[HistoryRow]
    fit: FitResult


class _ArmReward:
    """Picklable reward function: train on a shared partition, return the reward."""

    def __init__(self, s: Signal, window_len: int, criterion: ConvergenceCriterion, config: DenoiserConfig):
        self.s, self.window_len, self.criterion, self.config = s, window_len, criterion, config
        self.n_windows = WindowGrid(len(s), window_len).n_windows

    def __call__(self, arm: int, rng) -> float:
        choice = PartitionChoice.shared(arm, self.n_windows)
        cat = enumerate_catalog(self.window_len)
        return fit_partition(self.s, choice, cat, self.criterion, rng, self.config).reward

    def job(self, arm_seed):
        arm, seed = arm_seed
        return self(arm, np.random.default_rng(seed))


def run_zero_shot(s: Signal, cfg: LilUcbConfig = LilUcbConfig(),
                  criterion: ConvergenceCriterion = ConvergenceCriterion(), rng=None,
                  window_len: int = 8, denoiser_config: DenoiserConfig = DenoiserConfig(),
                  reward_fn: Callable | None = None, workers: int = 1) -> ZeroShotResult:
    """Find the best shared partition for ``s`` and denoise ``s`` with it.

    ``reward_fn(arm, rng)`` replaces denoiser training when given (used
    for simulations). The final output comes from a fresh fit on the
    winning arm.
    """
    rng = _as_rng(rng)
    cat = enumerate_catalog(window_len)
    grid = WindowGrid(len(s), window_len)
    arm_reward = _ArmReward(s, window_len, criterion, denoiser_config)
    with JobRunner(workers) as pool:
        init_map = None
        if reward_fn is None and pool.workers > 1:
            init_map = lambda jobs: pool.map(arm_reward.job, jobs)  # noqa: E731
        res = identify_best_arm(len(cat), reward_fn or arm_reward, cfg, rng, init_map)
    choice = PartitionChoice.shared(res.best_arm, grid.n_windows)
    out, fit = denoise_with_choice(s, choice, cat, criterion, rng, denoiser_config)
    return ZeroShotResult(out, res.best_arm, res.capped, res.state, res.history, fit)


def write_history_csv(path, history: list[HistoryRow], config: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if config is not None:
            fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(["round", "arm", "reward", "winner_so_far", "index"])
        for h in history:
            w.writerow([h.round, h.arm, repr(h.reward), h.winner_so_far, "" if h.index is None else repr(h.index)])
    return path


def config_dict(cfg: LilUcbConfig) -> dict:
    d = asdict(cfg)
    d["alpha"] = cfg.alpha
    return d
