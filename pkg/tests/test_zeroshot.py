import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipsd.denoiser import ConvergenceCriterion
from ipsd.errors import InvalidArgumentError, StateError
from ipsd.signals import Signal, enumerate_catalog
from ipsd.zeroshot import (
    BanditState,
    LilUcbConfig,
    exploration_bonus,
    identify_best_arm,
    run_zero_shot,
    select_arm,
    stopping_met,
    ucb_index,
    write_history_csv,
)

from toys import gaussian_arms

CFG = LilUcbConfig()


def _state(counts, means=None):
    counts = np.asarray(counts, dtype=np.int64)
    means = np.zeros(counts.size) if means is None else np.asarray(means, dtype=float)
    return BanditState(counts, means)


def test_config():
    assert CFG.alpha == 9.0
    assert LilUcbConfig(beta=2.0).alpha == 4.0
    with pytest.raises(InvalidArgumentError):
        LilUcbConfig(delta=1.5)
    with pytest.raises(InvalidArgumentError):
        LilUcbConfig(sigma=0)


def test_bonus_at_one_pull():
    # independent evaluation of the index formula with natural logs
    eps, beta, sig, delta = 0.01, 1.0, 0.008, 0.55e-4
    ref = (1 + beta) * (1 + math.sqrt(eps)) * math.sqrt(
        2 * sig**2 * (1 + eps) * math.log(math.log(1 + eps) / delta))
    assert math.isclose(ucb_index(_state([1]), 0, CFG), ref, rel_tol=1e-14)
    assert math.isclose(ref, 0.0570, abs_tol=5e-5)


def test_bonus_vanishes():
    assert exploration_bonus(10**12, CFG) < 1e-6


def test_bonus_strictly_decreasing():
    T = np.arange(2, 5000)
    b = exploration_bonus(T, CFG)
    assert np.all(np.diff(b) < 0)


def test_log_guard_active_for_large_delta():
    # ln(1.01 * 1) / 0.9 < 1, so the guard keeps the index finite
    cfg = LilUcbConfig(delta=0.9)
    assert np.isfinite(exploration_bonus(1, cfg))


def test_index_monotone_in_mean():
    st_ = _state([3, 3], [0.1, 0.2])
    assert ucb_index(st_, 1, CFG) > ucb_index(st_, 0, CFG)


def test_select_ties_and_leader():
    assert select_arm(_state([2, 2, 2]), CFG) == 0
    assert select_arm(_state([2, 2, 2], [0, 1, 0]), CFG) == 1
    with pytest.raises(StateError):
        select_arm(_state([1, 0, 1]), CFG)
    with pytest.raises(StateError):
        ucb_index(_state([0]), 0, CFG)


def test_stopping_rule():
    assert stopping_met(_state([100, 10]), CFG).arm == 0
    assert stopping_met(_state([90, 10]), CFG) is None
    st_ = _state([5, 7])
    st_.round = CFG.max_rounds
    stop = stopping_met(st_, CFG)
    assert stop.capped and stop.arm == 1
    with pytest.raises(StateError):
        stopping_met(_state([0, 3]), CFG)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=50))
def test_running_mean(rewards):
    s = BanditState.empty(1)
    for r in rewards:
        s.update(0, r)
    assert math.isclose(s.means[0], sum(rewards) / len(rewards), rel_tol=1e-9, abs_tol=1e-12)


def test_one_pull_per_round():
    best, fn = gaussian_arms(6, 0.1, 0.008, 0)
    res = identify_best_arm(6, fn, CFG, 0)
    rounds = [h.round for h in res.history]
    assert rounds[:6] == [0] * 6
    assert rounds[6:] == list(range(1, res.state.round + 1))
    assert res.state.counts.sum() == res.state.round + 6
    assert res.best_arm == int(np.argmax(res.state.counts)) == best


def test_gaussian_oracle_identification():
    hits = 0
    for seed in range(20):
        best, fn = gaussian_arms(35, 0.1, 0.008, 1000 + seed)
        res = identify_best_arm(35, fn, CFG, seed)
        hits += res.best_arm == best and not res.capped
    assert hits >= 18


def test_deterministic_rewards_find_argmax():
    mu = np.linspace(-1, -2, 35)[np.random.default_rng(0).permutation(35)]
    res = identify_best_arm(35, lambda a, g: float(mu[a]), CFG, 0)
    assert res.best_arm == int(np.argmax(mu))


def test_dominated_arms_fade():
    mu = np.zeros(5)
    mu[2] = 0.1
    res = identify_best_arm(5, lambda a, g: float(mu[a]), LilUcbConfig(max_rounds=60), 0)
    late = [h.arm for h in res.history if h.round > 20]
    assert late.count(2) / len(late) > 0.9


def test_cap_returns_flagged():
    res = identify_best_arm(4, lambda a, g: 0.0, LilUcbConfig(max_rounds=3), 0)
    assert res.capped and res.state.round == 3


def test_arm_space_matches_catalog():
    s = Signal(np.random.default_rng(0).standard_normal(16))
    res = run_zero_shot(s, LilUcbConfig(max_rounds=0), ConvergenceCriterion(max_steps=12), 0,
                        window_len=4, reward_fn=lambda a, g: -float(a))
    assert res.state.n_arms == len(enumerate_catalog(4)) == 3
    assert res.best_arm == 0 and res.capped
    assert len(res.denoised) == 16


def test_zero_shot_with_trainer_small():
    s = Signal(np.random.default_rng(1).standard_normal(32))
    crit = ConvergenceCriterion(max_steps=15)
    a = run_zero_shot(s, LilUcbConfig(max_rounds=2), crit, 3, window_len=4)
    b = run_zero_shot(s, LilUcbConfig(max_rounds=2), crit, 3, window_len=4, workers=2)
    assert a.denoised == b.denoised
    assert [h.reward for h in a.history] == [h.reward for h in b.history]
    assert a.best_arm == int(np.argmax(a.state.counts))


def test_history_csv(tmp_path):
    best, fn = gaussian_arms(3, 0.1, 0.008, 0)
    res = identify_best_arm(3, fn, LilUcbConfig(max_rounds=5), 0)
    p = write_history_csv(tmp_path / "h.csv", res.history, {"beta": 1.0})
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# config:")
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["round", "arm", "reward", "winner_so_far", "index"]
    assert len(rows) == 1 + len(res.history)
