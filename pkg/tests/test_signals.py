import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipsd.errors import InvalidArgumentError, SignalFileError
from ipsd.signals import (
    PartitionChoice,
    Signal,
    SubSignalPair,
    WindowGrid,
    apply_partition,
    check_divisible,
    clean_mismatch,
    enumerate_catalog,
    interleaved_choice,
    merge_partition,
    partition_indices,
    project,
    random_choice,
    read_signal,
    write_signal,
)


@pytest.mark.parametrize("W", [2, 4, 6, 8, 10, 12])
def test_catalog_size(W):
    assert len(enumerate_catalog(W)) == math.comb(W, W // 2) // 2


def test_catalog_w8_layout():
    cat = enumerate_catalog(8)
    assert len(cat) == 35
    assert cat.entries[0] == (0, 1, 2, 3)
    assert cat.entries[-1] == (0, 5, 6, 7)
    assert cat.interleaved_index == 20
    assert cat.entries[20] == (0, 2, 4, 6)
    assert list(cat.entries) == sorted(cat.entries)


def test_catalog_w4():
    assert enumerate_catalog(4).entries == ((0, 1), (0, 2), (0, 3))


@pytest.mark.parametrize("W", [8, 10, 12])
def test_catalog_covers_every_split_once(W):
    cat = enumerate_catalog(W)
    full = set(range(W))
    seen = set()
    for e in cat.entries:
        assert 0 in e and len(e) == W // 2
        seen.add(frozenset(e))
        seen.add(frozenset(full - set(e)))
    assert len(seen) == math.comb(W, W // 2)


@pytest.mark.parametrize("W", [0, 3, 7, 14, -2, 2.0])
def test_catalog_rejects(W):
    with pytest.raises(InvalidArgumentError):
        enumerate_catalog(W)


def test_index_of_complement():
    cat = enumerate_catalog(8)
    assert cat.index_of([1, 3, 5, 7]) == 20
    assert cat.index_of([4, 5, 6, 7]) == 0
    with pytest.raises(InvalidArgumentError):
        cat.index_of([0, 1, 2])


def test_interleaved_partition_of_0_to_7():
    cat = enumerate_catalog(8)
    s = Signal(np.arange(8.0))
    pair = apply_partition(s, interleaved_choice(WindowGrid(8, 8), cat), cat)
    np.testing.assert_array_equal(pair.left.samples, [0, 2, 4, 6])
    np.testing.assert_array_equal(pair.right.samples, [1, 3, 5, 7])
    assert pair.left.sample_rate_hz == 128.0


def test_two_windows_entry_0():
    cat = enumerate_catalog(8)
    pair = apply_partition(np.arange(16.0), PartitionChoice([0, 0]), cat)
    np.testing.assert_array_equal(pair.left.samples, [0, 1, 2, 3, 8, 9, 10, 11])
    np.testing.assert_array_equal(pair.right.samples, [4, 5, 6, 7, 12, 13, 14, 15])


def test_indivisible_length():
    cat = enumerate_catalog(8)
    with pytest.raises(InvalidArgumentError):
        apply_partition(np.arange(10.0), PartitionChoice([0]), cat)
    with pytest.raises(InvalidArgumentError):
        WindowGrid(10, 8)
    assert check_divisible(10, 8, truncate=True) == 8
    with pytest.raises(InvalidArgumentError):
        check_divisible(10, 8)


def test_choice_validation():
    cat = enumerate_catalog(8)
    with pytest.raises(InvalidArgumentError):
        partition_indices(PartitionChoice([35, 0]), cat, 16)
    with pytest.raises(InvalidArgumentError):
        partition_indices(PartitionChoice([0]), cat, 16)


def test_zero_roundtrip():
    cat = enumerate_catalog(8)
    ch = PartitionChoice([3, 17])
    out = merge_partition(apply_partition(np.zeros(16), ch, cat), ch, cat)
    assert np.all(out.samples == 0)
    assert out.sample_rate_hz == 256.0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.sampled_from([2, 4, 6, 8]))
def test_merge_inverts_partition(k, seed, W):
    rng = np.random.default_rng(seed)
    cat = enumerate_catalog(W)
    s = Signal(rng.normal(size=k * W))
    ch = random_choice(k, cat, rng)
    pair = apply_partition(s, ch, cat)
    assert len(pair.left) == len(pair.right) == len(s) // 2
    assert merge_partition(pair, ch, cat) == s


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_partition_is_a_disjoint_cover(k, seed):
    rng = np.random.default_rng(seed)
    cat = enumerate_catalog(8)
    li, ri = partition_indices(random_choice(k, cat, rng), cat, 8 * k)
    assert np.array_equal(np.sort(np.concatenate([li, ri])), np.arange(8 * k))
    # every window contributes exactly W/2 samples to each side
    assert np.all(np.bincount(li // 8, minlength=k) == 4)


def test_project_matches_pair():
    cat = enumerate_catalog(8)
    s = np.arange(16.0)
    ch = PartitionChoice([5, 9])
    pair = apply_partition(s, ch, cat)
    assert project(s, ch, cat, "left") == pair.left
    assert project(s, ch, cat, "right") == pair.right
    with pytest.raises(InvalidArgumentError):
        project(s, ch, cat, "middle")


def test_pair_swap_and_length_check():
    a, b = Signal([1.0, 2.0]), Signal([3.0, 4.0])
    assert SubSignalPair(a, b).swapped().left == b
    with pytest.raises(InvalidArgumentError):
        SubSignalPair(a, Signal([1.0]))


def test_signal_validation():
    with pytest.raises(InvalidArgumentError):
        Signal([])
    with pytest.raises(InvalidArgumentError):
        Signal([1.0, np.nan])
    with pytest.raises(InvalidArgumentError):
        Signal([1.0], sample_rate_hz=0)
    s = Signal([1.0, 2.0])
    with pytest.raises(ValueError):
        s.samples[0] = 5.0
    assert s.duration_s == 2 / 256


def test_mismatch_counterexample_w4():
    cat = enumerate_catalog(4)
    x = np.array([1.0, -1.0, 1.0, -1.0])
    mism = [clean_mismatch(x, PartitionChoice([a]), cat) for a in range(len(cat))]
    assert min(mism) == 0.0
    assert mism[cat.interleaved_index] == 8.0


@pytest.mark.parametrize("fmt", ["text", "bin"])
def test_signal_file_roundtrip(tmp_path, fmt):
    s = Signal(np.linspace(-1, 1, 16), 128.0)
    p = write_signal(tmp_path / f"s.{fmt}", s, fmt, extra={"id": "x"})
    back = read_signal(p)
    assert back.sample_rate_hz == 128.0
    tol = 0 if fmt == "text" else 1e-7
    np.testing.assert_allclose(back.samples, s.samples, atol=tol)


def test_signal_file_errors(tmp_path):
    with pytest.raises(SignalFileError):
        read_signal(tmp_path / "missing.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("# header\n1.0\nfoo\n")
    with pytest.raises(SignalFileError):
        read_signal(bad)
    ok = tmp_path / "ok.txt"
    ok.write_text("# header\n1.0\n2.0\n")
    assert len(read_signal(ok)) == 2
    (tmp_path / "ok.txt.json").write_text('{"length": 3}')
    with pytest.raises(SignalFileError):
        read_signal(ok)
