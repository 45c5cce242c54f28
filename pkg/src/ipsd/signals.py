"""Signals, window grids and the within-window partition catalog.

A signal of length ``L`` is cut into ``L // W`` non-overlapping windows.
Each window is split into two halves of ``W // 2`` samples; the catalog
lists every such split once (the half containing index 0 is kept, its
complement is implied). A :class:`PartitionChoice` picks one catalog
entry per window, and :func:`apply_partition` gathers the two
sub-signals.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Literal, Sequence, Union

import numpy as np

from .errors import InvalidArgumentError, SignalFileError

MAX_WINDOW_LEN = 12

ArrayLike = Union["Signal", np.ndarray, Sequence[float]]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Signal:
    """A finite 1D real signal with its sample rate."""

    samples: np.ndarray
    sample_rate_hz: float = 256.0

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64, copy=True).reshape(-1)
        if x.size < 1:
            raise InvalidArgumentError("signal must contain at least one sample")
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("signal samples must be finite")
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise InvalidArgumentError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", _frozen(x))
        object.__setattr__(self, "sample_rate_hz", float(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return self.sample_rate_hz == other.sample_rate_hz and np.array_equal(self.samples, other.samples)

    def __hash__(self):
        return hash((self.sample_rate_hz, self.samples.tobytes()))

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples) -> "Signal":
        return Signal(samples, self.sample_rate_hz)


def as_array(s: ArrayLike) -> np.ndarray:
    if isinstance(s, Signal):
        return s.samples
    return np.asarray(s, dtype=np.float64).reshape(-1)


@dataclass(frozen=True)
class WindowGrid:
    signal_len: int
    window_len: int

    def __post_init__(self):
        L, W = self.signal_len, self.window_len
        if W < 2 or W % 2:
            raise InvalidArgumentError(f"window length must be even and >= 2, got {W}")
        if L < 1 or L % W:
            raise InvalidArgumentError(f"window length {W} does not divide signal length {L}")

    @property
    def n_windows(self) -> int:
        return self.signal_len // self.window_len


@dataclass(frozen=True)
class PartitionCatalog:
    """All equal-size splits of a length-``W`` window, up to complement.

    ``entries`` are sorted lexicographically and each contains index 0,
    so entry indices are stable and double as arm/class ids.
    """

    window_len: int
    entries: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.entries)

    @cached_property
    def left_indices(self) -> np.ndarray:
        return _frozen(np.array(self.entries, dtype=np.intp).reshape(len(self.entries), -1))

    @cached_property
    def right_indices(self) -> np.ndarray:
        full = set(range(self.window_len))
        right = [sorted(full.difference(e)) for e in self.entries]
        return _frozen(np.array(right, dtype=np.intp).reshape(len(self.entries), -1))

    def index_of(self, subset: Sequence[int]) -> int:
        key = tuple(sorted(int(i) for i in subset))
        if 0 not in key:
            key = tuple(sorted(set(range(self.window_len)).difference(key)))
        try:
            return self.entries.index(key)
        except ValueError:
            raise InvalidArgumentError(f"{subset} is not a half-split of a length-{self.window_len} window") from None

    @property
    def interleaved_index(self) -> int:
        i = self.index_of(range(0, self.window_len, 2))
        assert self.entries[i] == tuple(range(0, self.window_len, 2))
        return i


@lru_cache(maxsize=None)
def enumerate_catalog(window_len: int) -> PartitionCatalog:
    W = window_len
    if not isinstance(W, (int, np.integer)) or W % 2 or not 2 <= W <= MAX_WINDOW_LEN:
        raise InvalidArgumentError(f"window length must be even and in [2, {MAX_WINDOW_LEN}], got {W!r}")
    W = int(W)
    # combinations() is lexicographic; keeping those that contain 0 picks one per complement pair
    entries = tuple(c for c in itertools.combinations(range(W), W // 2) if c[0] == 0)
    return PartitionCatalog(W, entries)


@dataclass(frozen=True, eq=False)
class PartitionChoice:
    """One catalog index per window."""

    indices: np.ndarray = field()

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.intp, copy=True).reshape(-1)
        object.__setattr__(self, "indices", _frozen(idx))

    def __len__(self) -> int:
        return self.indices.size

    def __eq__(self, other):
        if not isinstance(other, PartitionChoice):
            return NotImplemented
        return np.array_equal(self.indices, other.indices)

    def __hash__(self):
        return hash(self.indices.tobytes())

    @classmethod
    def shared(cls, entry: int, n_windows: int) -> "PartitionChoice":
        return cls(np.full(n_windows, entry, dtype=np.intp))


@dataclass(frozen=True, eq=False)
class SubSignalPair:
    left: Signal
    right: Signal

    def __post_init__(self):
        if len(self.left) != len(self.right):
            raise InvalidArgumentError("sub-signals must have equal length")

    def swapped(self) -> "SubSignalPair":
        return SubSignalPair(self.right, self.left)


def interleaved_choice(grid: WindowGrid, catalog: PartitionCatalog) -> PartitionChoice:
    if catalog.window_len != grid.window_len:
        raise InvalidArgumentError("catalog and grid window lengths differ")
    return PartitionChoice.shared(catalog.interleaved_index, grid.n_windows)


def random_choice(n_windows: int, catalog: PartitionCatalog, rng: np.random.Generator) -> PartitionChoice:
    return PartitionChoice(rng.integers(0, len(catalog), size=n_windows))


def partition_indices(
    choice: PartitionChoice, catalog: PartitionCatalog, signal_len: int
) -> tuple[np.ndarray, np.ndarray]:
    """Global sample indices of the left and right sub-signals."""
    W = catalog.window_len
    if signal_len % W:
        raise InvalidArgumentError(f"window length {W} does not divide signal length {signal_len}")
    K = signal_len // W
    idx = choice.indices
    if idx.size != K:
        raise InvalidArgumentError(f"choice has {idx.size} windows, signal has {K}")
    if idx.size and (idx.min() < 0 or idx.max() >= len(catalog)):
        raise InvalidArgumentError("choice index outside the catalog")
    offsets = (np.arange(K) * W)[:, None]
    left = (catalog.left_indices[idx] + offsets).reshape(-1)
    right = (catalog.right_indices[idx] + offsets).reshape(-1)
    return left, right


def apply_partition(s: ArrayLike, choice: PartitionChoice, catalog: PartitionCatalog) -> SubSignalPair:
    x = as_array(s)
    rate = s.sample_rate_hz if isinstance(s, Signal) else 256.0
    li, ri = partition_indices(choice, catalog, x.size)
    # each half keeps one sample in two, so the sub-signal rate halves
    return SubSignalPair(Signal(x[li], rate / 2), Signal(x[ri], rate / 2))


def merge_partition(pair: SubSignalPair, choice: PartitionChoice, catalog: PartitionCatalog) -> Signal:
    n = len(pair.left)
    L = 2 * n
    li, ri = partition_indices(choice, catalog, L)
    out = np.empty(L, dtype=np.float64)
    out[li] = pair.left.samples
    out[ri] = pair.right.samples
    return Signal(out, pair.left.sample_rate_hz * 2)


def project(
    s_full: ArrayLike, choice: PartitionChoice, catalog: PartitionCatalog, side: Literal["left", "right"]
) -> Signal:
    pair = apply_partition(s_full, choice, catalog)
    if side == "left":
        return pair.left
    if side == "right":
        return pair.right
    raise InvalidArgumentError(f"side must be 'left' or 'right', got {side!r}")


def clean_mismatch(x: ArrayLike, choice: PartitionChoice, catalog: PartitionCatalog) -> float:
    """Squared distance between the clean halves a partition produces."""
    pair = apply_partition(x, choice, catalog)
    d = pair.left.samples - pair.right.samples
    return float(d @ d)


def check_divisible(n: int, window_len: int, truncate: bool = False) -> int:
    """Usable length for a window length; rejects leftovers unless ``truncate``."""
    if n % window_len == 0:
        return n
    if truncate and n >= window_len:
        return n - n % window_len
    raise InvalidArgumentError(
        f"signal length {n} is not a multiple of window length {window_len} (use truncate to drop the tail)"
    )


# --- file I/O ----------------------------------------------------------------
#
# text: one decimal sample per line, '#' lines ignored; optional sidecar
# binary: raw little-endian float32, sidecar required
# sidecar: <file>.json with sample_rate_hz, length, dtype (and free-form extras)

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_signal(path, s: Signal, fmt: Literal["text", "bin"] = "text", extra: dict | None = None) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "text":
            path.write_text("".join(f"{v!r}\n" for v in s.samples.tolist()))
            dtype = "text"
        elif fmt == "bin":
            path.write_bytes(s.samples.astype("<f4").tobytes())
            dtype = "float32le"
        else:
            raise InvalidArgumentError(f"unknown signal format {fmt!r}")
        meta = {"sample_rate_hz": s.sample_rate_hz, "length": len(s), "dtype": dtype}
        if extra:
            meta.update(extra)
        _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise SignalFileError(f"cannot write signal {path}: {e}") from e
    return path


def read_signal(path, sample_rate_hz: float | None = None) -> Signal:
    path = Path(path)
    side = _sidecar(path)
    try:
        meta = json.loads(side.read_text()) if side.exists() else {}
        dtype = meta.get("dtype", "text")
        if dtype == "float32le":
            x = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
        elif dtype == "text":
            lines = [ln.strip() for ln in path.read_text().splitlines()]
            x = np.array([float(ln) for ln in lines if ln and not ln.startswith("#")])
        else:
            raise SignalFileError(f"{side}: unknown dtype {dtype!r}")
    except (OSError, ValueError) as e:
        raise SignalFileError(f"cannot read signal {path}: {e}") from e
    if "length" in meta and int(meta["length"]) != x.size:
        raise SignalFileError(f"{path}: sidecar says {meta['length']} samples, file has {x.size}")
    rate = sample_rate_hz or meta.get("sample_rate_hz", 256.0)
    try:
        return Signal(x, rate)
    except InvalidArgumentError as e:
        raise SignalFileError(f"{path}: {e}") from e
