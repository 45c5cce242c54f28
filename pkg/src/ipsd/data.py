"""Synthetic clean signals and noise, SNR-exact mixing, and evaluation metrics."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from scipy import signal as sps

from .errors import InvalidArgumentError
from .signals import ArrayLike, Signal, as_array, read_signal

# canonical EEG bands in Hz
EEG_BANDS = {"delta": (1.0, 4.0), "theta": (4.0, 8.0), "alpha": (8.0, 13.0), "beta": (13.0, 30.0)}


@dataclass(frozen=True)
class Component:
    """Sinusoids drawn inside ``band_hz``; ``seed`` pins their frequencies and phases."""

    band_hz: tuple[float, float]
    amplitude: float = 1.0
    seed: int | None = None
    n_tones: int = 3


def default_components() -> tuple[Component, ...]:
    return tuple(Component(b) for b in EEG_BANDS.values())


@dataclass(frozen=True)
class CleanSpec:
    family: Literal["bandmix", "period2", "file"] = "bandmix"
    duration_s: float = 10.0
    sample_rate_hz: float = 256.0
    components: tuple[Component, ...] = field(default_factory=default_components)
    amplitude: float = 1.0                   # period2: the square-wave level a
    amplitude_range: tuple[float, float] | None = None  # period2: draw a uniformly instead
    path: str | None = None

    def __post_init__(self):
        if self.family not in ("bandmix", "period2", "file"):
            raise InvalidArgumentError(f"unknown clean family {self.family!r}")
        if self.family == "file" and not self.path:
            raise InvalidArgumentError("family 'file' needs a path")
        if self.duration_s <= 0 or self.sample_rate_hz <= 0:
            raise InvalidArgumentError("duration and sample rate must be positive")
        if self.amplitude < 0 or any(c.amplitude < 0 for c in self.components):
            raise InvalidArgumentError("amplitudes must be non-negative")

    @property
    def length(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))


@dataclass(frozen=True)
class NoiseSpec:
    kind: Literal["wgn", "emg_surrogate", "file"] = "wgn"
    target_snr_db: float = 0.0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("wgn", "emg_surrogate", "file"):
            raise InvalidArgumentError(f"unknown noise kind {self.kind!r}")
        if not math.isfinite(self.target_snr_db):
            raise InvalidArgumentError("target SNR must be finite")
        if self.kind == "file" and not self.path:
            raise InvalidArgumentError("noise kind 'file' needs a path")


@dataclass(frozen=True)
class WelchConfig:
    nperseg: int = 256
    overlap: float = 0.5
    window: str = "hann"
    floor: float = 1e-12

    def __post_init__(self):
        if self.nperseg < 1 or not 0 <= self.overlap < 1 or self.floor <= 0:
            raise InvalidArgumentError(f"invalid Welch config {self}")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:12]


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _bandmix(spec: CleanSpec, rng: np.random.Generator) -> np.ndarray:
    L, fs = spec.length, spec.sample_rate_hz
    t = np.arange(L) / fs
    x = np.zeros(L)
    for comp in spec.components:
        r = np.random.default_rng(comp.seed) if comp.seed is not None else rng
        lo, hi = comp.band_hz
        freqs = r.uniform(lo, hi, comp.n_tones)
        phases = r.uniform(0, 2 * np.pi, comp.n_tones)
        if comp.amplitude == 0:
            continue
        for f, ph in zip(freqs, phases):
            # 1/f amplitude decay, referenced to 1 Hz
            x += comp.amplitude / max(f, 1.0) * np.sin(2 * np.pi * f * t + ph)
    return x


def gen_clean(spec: CleanSpec, rng=None) -> Signal:
    rng = _rng(rng)
    if spec.family == "file":
        return read_signal(spec.path, spec.sample_rate_hz)
    if spec.family == "period2":
        a = spec.amplitude if spec.amplitude_range is None else rng.uniform(*spec.amplitude_range)
        x = a * np.where(np.arange(spec.length) % 2 == 0, 1.0, -1.0)
    else:
        x = _bandmix(spec, rng)
    return Signal(x, spec.sample_rate_hz)


def gen_wgn(length: int, rng=None) -> np.ndarray:
    return _rng(rng).standard_normal(length)


def gen_emg_surrogate(length: int, rng=None, sample_rate_hz: float = 256.0) -> Signal:
    """Band-limited (20-120 Hz) Gaussian noise gated by random bursts, scaled to unit variance."""
    if length < 256:
        raise InvalidArgumentError(f"EMG surrogate needs at least 256 samples, got {length}")
    rng = _rng(rng)
    fs = sample_rate_hz
    hi = min(120.0, 0.45 * fs)
    sos = sps.butter(6, [20.0, hi], btype="bandpass", fs=fs, output="sos")
    pad = 256
    carrier = sps.sosfiltfilt(sos, rng.standard_normal(length + 2 * pad))[pad:-pad]
    # alternate on/off stretches; mean on 0.85 s, mean off 1.3 s gives ~40% duty
    env = np.zeros(length)
    pos = int(rng.uniform(0, 1.3) * fs)
    while pos < length:
        on = int(rng.uniform(0.2, 1.5) * fs)
        env[pos:pos + on] = 1.0
        pos += on + int(rng.uniform(0.4, 2.2) * fs)
    if not env.any():
        start = int(rng.integers(0, length - int(0.2 * fs)))
        env[start:start + int(0.2 * fs)] = 1.0
    # short raised-cosine ramps avoid clicks at burst edges
    ramp = np.hanning(max(3, int(0.05 * fs)))
    env = np.convolve(env, ramp / ramp.sum(), mode="same")
    x = carrier * env
    return Signal(x / x.std(), fs)


def mix_at_snr(x: ArrayLike, n: ArrayLike, target_db: float) -> tuple[Signal, float]:
    """Return ``x + c*n`` with ``c`` such that the SNR of the mixture is ``target_db``."""
    xa, na = as_array(x), as_array(n)
    if xa.size != na.size:
        raise InvalidArgumentError(f"lengths differ: {xa.size} vs {na.size}")
    px, pn = float(xa @ xa), float(na @ na)
    if px == 0 or pn == 0:
        raise InvalidArgumentError("signal and noise must both have non-zero power")
    c = math.sqrt(px / (pn * 10.0 ** (target_db / 10.0)))
    rate = x.sample_rate_hz if isinstance(x, Signal) else 256.0
    return Signal(xa + c * na, rate), c


def gen_noise(spec: NoiseSpec, length: int, rng=None, sample_rate_hz: float = 256.0) -> Signal:
    if spec.kind == "wgn":
        return Signal(gen_wgn(length, rng), sample_rate_hz)
    if spec.kind == "emg_surrogate":
        return gen_emg_surrogate(length, rng, sample_rate_hz)
    n = read_signal(spec.path, sample_rate_hz)
    if len(n) < length:
        raise InvalidArgumentError(f"noise file {spec.path} has {len(n)} samples, need {length}")
    return Signal(n.samples[:length], sample_rate_hz)


# --- metrics -------------------------------------------------------------------

def snr_db(x: ArrayLike, xhat: ArrayLike) -> float:
    """10 log10(||x||^2 / ||x - xhat||^2); +inf when the residual vanishes."""
    xa, xh = as_array(x), as_array(xhat)
    if xa.size != xh.size:
        raise InvalidArgumentError("lengths differ")
    r = xa - xh
    pr = float(r @ r)
    if pr == 0:
        return math.inf
    return 10.0 * math.log10(float(xa @ xa) / pr)


def psnr_db(x: ArrayLike, xhat: ArrayLike) -> float:
    """Peak SNR with the peak taken as max |x|; +inf when the residual vanishes."""
    xa, xh = as_array(x), as_array(xhat)
    if xa.size != xh.size:
        raise InvalidArgumentError("lengths differ")
    r = xa - xh
    mse = float(r @ r) / xa.size
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(float(np.max(np.abs(xa))) ** 2 / mse)


def welch_psd(s: ArrayLike, cfg: WelchConfig = WelchConfig(), sample_rate_hz: float | None = None):
    """One-sided density PSD (integrates to the variance); floored at ``cfg.floor``."""
    x = as_array(s)
    if x.size < cfg.nperseg:
        raise InvalidArgumentError(f"signal of {x.size} samples is shorter than the {cfg.nperseg}-sample segment")
    fs = sample_rate_hz or (s.sample_rate_hz if isinstance(s, Signal) else 256.0)
    f, p = sps.welch(x, fs=fs, window=cfg.window, nperseg=cfg.nperseg,
                     noverlap=int(round(cfg.overlap * cfg.nperseg)), detrend=False,
                     return_onesided=True, scaling="density")
    return f, np.maximum(p, cfg.floor)


def spectral_mse(x: ArrayLike, xhat: ArrayLike, cfg: WelchConfig = WelchConfig()) -> float:
    """Mean over frequency bins of the squared difference of the two PSDs in dB."""
    if as_array(x).size != as_array(xhat).size:
        raise InvalidArgumentError("lengths differ")
    _, px = welch_psd(x, cfg)
    _, ph = welch_psd(xhat, cfg)
    d = 10.0 * np.log10(px) - 10.0 * np.log10(ph)
    return float(np.mean(d * d))


def metric_record(signal_id: str, clean: ArrayLike, noisy: ArrayLike, denoised: ArrayLike,
                  cfg: WelchConfig = WelchConfig()) -> dict:
    """One row of a metric report; infinite SNRs are written as the string "inf"."""
    def enc(v: float):
        return "inf" if math.isinf(v) else v

    return {
        "signal_id": signal_id,
        "input_snr_db": enc(snr_db(clean, noisy)),
        "output_snr_db": enc(snr_db(clean, denoised)),
        "psnr_db": enc(psnr_db(clean, denoised)),
        "spectral_mse": spectral_mse(clean, denoised, cfg),
        "welch_config": cfg.digest(),
    }
