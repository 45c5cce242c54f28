import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipsd.data import (
    CleanSpec,
    Component,
    NoiseSpec,
    WelchConfig,
    gen_clean,
    gen_emg_surrogate,
    gen_noise,
    gen_wgn,
    metric_record,
    mix_at_snr,
    psnr_db,
    snr_db,
    spectral_mse,
    welch_psd,
)
from ipsd.errors import InvalidArgumentError, SignalFileError
from ipsd.signals import Signal, write_signal


def test_period2_definition():
    x = gen_clean(CleanSpec("period2", duration_s=8 / 256))
    np.testing.assert_array_equal(x.samples, [1, -1, 1, -1, 1, -1, 1, -1])


def test_bandmix_zero_amplitudes():
    comps = tuple(Component(b, amplitude=0.0) for b in [(1, 4), (8, 13)])
    assert np.all(gen_clean(CleanSpec(components=comps), 0).samples == 0)


def test_bandmix_deterministic_and_in_band():
    a = gen_clean(CleanSpec(), 7)
    assert a == gen_clean(CleanSpec(), 7)
    assert a != gen_clean(CleanSpec(), 8)
    f, p = welch_psd(a)
    assert p[(f >= 1) & (f <= 30)].sum() > 0.99 * p.sum()


def test_pinned_component_seed():
    spec = CleanSpec(components=(Component((8, 13), seed=3),))
    assert gen_clean(spec, 1) == gen_clean(spec, 2)


def test_clean_from_file(tmp_path):
    p = write_signal(tmp_path / "x.txt", Signal([1.0, 2.0, 3.0]))
    assert len(gen_clean(CleanSpec("file", path=str(p)))) == 3
    with pytest.raises(SignalFileError):
        gen_clean(CleanSpec("file", path=str(tmp_path / "nope.txt")))


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        CleanSpec("chirp")
    with pytest.raises(InvalidArgumentError):
        CleanSpec("period2", amplitude=-1)
    with pytest.raises(InvalidArgumentError):
        NoiseSpec("pink")
    with pytest.raises(InvalidArgumentError):
        NoiseSpec(target_snr_db=math.inf)


def test_mix_unit_powers_zero_db():
    x = np.ones(4)
    n = np.array([1.0, -1.0, 1.0, -1.0])
    _, c = mix_at_snr(x, n, 0.0)
    assert c == 1.0


def test_mix_minus_5_db():
    x = np.ones(100) / 10  # unit power
    n = gen_wgn(100, 0)
    n = n / np.linalg.norm(n)
    _, c = mix_at_snr(x, n, -5.0)
    assert math.isclose(c**2, 10**0.5, rel_tol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(-10, 10), st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_mix_hits_target(db, seed, amp):
    rng = np.random.default_rng(seed)
    x = amp * rng.standard_normal(64)
    n = rng.standard_normal(64)
    y, c = mix_at_snr(x, n, db)
    assert abs(snr_db(x, y) - db) < 1e-9


def test_mix_rejects_zero_power():
    with pytest.raises(InvalidArgumentError):
        mix_at_snr(np.zeros(4), np.ones(4), 0)
    with pytest.raises(InvalidArgumentError):
        mix_at_snr(np.ones(4), np.zeros(4), 0)
    with pytest.raises(InvalidArgumentError):
        mix_at_snr(np.ones(4), np.ones(3), 0)


def test_snr_examples():
    assert snr_db([1.0, 2.0], [0.0, 0.0]) == 0.0
    assert math.isclose(snr_db([3.0, 4.0], [3.0, 4.5]), 20.0, abs_tol=1e-9)
    assert snr_db([1.0, 2.0], [1.0, 2.0]) == math.inf


def test_psnr_examples():
    x = np.array([1.0, -2.0, 1.0, 0.0])
    assert math.isclose(psnr_db(x, x - [1, 0, 0, 0]), 10 * math.log10(16), abs_tol=1e-9)
    assert psnr_db(x, x) == math.inf


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_psnr_scale_invariant(seed, k):
    rng = np.random.default_rng(seed)
    x, xh = rng.standard_normal(32), rng.standard_normal(32)
    assert math.isclose(psnr_db(k * x, k * xh), psnr_db(x, xh), abs_tol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_snr_residual_identity(seed):
    rng = np.random.default_rng(seed)
    x, r = rng.standard_normal(32), rng.standard_normal(32)
    assert abs(snr_db(x, x + r) + 10 * math.log10((r @ r) / (x @ x))) < 1e-9


def test_welch_parseval_wgn():
    for seed in range(50):
        f, p = welch_psd(gen_wgn(2560, seed))
        total = p.sum() * (f[1] - f[0])
        assert 0.9 <= total <= 1.1


def test_welch_tone():
    t = np.arange(2560) / 256
    f, p = welch_psd(np.sin(2 * np.pi * 10 * t))
    assert abs(f[np.argmax(p)] - 10) <= f[1] - f[0]


def test_welch_zero_and_short():
    _, p = welch_psd(np.zeros(512))
    assert np.all(p == 1e-12)
    with pytest.raises(InvalidArgumentError):
        welch_psd(np.ones(100))


def test_spectral_mse_examples():
    x = gen_clean(CleanSpec(), 0)
    assert spectral_mse(x, x) == 0.0
    # broadband, so no bin sits on the floor
    w = gen_wgn(2560, 5)
    assert math.isclose(spectral_mse(w, 2 * w), (10 * math.log10(4)) ** 2, rel_tol=1e-9)
    y = x.samples + gen_wgn(len(x), 1)
    assert spectral_mse(x, y) == spectral_mse(y, x)


def test_emg_surrogate():
    variances, inband = [], []
    for seed in range(100):
        e = gen_emg_surrogate(2560, seed)
        variances.append(e.samples.var())
        f, p = welch_psd(e)
        inband.append(p[(f >= 20) & (f <= 120)].sum() / p.sum())
    assert 0.9 <= min(variances) and max(variances) <= 1.1
    assert min(inband) >= 0.9
    assert gen_emg_surrogate(2560, 3) == gen_emg_surrogate(2560, 3)
    with pytest.raises(InvalidArgumentError):
        gen_emg_surrogate(100, 0)


def test_emg_is_bursty():
    e = gen_emg_surrogate(2560, 0).samples
    env = np.convolve(e**2, np.ones(64) / 64, mode="same")
    quiet = (env < 0.05 * env.max()).mean()
    assert 0.2 < quiet < 0.9


def test_gen_noise_kinds(tmp_path):
    assert len(gen_noise(NoiseSpec("wgn"), 300, 0)) == 300
    assert len(gen_noise(NoiseSpec("emg_surrogate"), 300, 0)) == 300
    p = write_signal(tmp_path / "n.txt", Signal(np.ones(10)))
    assert len(gen_noise(NoiseSpec("file", path=str(p)), 8)) == 8
    with pytest.raises(InvalidArgumentError):
        gen_noise(NoiseSpec("file", path=str(p)), 20)


def test_metric_record():
    x = gen_clean(CleanSpec(), 0)
    rec = metric_record("s0", x, x.samples + 1, x)
    assert rec["output_snr_db"] == "inf" and rec["psnr_db"] == "inf"
    assert rec["welch_config"] == WelchConfig().digest()
    assert rec["spectral_mse"] == 0.0
