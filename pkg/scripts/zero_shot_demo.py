"""Zero-shot denoising of one synthetic segment; prints the bandit's progress and the result.

    python3 scripts/zero_shot_demo.py --duration 10 --history history.csv
"""

import argparse
import time

import numpy as np

from ipsd.data import CleanSpec, NoiseSpec, gen_clean, gen_noise, mix_at_snr, snr_db
from ipsd.denoiser import ConvergenceCriterion
from ipsd.signals import enumerate_catalog
from ipsd.zeroshot import LilUcbConfig, config_dict, run_zero_shot, write_history_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="bandmix", choices=["bandmix", "period2"])
    ap.add_argument("--noise", default="wgn", choices=["wgn", "emg_surrogate"])
    ap.add_argument("--snr-db", type=float, default=0.0)
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--max-rounds", type=int, default=500)
    ap.add_argument("--max-steps", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--history", default=None, help="write the bandit history here")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    x = gen_clean(CleanSpec(family=args.family, duration_s=args.duration), rng)
    s, _ = mix_at_snr(x, gen_noise(NoiseSpec(kind=args.noise), len(x), rng), args.snr_db)
    cfg = LilUcbConfig(max_rounds=args.max_rounds)
    t0 = time.perf_counter()
    res = run_zero_shot(s, cfg, ConvergenceCriterion(max_steps=args.max_steps), rng, workers=args.workers)
    dt = time.perf_counter() - t0
    cat = enumerate_catalog(8)
    top = np.argsort(res.state.counts)[::-1][:5]
    print(f"{len(s)} samples, {int(res.state.counts.sum())} fits in {dt:.1f} s (capped: {res.capped})")
    for a in top:
        print(f"  arm {a:2d} left={cat.left_indices[a]} pulls={res.state.counts[a]:3d} mean reward={res.state.means[a]:.4f}")
    print(f"input SNR {snr_db(x, s):.2f} dB, output SNR {snr_db(x, res.denoised):.2f} dB")
    if args.history:
        write_history_csv(args.history, res.history, config_dict(cfg))


if __name__ == "__main__":
    main()
