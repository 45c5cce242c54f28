"""Interleaved vs. learned vs. zero-shot partitioning on synthetic data, one row per method.

Trains one policy on a separate training set, then denoises the same test
signals three ways and reports output SNR, PSNR and spectral MSE (mean and
std over signals). Full-length runs take hours on one core; shrink
--duration, --updates and --max-steps for a quick look.

    python3 scripts/run_ablation.py --family period2 --n-test 10 --updates 100 --out ablation.csv
"""

import argparse
import csv
import time

import numpy as np

from ipsd.data import CleanSpec, NoiseSpec, gen_clean, gen_noise, mix_at_snr, psnr_db, snr_db, spectral_mse
from ipsd.denoiser import ConvergenceCriterion, denoise_with_choice
from ipsd.policy import TrainConfig, denoise_with_policy, train_ipsd
from ipsd.signals import WindowGrid, enumerate_catalog, interleaved_choice
from ipsd.zeroshot import LilUcbConfig, run_zero_shot


def make(spec, noise, snr, seed):
    rng = np.random.default_rng(seed)
    x = gen_clean(spec, rng)
    s, _ = mix_at_snr(x, gen_noise(noise, len(x), rng), snr)
    return x, s


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="period2", choices=["bandmix", "period2"])
    ap.add_argument("--noise", default="wgn", choices=["wgn", "emg_surrogate"])
    ap.add_argument("--snr-db", type=float, default=0.0)
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--n-test", type=int, default=10)
    ap.add_argument("--n-train", type=int, default=8)
    ap.add_argument("--updates", type=int, default=100)
    ap.add_argument("--batch-size", type=int, default=8)
    ap.add_argument("--max-steps", type=int, default=2000)
    ap.add_argument("--max-rounds", type=int, default=500)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--skip-zero", action="store_true", help="leave out the zero-shot method")
    ap.add_argument("--out", default="ablation.csv")
    args = ap.parse_args()

    spec = CleanSpec(family=args.family, duration_s=args.duration)
    noise = NoiseSpec(kind=args.noise)
    crit = ConvergenceCriterion(max_steps=args.max_steps)
    tests = [make(spec, noise, args.snr_db, sd) for sd in range(args.n_test)]
    train = [make(spec, noise, args.snr_db, 1000 + sd)[1] for sd in range(args.n_train)]
    cat = enumerate_catalog(8)
    t0 = time.perf_counter()

    def log(msg):
        print(f"[{time.perf_counter() - t0:7.0f} s] {msg}", flush=True)

    outputs = {"ID": [], "iPSD": [], "iPSD-Zero": []}
    for sd, (x, s) in enumerate(tests):
        y, _ = denoise_with_choice(s, interleaved_choice(WindowGrid(len(s), 8), cat), cat, crit, sd)
        outputs["ID"].append(y)
        log(f"ID signal {sd}: {snr_db(x, y):.2f} dB")

    cfg = TrainConfig(batch_size=args.batch_size, total_updates=args.updates, stop_on_plateau=False)
    net, report = train_ipsd(train, cfg, crit, 0, workers=args.workers,
                             progress=lambda r: log(f"update {r['iteration']}: mean reward {r['mean_reward']:.4f}"))
    for sd, (x, s) in enumerate(tests):
        y = denoise_with_policy(net, s, crit, sd)
        outputs["iPSD"].append(y)
        log(f"iPSD signal {sd}: {snr_db(x, y):.2f} dB")

    if not args.skip_zero:
        for sd, (x, s) in enumerate(tests):
            res = run_zero_shot(s, LilUcbConfig(max_rounds=args.max_rounds), crit, sd, workers=args.workers)
            outputs["iPSD-Zero"].append(res.denoised)
            log(f"iPSD-Zero signal {sd}: {snr_db(x, res.denoised):.2f} dB (arm {res.best_arm}, capped {res.capped})")

    metrics = {"snr_db": snr_db, "psnr_db": psnr_db, "spectral_mse": spectral_mse}
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method"] + [f"{m}_{k}" for m in metrics for k in ("mean", "std")])
        for method, ys in outputs.items():
            if not ys:
                continue
            row = [method]
            for fn in metrics.values():
                v = np.array([fn(x, y) for (x, _), y in zip(tests, ys)])
                row += [v.mean(), v.std()]
            w.writerow(row)
            print(*[f"{c:.3f}" if isinstance(c, float) else c for c in row], sep="\t")


if __name__ == "__main__":
    main()
