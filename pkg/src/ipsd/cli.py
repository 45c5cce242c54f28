"""Command-line driver: data generation, training, denoising, zero-shot runs, ablations, evaluation.

Every output file carries the resolved configuration (JSON ``config`` key,
``# config:`` CSV header, or signal sidecar). Exit codes: 0 success,
2 configuration error, 3 numeric divergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as C
from ._parallel import JobRunner
from .data import gen_clean, gen_noise, metric_record, mix_at_snr
from .denoiser import denoise_with_choice
from .errors import (
    ConfigError,
    InvalidArgumentError,
    SignalFileError,
    TrainingDivergedError,
    UpdateDivergedError,
)
from .policy import denoise_with_policy, load_policy, save_policy, train_ipsd, write_report_csv
from .signals import Signal, WindowGrid, check_divisible, enumerate_catalog, interleaved_choice, read_signal, write_signal
from .zeroshot import run_zero_shot, write_history_csv

METHODS = ("ID", "iPSD", "iPSD-Zero")
TABLE_METRICS = ("output_snr_db", "psnr_db", "spectral_mse")
NOISE_FLAG = {"wgn": "wgn", "emg": "emg_surrogate", "file": "file"}

# fields that never change results; kept out of embedded configs so
# reruns into another directory or with another worker count are byte-identical
_NOT_EMBEDDED = ("out", "workers")


def embedded_config(cfg: C.ExperimentConfig) -> dict:
    d = cfg.to_dict()
    for k in _NOT_EMBEDDED:
        d.pop(k, None)
    return json.loads(json.dumps(d))


# --- output helpers ----------------------------------------------------------

def _dump_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _cell(v):
    return repr(v) if isinstance(v, float) else v


def write_records(stem: Path, records: list[dict], config: dict, fmt: str, key: str = "records") -> Path:
    """Write a list of flat dicts as ``<stem>.json`` or ``<stem>.csv``."""
    if fmt == "json":
        return _dump_json(stem.with_suffix(".json"), {"config": config, key: records})
    path = stem.with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    cols: list[str] = []
    for r in records:
        cols += [c for c in r if c not in cols]
    with path.open("w", newline="") as fh:
        fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in records:
            w.writerow([_cell(r.get(c, "")) for c in cols])
    return path


# --- datasets ----------------------------------------------------------------

class Dataset:
    """A generated dataset directory: signal files plus ``manifest.json``."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        try:
            self.manifest = json.loads(path.read_text())
        except OSError as e:
            raise SignalFileError(f"cannot read dataset manifest {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: malformed manifest: {e}") from e
        self.entries = {e["id"]: e for e in self.manifest["signals"]}

    def ids(self, split: str) -> list[str]:
        if split == "all":
            return [e["id"] for e in self.manifest["signals"]]
        return list(self.manifest[split])

    def load(self, sid: str, kind: str) -> Signal:
        return read_signal(self.root / self.entries[sid][kind])

    @property
    def condition(self) -> str:
        cfg = self.manifest["config"]
        snr = cfg["noise"]["target_snr_db"]
        return f"{cfg['clean']['family']}+{cfg['noise']['kind']}@{snr:g}dB"


def split_counts(n: int) -> int:
    """Number of training signals under the 80/20 split."""
    return int(math.floor(0.8 * n + 0.5))


def cmd_gen_data(cfg: C.ExperimentConfig) -> list[Path]:
    out = Path(cfg.out)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_signals
    perm = rng.permutation(n)
    n_train = split_counts(n)
    split = {int(i): ("train" if k < n_train else "test") for k, i in enumerate(perm)}
    seeds = rng.integers(2**63, size=n)
    embedded = embedded_config(cfg)
    written, entries = [], []
    for i in range(n):
        sid = f"sig_{i:03d}"
        r = np.random.default_rng(int(seeds[i]))
        x = gen_clean(cfg.clean, r)
        L = check_divisible(len(x), cfg.window_len, cfg.truncate)
        x = Signal(x.samples[:L], x.sample_rate_hz)
        noise = gen_noise(cfg.noise, L, r, x.sample_rate_hz)
        noisy, c = mix_at_snr(x, noise, cfg.noise.target_snr_db)
        scaled = Signal(c * noise.samples, x.sample_rate_hz)
        ext = "txt" if cfg.signal_format == "text" else "bin"
        entry = {"id": sid, "split": split[i], "seed": int(seeds[i]), "noise_scale": c}
        for kind, sig in (("clean", x), ("noise", scaled), ("noisy", noisy)):
            rel = f"{kind}/{sid}.{ext}"
            written.append(write_signal(out / rel, sig, cfg.signal_format, {"config": embedded, "id": sid}))
            entry[kind] = rel
        entries.append(entry)
    manifest = {
        "config": embedded,
        "signals": entries,
        "train": [e["id"] for e in entries if e["split"] == "train"],
        "test": [e["id"] for e in entries if e["split"] == "test"],
    }
    written.append(_dump_json(out / "manifest.json", manifest))
    return written


# --- per-signal jobs (module level so worker processes can import them) --------

def _with_context(sid: str, fn, *args):
    try:
        return fn(*args)
    except (TrainingDivergedError, UpdateDivergedError, InvalidArgumentError, SignalFileError) as e:
        raise type(e)(f"signal {sid}: {e}") from e


def _id_job(job):
    sid, s, cfg = job
    cat = enumerate_catalog(cfg.window_len)
    choice = interleaved_choice(WindowGrid(len(s), cfg.window_len), cat)
    return _with_context(sid, lambda: denoise_with_choice(s, choice, cat, cfg.criterion, cfg.seed, cfg.denoiser)[0])


def _policy_job(job):
    sid, s, cfg, net = job
    return _with_context(sid, denoise_with_policy, net, s, cfg.criterion, cfg.seed, cfg.denoiser)


def _zero_job(job):
    sid, s, cfg, inner_workers = job
    return _with_context(sid, run_zero_shot, s, cfg.bandit, cfg.criterion, cfg.seed, cfg.window_len,
                         cfg.denoiser, None, inner_workers)


def _inputs(cfg: C.ExperimentConfig) -> list[tuple[str, Signal, Signal | None]]:
    """(id, noisy, clean-or-None) for --input or the selected dataset split."""
    items = []
    if cfg.input:
        s = read_signal(cfg.input)
        items.append((Path(cfg.input).stem, s, None))
    for root in cfg.dataset:
        ds = Dataset(root)
        for sid in ds.ids(cfg.split):
            items.append((sid, ds.load(sid, "noisy"), ds.load(sid, "clean")))
    if not items:
        raise ConfigError("no input signals selected")
    out = []
    for sid, s, x in items:
        L = check_divisible(len(s), cfg.window_len, cfg.truncate)
        s = Signal(s.samples[:L], s.sample_rate_hz)
        x = None if x is None else Signal(x.samples[:L], x.sample_rate_hz)
        out.append((sid, s, x))
    return out


def _run_signals(cfg, fn, jobs):
    with JobRunner(cfg.resolved_workers()) as pool:
        return pool.map(fn, jobs)


def _write_outputs(cfg, items, denoised, extra_records=None) -> list[Path]:
    out, embedded = Path(cfg.out), embedded_config(cfg)
    ext = "txt" if cfg.signal_format == "text" else "bin"
    written, records = [], []
    for k, ((sid, s, x), y) in enumerate(zip(items, denoised)):
        written.append(write_signal(out / "denoised" / f"{sid}.{ext}", y, cfg.signal_format,
                                    {"config": embedded, "id": sid}))
        rec = {"signal_id": sid}
        if x is not None:
            rec = metric_record(sid, x, s, y, cfg.welch)
        if extra_records:
            rec.update(extra_records[k])
        records.append(rec)
    written.append(write_records(out / "metrics", records, embedded, cfg.format))
    return written


def cmd_train(cfg: C.ExperimentConfig) -> list[Path]:
    net, report = cmd_train_net(cfg)
    out, embedded = Path(cfg.out), embedded_config(cfg)
    paths = list(save_policy(out / "policy", net, embedded))
    paths.append(write_report_csv(out / "train_report.csv", report, embedded))
    return paths


def _load_policy_checked(cfg):
    try:
        net = load_policy(cfg.checkpoint)
    except (KeyError, ValueError) as e:
        raise ConfigError(f"checkpoint {cfg.checkpoint}: {e}") from e
    if net.window_len != cfg.window_len:
        raise ConfigError(f"checkpoint window length {net.window_len} differs from --window-len {cfg.window_len}")
    return net


def cmd_denoise(cfg: C.ExperimentConfig) -> list[Path]:
    net = _load_policy_checked(cfg)
    items = _inputs(cfg)
    denoised = _run_signals(cfg, _policy_job, [(sid, s, cfg, net) for sid, s, _ in items])
    return _write_outputs(cfg, items, denoised)


def cmd_zeroshot(cfg: C.ExperimentConfig) -> list[Path]:
    items = _inputs(cfg)
    # one signal: parallelise its arm pulls; several: parallelise over signals
    inner = cfg.resolved_workers() if len(items) == 1 else 1
    jobs = [(sid, s, cfg, inner) for sid, s, _ in items]
    if len(items) == 1:
        results = [_zero_job(jobs[0])]
    else:
        results = _run_signals(cfg, _zero_job, jobs)
    out, embedded = Path(cfg.out), embedded_config(cfg)
    written = [write_history_csv(out / "history" / f"{sid}.csv", r.history, embedded)
               for (sid, _, _), r in zip(items, results)]
    extra = [{"best_arm": r.best_arm, "capped": r.capped, "pulls": int(r.state.counts.sum())} for r in results]
    return written + _write_outputs(cfg, items, [r.denoised for r in results], extra)


def _as_float(v) -> float:
    return math.inf if v == "inf" else float(v)


def summarize(records: list[dict], conditions: list[str]) -> list[dict]:
    """Method rows with mean and std of each metric per condition (std over segments)."""
    rows = []
    for m in METHODS:
        row = {"method": m}
        for cond in conditions:
            sel = [r for r in records if r["method"] == m and r["condition"] == cond]
            for metric in TABLE_METRICS:
                v = np.array([_as_float(r[metric]) for r in sel])
                row[f"{cond}/{metric}_mean"] = float(v.mean()) if v.size else math.nan
                row[f"{cond}/{metric}_std"] = float(v.std()) if v.size else math.nan
        rows.append(row)
    return rows


def cmd_ablate(cfg: C.ExperimentConfig) -> list[Path]:
    out, embedded = Path(cfg.out), embedded_config(cfg)
    written, records, conditions = [], [], []
    for d_idx, root in enumerate(cfg.dataset):
        ds = Dataset(root)
        cond = ds.condition
        conditions.append(cond)
        sub = replace(cfg, dataset=(root,), input=None)
        items = _inputs(sub)
        if cfg.checkpoint:
            net = _load_policy_checked(cfg)
        else:
            net, report = cmd_train_net(sub)
            stem = out / f"policy_{d_idx}"
            written += list(save_policy(stem, net, embedded))
            written.append(write_report_csv(out / f"train_report_{d_idx}.csv", report, embedded))
        jobs = [(sid, s, cfg) for sid, s, _ in items]
        outs = {
            "ID": _run_signals(cfg, _id_job, jobs),
            "iPSD": _run_signals(cfg, _policy_job, [j + (net,) for j in jobs]),
            "iPSD-Zero": [r.denoised for r in _run_signals(cfg, _zero_job, [j + (1,) for j in jobs])],
        }
        for m in METHODS:
            for (sid, s, x), y in zip(items, outs[m]):
                rec = metric_record(sid, x, s, y, cfg.welch)
                records.append({"method": m, "condition": cond, **rec})
    written.append(write_records(out / "ablation_records", records, embedded, cfg.format))
    written.append(write_records(out / "ablation", summarize(records, conditions), embedded, cfg.format, "table"))
    return written


def cmd_train_net(cfg: C.ExperimentConfig):
    trainset = []
    for root in cfg.dataset:
        ds = Dataset(root)
        for sid in ds.ids("train"):
            s = ds.load(sid, "noisy")
            L = check_divisible(len(s), cfg.window_len, cfg.truncate)
            trainset.append(Signal(s.samples[:L], s.sample_rate_hz))
    if not trainset:
        raise ConfigError("training split is empty")
    return train_ipsd(trainset, cfg.train, cfg.criterion, cfg.seed, cfg.denoiser, cfg.resolved_workers())


def cmd_eval(cfg: C.ExperimentConfig) -> list[Path]:
    records = []
    for root in cfg.dataset:
        ds = Dataset(root)
        for sid in ds.ids(cfg.split):
            matches = sorted(Path(cfg.denoised).glob(f"{sid}.*"))
            matches = [p for p in matches if p.suffix != ".json"]
            if not matches:
                raise SignalFileError(f"no denoised file for {sid} in {cfg.denoised}")
            y, x, s = read_signal(matches[0]), ds.load(sid, "clean"), ds.load(sid, "noisy")
            if len(y) != len(x):
                L = len(y)
                x, s = Signal(x.samples[:L], x.sample_rate_hz), Signal(s.samples[:L], s.sample_rate_hz)
            records.append(metric_record(sid, x, s, y, cfg.welch))
    return [write_records(Path(cfg.out) / "metrics", records, embedded_config(cfg), cfg.format)]


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "zeroshot": cmd_zeroshot,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
}


# --- argument handling ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--window-len", type=int)
    common.add_argument("--snr-db", type=float, help="target input SNR of generated data")
    common.add_argument("--noise", choices=sorted(NOISE_FLAG))
    common.add_argument("--noise-file", help="noise source when --noise file")
    common.add_argument("--mode", choices=["reinforce", "clipped"], help="policy update rule")
    common.add_argument("--workers", type=int, help="concurrent denoiser trainings (default: all cores)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=["json", "csv"], help="format of metric records and tables")
    common.add_argument("--truncate", action="store_true", default=None,
                        help="drop trailing samples that do not fill a window")

    p = argparse.ArgumentParser(prog="ipsd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", parents=[common], help="synthesize clean/noise/noisy signals")
    g.add_argument("--n-signals", type=int)
    g.add_argument("--family", choices=["bandmix", "period2", "file"])
    g.add_argument("--duration", type=float, help="seconds per signal")
    t = sub.add_parser("train", parents=[common], help="train the partition policy on a dataset")
    t.add_argument("--dataset", action="append")
    t.add_argument("--updates", type=int, help="policy updates")
    t.add_argument("--batch-size", type=int)
    d = sub.add_parser("denoise", parents=[common], help="denoise with a trained policy")
    d.add_argument("--checkpoint", help="policy checkpoint stem")
    z = sub.add_parser("zeroshot", parents=[common], help="bandit search for one shared partition per signal")
    z.add_argument("--max-rounds", type=int)
    for sp in (d, z):
        sp.add_argument("--input", help="single signal file")
        sp.add_argument("--dataset", action="append")
        sp.add_argument("--split", choices=["train", "test", "all"])
    a = sub.add_parser("ablate", parents=[common], help="compare interleaved, learned and zero-shot partitioning")
    a.add_argument("--dataset", action="append")
    a.add_argument("--checkpoint", help="reuse a trained policy instead of training one")
    a.add_argument("--updates", type=int)
    a.add_argument("--batch-size", type=int)
    a.add_argument("--max-rounds", type=int)
    a.add_argument("--split", choices=["train", "test", "all"])
    e = sub.add_parser("eval", parents=[common], help="metric records for denoised files against a dataset")
    e.add_argument("--dataset", action="append")
    e.add_argument("--denoised", help="directory of denoised signals named <id>.<ext>")
    e.add_argument("--split", choices=["train", "test", "all"])
    return p


def _overrides(ns: argparse.Namespace) -> dict:
    """Translate parsed flags into the nested config layout; unset flags are skipped."""
    o: dict = {"mode": ns.command}
    v = vars(ns)

    def put(path, value):
        if value is None:
            return
        d = o
        for k in path[:-1]:
            d = d.setdefault(k, {})
        d[path[-1]] = value

    put(("seed",), v.get("seed"))
    put(("window_len",), v.get("window_len"))
    put(("noise", "target_snr_db"), v.get("snr_db"))
    if v.get("noise") is not None:
        put(("noise", "kind"), NOISE_FLAG[v["noise"]])
    put(("noise", "path"), v.get("noise_file"))
    put(("train", "mode"), v.get("mode"))
    put(("workers",), v.get("workers"))
    put(("out",), v.get("out"))
    put(("format",), v.get("format"))
    put(("truncate",), v.get("truncate"))
    put(("n_signals",), v.get("n_signals"))
    put(("clean", "family"), v.get("family"))
    put(("clean", "duration_s"), v.get("duration"))
    put(("train", "total_updates"), v.get("updates"))
    put(("train", "batch_size"), v.get("batch_size"))
    put(("bandit", "max_rounds"), v.get("max_rounds"))
    put(("checkpoint",), v.get("checkpoint"))
    put(("input",), v.get("input"))
    put(("denoised",), v.get("denoised"))
    put(("split",), v.get("split"))
    if v.get("dataset"):
        o["dataset"] = list(v["dataset"])
    return o


def resolve(ns: argparse.Namespace) -> C.ExperimentConfig:
    base = C.load_config_file(ns.config) if ns.config else {}
    merged = C.merge(base, _overrides(ns))
    # the policy's window length follows the top-level one unless set explicitly
    W = merged.get("window_len", C.ExperimentConfig.window_len)
    merged.setdefault("train", {}).setdefault("window_len", W)
    try:
        cfg = C.from_dict(merged)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    C.validate(cfg)
    return cfg


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = resolve(ns)
        paths = COMMANDS[cfg.mode](cfg)
    except (ConfigError, InvalidArgumentError) as e:
        print(f"ipsd: config error: {e}", file=sys.stderr)
        return 2
    except (TrainingDivergedError, UpdateDivergedError, FloatingPointError) as e:
        print(f"ipsd: numeric divergence: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"ipsd: I/O error: {e}", file=sys.stderr)
        return 4
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
