"""``casd`` command line: gen, train, eval, ablate, gradcheck."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Settings, load_settings
from .data import Dataset, export_jsonl, generate, load_jsonl
from .errors import CASDError, ConfigError, DataError, UsageError
from .gradcheck import TOLERANCE, run_suite
from .train import (
    FULL_MASK,
    PARTIAL_MASKS,
    TeacherStudentPair,
    cotrain,
    evaluate,
    mask_name,
    pretrain_teacher,
)

log = logging.getLogger("casd")

SPLITS = ("train", "val", "test")
P_SWEEP = tuple(round(0.1 * i, 1) for i in range(11))
VALID_CONDITIONS = [mask_name(m) for m in PARTIAL_MASKS] + ["Avg.", mask_name(FULL_MASK)]

# cumulative component order of the ablation table
ABLATION_VARIANTS = (
    ("I", "baseline", dict(fusion="mean", alpha=0.0, beta=0.0, rrm=False)),
    ("II", "+confidence-aware", dict(fusion="confidence", alpha=1.0, beta=0.0, rrm=False)),
    ("III", "+L_UF", dict(fusion="confidence", alpha=1.0, beta=0.1, rrm=False)),
    ("IV", "+RRM", dict(fusion="confidence", alpha=1.0, beta=0.1, rrm=True)),
)


# ----------------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------------


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, newline="")
    return text


class Manifest:
    """Run record written before any computation and completed at the end."""

    def __init__(self, out: Path, command: str, settings: Settings, inputs: Dict[str, str]):
        self.path = out / "manifest.json"
        self.record = {
            "command": command,
            "seed": settings.seed,
            "output_dir": str(out),
            "started": datetime.now(timezone.utc).isoformat(),
            "config": settings.to_text().splitlines(),
            "inputs": inputs,
            "outputs": {},
        }
        self._write()

    def finish(self, outputs: Sequence[Path]) -> None:
        self.record["outputs"] = {p.name: sha256(p) for p in outputs}
        self.record["finished"] = datetime.now(timezone.utc).isoformat()
        self._write()

    def _write(self) -> None:
        self.path.write_text(json.dumps(self.record, indent=2) + "\n")


def _out_dir(path: Optional[str]) -> Path:
    if not path:
        raise UsageError("--out is required")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".casd-write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise CASDError(f"cannot write to {out}: {e}") from None
    return out


def _settings(args, **extra) -> Settings:
    overrides = dict(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for key in ("alpha", "beta", "temperature", "freeze_teacher", "normalized_weights"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    overrides.update(extra)
    return load_settings(getattr(args, "config", None), overrides)


def _load_split(data_dir, name: str, settings: Settings) -> Dataset:
    path = Path(data_dir) / f"{name}.jsonl"
    if not path.exists():
        raise DataError(f"missing dataset file {path}")
    return load_jsonl(path, settings.T, (settings.d_l, settings.d_a, settings.d_v), settings.n_classes, name)


def _data_inputs(data_dir, names=SPLITS) -> Dict[str, str]:
    return {f"{n}.jsonl": sha256(Path(data_dir) / f"{n}.jsonl")
            for n in names if (Path(data_dir) / f"{n}.jsonl").exists()}


def _need_data(args) -> Path:
    if not args.data:
        raise UsageError("--data is required")
    return Path(args.data)


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_gen(args) -> int:
    settings = _settings(args)
    out = _out_dir(args.out)
    manifest = Manifest(out, "gen", settings, {})
    paths = []
    for name, ds in zip(SPLITS, generate(settings.synthetic_spec())):
        path = out / f"{name}.jsonl"
        export_jsonl(ds, path)
        paths.append(path)
        print(f"{name}: {len(ds)} samples -> {path}")
    manifest.finish(paths)
    return 0


TRAIN_LOG_HEADER = ("phase", "epoch", "ce", "l_logits", "l_uf", "total", "u_student", "u_teacher", "u_gap")


def _nan_to_none(v):
    return None if v is None or (isinstance(v, float) and np.isnan(v)) else v


def cmd_train(args) -> int:
    settings = _settings(args)
    out = _out_dir(args.out)
    data_dir = _need_data(args)
    manifest = Manifest(out, "train", settings, _data_inputs(data_dir, ("train",)))
    train = _load_split(data_dir, "train", settings)
    cfg = settings.train_config()
    pair = TeacherStudentPair.init(settings.encoder_config(), settings.seed)
    _, t_hist = pretrain_teacher(pair, train, cfg)
    _, s_hist = cotrain(pair, train, cfg)
    rows = [("teacher", h["epoch"], h["ce"], 0.0, 0.0, h["ce"], None, h["U"], None) for h in t_hist]
    rows += [("cotrain", h["epoch"], h["ce"], h["logits"], h["unc"], h["total"], h["U_student"],
              _nan_to_none(h["U_teacher"]), _nan_to_none(h["U_gap"])) for h in s_hist]
    paths = [out / "teacher.ckpt", out / "student.ckpt", out / "train_log.csv"]
    save_checkpoint(paths[0], pair.teacher, settings)
    save_checkpoint(paths[1], pair.student, settings)
    write_csv(paths[2], TRAIN_LOG_HEADER, rows)
    if s_hist:
        last = s_hist[-1]
        print(f"co-training done: epoch {last['epoch']} total={last['total']:.4f} ce={last['ce']:.4f}")
    manifest.finish(paths)
    return 0


def split_conditions(text: str) -> List[str]:
    """Split ``{l},{l,a},p=0.3`` at commas outside braces."""
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts


def _canonical(name: str) -> str:
    if name in ("Avg", "Avg."):
        return "Avg."
    m = re.fullmatch(r"\{\s*([lav](?:\s*,\s*[lav])*)\s*\}", name)
    if m:
        letters = [c.strip() for c in m.group(1).split(",")]
        if len(set(letters)) == len(letters):
            return mask_name(frozenset(letters))
    raise UsageError(f"unknown condition {name!r}; valid names: {', '.join(VALID_CONDITIONS)}")


METRIC_HEADER_BASE = ("condition", "macro_f1", "weighted_f1", "accuracy")


def metrics_table(model, test: Dataset, cfg, conditions: Sequence[str], p_sweep: bool, eval_seed: int):
    masks = {mask_name(m): m for m in PARTIAL_MASKS + (FULL_MASK,)}
    C = model.config.n_classes
    header = list(METRIC_HEADER_BASE) + [f"f1_class{c}" for c in range(C)]
    results: Dict[str, dict] = {}
    rows = []

    def row(r):
        return [r["condition"], r["macro_f1"], r["weighted_f1"], r["accuracy"], *r["per_class_f1"]]

    for name in conditions:
        if name == "Avg.":
            for m in PARTIAL_MASKS:
                results.setdefault(mask_name(m), evaluate(model, test, m, cfg, eval_seed))
            avg = float(np.mean([results[mask_name(m)]["macro_f1"] for m in PARTIAL_MASKS]))
            rows.append(["Avg.", avg, None, None] + [None] * C)
            continue
        r = results.setdefault(name, evaluate(model, test, masks[name], cfg, eval_seed))
        rows.append(row(r))
    if p_sweep:
        for p in P_SWEEP:
            rows.append(row(evaluate(model, test, p, cfg, eval_seed)))
    return header, rows


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    conditions = [_canonical(c) for c in split_conditions(args.conditions)] if args.conditions else VALID_CONDITIONS
    model, settings = load_checkpoint(args.checkpoint)
    data_dir = _need_data(args)
    out = Path(args.out) if args.out else None
    if out is not None:
        out = _out_dir(args.out)
        Manifest(out, "eval", settings, {"checkpoint": sha256(args.checkpoint), **_data_inputs(data_dir, ("test",))})
    test = _load_split(data_dir, "test", settings)
    header, rows = metrics_table(model, test, settings.train_config(), conditions, args.p_sweep, settings.eval_seed)
    text = write_csv(out / "metrics.csv" if out else None, header, rows)
    sys.stdout.write(text)
    if out is not None:
        manifest_path = out / "manifest.json"
        record = json.loads(manifest_path.read_text())
        record["outputs"] = {"metrics.csv": sha256(out / "metrics.csv")}
        manifest_path.write_text(json.dumps(record, indent=2) + "\n")
    return 0


def _ablation_job(job):
    """Train one variant for one seed; returns (variant, seed, avg_f1, full_f1)."""
    settings_text, data_dir, variant, seed = job
    from .config import coerce, parse_text

    settings = Settings(**coerce(parse_text(settings_text))).replace(seed=seed)
    overrides = dict(next(v for v in ABLATION_VARIANTS if v[0] == variant)[2])
    train = _load_split(data_dir, "train", settings)
    test = _load_split(data_dir, "test", settings)
    return (variant, seed) + run_variant(settings.replace(**overrides), train, test)


def ablation_teacher(settings: Settings, train: Dataset):
    """Teacher shared by the distilling rows: full forward (confidence fusion, RRM on).

    Only student-side components vary across rows. A teacher trained without
    RRM never receives a gradient on its scale head, so its U_F would be
    arbitrary.
    """
    full = settings.replace(**ABLATION_VARIANTS[-1][2])
    pair = TeacherStudentPair.init(full.encoder_config(), full.seed)
    teacher, _ = pretrain_teacher(pair, train, full.train_config())
    return teacher


def run_variant(settings: Settings, train: Dataset, test: Dataset, teacher=None):
    """Train the student of one ablation row; returns (Avg. macro F1, full-mask macro F1)."""
    cfg = settings.train_config()
    pair = TeacherStudentPair.init(settings.encoder_config(), settings.seed)
    if cfg.loss.alpha > 0 or cfg.loss.beta > 0:
        pair.teacher = teacher if teacher is not None else ablation_teacher(settings, train)
    cotrain(pair, train, cfg)
    partial = [evaluate(pair.student, test, m, cfg, settings.eval_seed)["macro_f1"] for m in PARTIAL_MASKS]
    full = evaluate(pair.student, test, FULL_MASK, cfg, settings.eval_seed)["macro_f1"]
    return float(np.mean(partial)), float(full)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CASD_THREADS", "1")))
    except ValueError:
        raise ConfigError("CASD_THREADS must be an integer") from None


ABLATION_HEADER = ("row", "variant", "fusion", "alpha", "beta", "rrm", "avg_f1_mean", "avg_f1_std",
                   "full_f1_mean", "full_f1_std", "n_seeds")


def cmd_ablate(args) -> int:
    settings = _settings(args)
    out = _out_dir(args.out)
    data_dir = _need_data(args)
    manifest = Manifest(out, "ablate", settings, _data_inputs(data_dir, ("train", "test")))
    seeds = [settings.seed + i for i in range(settings.n_seeds)]
    jobs = [(settings.to_text(), str(data_dir), v[0], s) for v in ABLATION_VARIANTS for s in seeds]
    workers = min(_threads(), len(jobs))
    log.info("ablation: %d jobs on %d worker(s)", len(jobs), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_ablation_job, jobs))
    else:
        results = [_ablation_job(j) for j in jobs]
    rows = []
    for key, name, kw in ABLATION_VARIANTS:
        avg = [r[2] for r in results if r[0] == key]
        full = [r[3] for r in results if r[0] == key]
        rows.append([key, name, kw["fusion"], kw["alpha"], kw["beta"], kw["rrm"],
                     float(np.mean(avg)), float(np.std(avg)), float(np.mean(full)), float(np.std(full)), len(avg)])
    path = out / "ablation.csv"
    sys.stdout.write(write_csv(path, ABLATION_HEADER, rows))
    manifest.finish([path])
    return 0


def cmd_gradcheck(args) -> int:
    settings = _settings(args)
    results = run_suite(settings.seed)
    failed = False
    print("component,max_rel_error,status")
    for name, err, _ in results:
        ok = err <= TOLERANCE
        failed |= not ok
        print(f"{name},{err:.3e},{'pass' if ok else 'FAIL'}")
    return 4 if failed else 0


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _kv(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected KEY=VALUE")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casd", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", type=_kv, action="append", metavar="KEY=VALUE", help="override a config key")
        if data:
            p.add_argument("--data", help="directory holding train/val/test .jsonl")

    p = sub.add_parser("gen", help="write synthetic train/val/test JSONL")
    common(p, data=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="pretrain the teacher and co-train the student")
    common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--freeze-teacher", dest="freeze_teacher", type=_bool)
    p.add_argument("--normalized-weights", dest="normalized_weights", type=_bool)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under missing-modality conditions")
    common(p)
    p.add_argument("--checkpoint", help="student checkpoint")
    p.add_argument("--conditions", help="comma separated, e.g. '{l},{l,a},Avg.,{l,a,v}'")
    p.add_argument("--p-sweep", dest="p_sweep", action="store_true", help="add frame-drop rows p = 0.0 .. 1.0")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="component ablation over several seeds")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    common(p, data=False)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CASDError as e:
        print(f"casd {args.command}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
