"""Command-line entry point: ``larope {freqs,bounds,train,duration,maps,compare,check}``.

Exit codes: 0 success, 2 usage error, 3 numeric divergence, 4 IO error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import boundmap, toyalign
from .boundmap import SjMode
from .numkernel import make_rng
from .rotary import RotaryConfig, Variant, frequencies
from .selfcheck import run_checks
from .xattn import average_maps, forward

EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4



class UsageError(Exception):
    pass


def fmt(x: float) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(float(x), ".17g")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out) -> None:
    if out is None or str(out) == "-":
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _rotary_cfg(args) -> RotaryConfig:
    if args.d < 2 or args.d % 2:
        raise UsageError(f"--d must be an even integer >= 2 (got {args.d})")
    try:
        return RotaryConfig(args.d, args.base, args.gamma, args.variant)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_freqs(args) -> int:
    cfg = _rotary_cfg(args)
    rows = [(j, fmt(t)) for j, t in enumerate(frequencies(cfg))]
    _emit(_csv_text(("j", "theta"), rows), args.out)
    return 0


def sidecar_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.stem + ".json")


def cmd_bounds(args) -> int:
    cfg = _rotary_cfg(args)
    if args.lq < 1 or args.lk < 1:
        raise UsageError("--lq and --lk must be >= 1")
    if args.out is None:
        raise UsageError("bounds needs --out (the sidecar JSON is written next to it)")
    grid = boundmap.bound_grid(args.lq, args.lk, cfg, cfg.variant, args.sj_mode)
    rows = ((m, n, fmt(grid.values[m, n])) for m in range(args.lq) for n in range(args.lk))
    _emit(_csv_text(("m", "n", "value"), rows), args.out)
    ideal = boundmap.ideal_key_position(np.arange(args.lq), args.lq, args.lk)
    _write_json(sidecar_path(args.out), {
        "lq": args.lq,
        "lk": args.lk,
        "variant": cfg.variant.value,
        "d": cfg.d,
        "base": cfg.base,
        "gamma": cfg.gamma,
        "sj_mode": SjMode(args.sj_mode).value,
        "ridge_deviation": boundmap.ridge_deviation(grid),
        "max_row_deviation_cells": float(np.max(np.abs(grid.row_argmax() - ideal))),
    })
    return 0


def load_train_config(path, seed=None, variant=None) -> toyalign.TrainConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    try:
        cfg = toyalign.TrainConfig.from_json(doc)
    except ValueError as exc:
        raise UsageError(f"config {path}: {exc}") from None
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if variant is not None:
        changes["variant"] = variant
    return cfg.replace(**changes) if changes else cfg


def _record_rows(records):
    return [(r.step, fmt(r.train_loss), fmt(r.eval_loss), fmt(r.eval_alignment_error)) for r in records]


RECORD_HEADER = ("step", "train_loss", "eval_loss", "eval_alignment_error")


def cmd_train(args) -> int:
    if args.config is None:
        raise UsageError("train needs --config")
    cfg = load_train_config(args.config, args.seed, args.variant_override)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = toyalign.train(cfg)
    except toyalign.TrainingDiverged as exc:
        _emit(_csv_text(RECORD_HEADER, _record_rows(exc.records)), out / "records.csv")
        _write_json(out / "summary.json", {
            "variant": cfg.variant.value, "seed": cfg.seed, "status": "diverged",
            "message": str(exc), "config": cfg.to_json(),
        })
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _emit(_csv_text(RECORD_HEADER, _record_rows(result.records)), out / "records.csv")
    toyalign.save_state(result, out / "state.json")
    final = result.final
    _write_json(out / "summary.json", {
        "variant": cfg.variant.value,
        "seed": cfg.seed,
        "status": "ok",
        "final_step": final.step,
        "final_train_loss": final.train_loss,
        "final_eval_loss": final.eval_loss,
        "final_eval_alignment_error": final.eval_alignment_error,
        "config": cfg.to_json(),
    })
    return 0


def _resolve_state(path) -> Path:
    if path is None:
        raise UsageError("this command needs --state (a state.json or a train output directory)")
    p = Path(path)
    if p.is_dir():
        p = p / "state.json"
    if not p.is_file():
        raise UsageError(f"no trained state at {p}")
    return p


def parse_factors(text: str) -> list[float]:
    try:
        factors = [float(f) for f in text.split(",") if f.strip()]
    except ValueError:
        raise UsageError(f"--factors must be comma-separated numbers, got {text!r}") from None
    if not factors or any(not (f > 0 and math.isfinite(f)) for f in factors):
        raise UsageError(f"--factors must be positive reals, got {text!r}")
    return factors


def cmd_duration(args) -> int:
    state = _resolve_state(args.state)
    factors = parse_factors(args.factors)
    cfg, layer, _ = toyalign.load_state(state)
    world = toyalign.make_world(cfg)
    tasks = toyalign.eval_task_set(cfg, world)
    errors, skipped = toyalign.eval_duration_scaling(layer, world, tasks, factors)
    rows = [(fmt(f), fmt(e)) for f, e in zip(factors, errors) if not math.isnan(e)]
    _emit(_csv_text(("factor", "alignment_error"), rows), args.out)
    return 0


def cmd_maps(args) -> int:
    """Average post-softmax map of a trained model over ``--count`` tasks of fixed size."""
    state = _resolve_state(args.state)
    cfg, layer, _ = toyalign.load_state(state)
    if args.lq < 2 or args.lk < 1:
        raise UsageError("maps needs --lq >= 2 and --lk >= 1")
    world = toyalign.make_world(cfg)
    rng = make_rng(cfg.seed if args.seed is None else args.seed, toyalign.MAP_STREAM)
    maps = []
    for _ in range(args.count):
        ids = rng.integers(0, cfg.vocab, size=args.lk)
        task = toyalign.build_task(world, ids, args.lq, None, 0.0)
        maps.append(forward(layer, task.query_inputs, task.key_embeddings)[1])
    exclude = [int(v) for v in args.exclude_keys.split(",") if v.strip()] if args.exclude_keys else []
    try:
        avg = average_maps(maps, exclude)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    kept = [n for n in range(args.lk) if n not in set(exclude)]
    rows = ((m, kept[j], fmt(avg[m, j])) for m in range(avg.shape[0]) for j in range(avg.shape[1]))
    _emit(_csv_text(("m", "n", "value"), rows), args.out)
    return 0


def cmd_compare(args) -> int:
    """Tabulate train summaries and the per-variant medians of their final metrics."""
    summaries = []
    for path in args.summaries:
        p = Path(path)
        if p.is_dir():
            p = p / "summary.json"
        try:
            with open(p, encoding="utf-8") as fh:
                summaries.append(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read summary {p}: {exc}") from None
    keys = ("final_eval_loss", "final_eval_alignment_error")
    rows = []
    for s in summaries:
        if s.get("status") != "ok":
            rows.append((s.get("variant"), s.get("seed"), "diverged", "diverged"))
            continue
        rows.append((s["variant"], s["seed"], *(fmt(s[k]) for k in keys)))
    by_variant = {}
    for s in summaries:
        if s.get("status") == "ok":
            by_variant.setdefault(s["variant"], []).append(s)
    for variant in sorted(by_variant):
        group = by_variant[variant]
        rows.append((variant, "median", *(fmt(np.median([g[k] for g in group])) for k in keys)))
    _emit(_csv_text(("variant", "seed", *keys), rows), args.out)
    return 0


def cmd_check(args) -> int:
    results = run_checks(seed=args.seed or 0, corrupt_theta=args.inject_fault == "corrupt-theta")
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name}: n={r.instances} max_err={r.max_error:.3e} tol={r.tolerance:.0e}")
    print(f"properties run: {len(results)}, passed: {len(results) - len(failed)}, failed: {len(failed)}")
    if failed:
        print("failed: " + "; ".join(r.name for r in failed), file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--d", type=int, default=64, help="head dimension (even)")
    common.add_argument("--base", type=float, default=10000.0, help="frequency base")
    common.add_argument("--gamma", type=float, default=10.0, help="LARoPE scaling")
    common.add_argument("--variant", choices=[v.value for v in Variant], default="larope")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--seed", type=int, default=None)

    parser = argparse.ArgumentParser(prog="larope", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("freqs", parents=[common], help="rotation frequency table as CSV")

    p = sub.add_parser("bounds", parents=[common], help="relative upper-bound grid as CSV + JSON sidecar")
    p.add_argument("--lq", type=int, default=64)
    p.add_argument("--lk", type=int, default=256)
    p.add_argument("--sj-mode", choices=[m.value for m in SjMode], default=SjMode.PARTIAL_SUM.value)

    p = sub.add_parser("train", parents=[common], help="train the toy alignment model from a JSON config")
    p.add_argument("--config", required=False)
    p.add_argument("--override-variant", dest="variant_override", choices=[v.value for v in Variant],
                   default=None, help="replace the config's variant")

    p = sub.add_parser("duration", parents=[common], help="alignment error under query-length rescaling")
    p.add_argument("--state", default=None)
    p.add_argument("--factors", default=",".join(str(f) for f in toyalign.DEFAULT_DURATION_FACTORS))

    p = sub.add_parser("maps", parents=[common], help="averaged attention map of a trained model")
    p.add_argument("--state", default=None)
    p.add_argument("--lq", type=int, default=48)
    p.add_argument("--lk", type=int, default=16)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--exclude-keys", default="", help="comma-separated key indices to drop")

    p = sub.add_parser("compare", parents=[common], help="compare train summaries")
    p.add_argument("summaries", nargs="+")

    p = sub.add_parser("check", parents=[common], help="run the fast invariant suite")
    p.add_argument("--inject-fault", choices=["corrupt-theta"], default=None, help=argparse.SUPPRESS)
    return parser


COMMANDS = {
    "freqs": cmd_freqs,
    "bounds": cmd_bounds,
    "train": cmd_train,
    "duration": cmd_duration,
    "maps": cmd_maps,
    "compare": cmd_compare,
    "check": cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"larope {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"larope {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
