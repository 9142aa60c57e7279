"""Command line front end.

Subcommands:

* ``synth``  -- materialise a scene spec (JSON) into a scene directory
* ``run``    -- process a scene directory with a pipeline config, emit a report
* ``match``  -- align a raw query tensor, emit the per-frame mappings as JSON
* ``sweep``  -- run a fraction x matching grid over fresh scenes, emit CSV

Exit codes: 0 success, 1 usage error, 2 broken input data or file format,
3 infeasible scene spec.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .core import TensorFormatError, read_tensor
from .matching import align_clip
from .metrics import evaluate_clip
from .pipeline import PipelineConfig, run_clip
from .rng import MASK64
from .shift import BoundaryPolicy, plan_shift
from .synth import (
    InfeasibleSceneError,
    SceneSpec,
    generate_scene,
    load_scene,
    recovery_rate,
    save_scene,
)

__all__ = ["main", "build_parser"]

_DEFAULT_FRACTIONS = ("0", "1/128", "1/64", "1/32", "1/16", "1/8", "1/4")
_CSV_HEADER = (
    "fraction,channels_shifted,matching,seed,"
    "miou,pixel_accuracy,temporal_consistency,recovery"
)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_json(path: str) -> dict:
    try:
        with open(path) as f:
            loaded = json.load(f)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except IsADirectoryError:
        raise DataError(f"expected a file, got a directory: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(loaded, dict):
        raise DataError(f"{path}: expected a JSON object at top level")
    return loaded


def _parse_fraction(text) -> Fraction:
    try:
        frac = Fraction(str(text))
    except (ValueError, ZeroDivisionError) as exc:
        raise DataError(f"bad shift fraction {text!r}: {exc}") from None
    if not 0 <= frac <= Fraction(1, 2):
        raise DataError(f"shift fraction must lie in [0, 1/2], got {frac}")
    return frac


def _parse_matching(value) -> bool:
    if isinstance(value, bool):
        return value
    if value in ("on", "off"):
        return value == "on"
    raise DataError(f"matching must be true/false or 'on'/'off', got {value!r}")


def _pipeline_config(cfg: dict, dim: int, boundary_override: str | None) -> PipelineConfig:
    if "fraction" not in cfg:
        raise DataError("pipeline config needs a 'fraction' field")
    frac = _parse_fraction(cfg["fraction"])
    boundary = boundary_override or cfg.get("boundary", "zero")
    try:
        policy = BoundaryPolicy(boundary)
    except ValueError:
        raise DataError(f"boundary must be 'zero' or 'hold', got {boundary!r}") from None
    shift = plan_shift(frac, dim, policy)
    return PipelineConfig(
        shift=shift,
        matching=_parse_matching(cfg.get("matching", True)),
        mask_threshold=float(cfg.get("mask_threshold", 0.5)),
    )


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    spec_dict = _load_json(args.spec)
    if args.seed_override is not None:
        spec_dict = {**spec_dict, "seed": args.seed_override}
    try:
        spec = SceneSpec.from_dict(spec_dict)
    except InfeasibleSceneError:
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from None
    scene = generate_scene(spec)
    for path in save_scene(scene, args.out):
        print(path)
    return 0


def _cmd_run(args) -> int:
    scene = load_scene(args.scene)
    config = _pipeline_config(_load_json(args.config), scene.spec.dim, args.boundary)
    preds, alignment = run_clip(scene, config)
    recovery = recovery_rate(alignment, scene)
    echo = {
        "scene": scene.spec.to_dict(),
        "fraction": str(config.shift.fraction),
        "channels_shifted": config.shift.channels_shifted,
        "boundary": config.shift.boundary.value,
        "matching": config.matching,
        "mask_threshold": config.mask_threshold,
    }
    report = evaluate_clip(scene.gt_labels, preds, recovery, echo)
    _write_text(args.out, report.to_json())
    if args.out is not None:
        tc = report.temporal_consistency
        print(
            f"miou={report.miou:.6f} pixel_accuracy={report.pixel_accuracy:.6f} "
            f"temporal_consistency={'n/a' if tc is None else format(tc, '.6f')} "
            f"recovery={report.recovery:.6f} -> {args.out}"
        )
    return 0


def _cmd_match(args) -> int:
    clip = read_tensor(args.queries)
    alignment = align_clip(clip)
    payload = {
        "t_len": alignment.t_len,
        "n_queries": alignment.n_queries,
        "per_frame": [list(p.mapping) for p in alignment.per_frame],
        "adjacent": [list(p.mapping) for p in alignment.adjacent],
        "pair_totals": list(alignment.pair_totals),
    }
    _write_text(args.out, json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return 0


def _sweep_cell(task: tuple) -> list[str]:
    """One grid cell: fresh scene, one pipeline run, one CSV row."""
    scene_dict, frac_str, matching, seed, boundary, threshold = task
    spec = SceneSpec.from_dict({**scene_dict, "seed": seed})
    scene = generate_scene(spec)
    shift = plan_shift(Fraction(frac_str), spec.dim, BoundaryPolicy(boundary))
    config = PipelineConfig(shift=shift, matching=matching, mask_threshold=threshold)
    preds, alignment = run_clip(scene, config)
    recovery = recovery_rate(alignment, scene)
    report = evaluate_clip(scene.gt_labels, preds, recovery, {})
    tc = report.temporal_consistency
    return [
        frac_str,
        str(shift.channels_shifted),
        "on" if matching else "off",
        str(seed),
        repr(report.miou),
        repr(report.pixel_accuracy),
        "" if tc is None else repr(tc),
        repr(report.recovery),
    ]


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _sweep_summary(rows: list[list[str]]) -> str:
    """Per-cell means with deltas against the fraction-0 cell of the same mode."""
    cells: dict[tuple[str, str], dict[str, list[float]]] = {}
    order: list[tuple[str, str]] = []
    for row in rows:
        key = (row[0], row[2])
        if key not in cells:
            cells[key] = {"miou": [], "tc": []}
            order.append(key)
        cells[key]["miou"].append(float(row[4]))
        if row[6] != "":
            cells[key]["tc"].append(float(row[6]))
    lines = ["summary (means over seeds):"]
    for frac, mode in order:
        vals = cells[(frac, mode)]
        base = cells.get(("0", mode))
        parts = [f"fraction {frac:>5}", f"matching={mode:<3}"]
        for name, key in (("miou", "miou"), ("consistency", "tc")):
            mean = _mean(vals[key])
            if mean is None:
                parts.append(f"{name}=n/a")
                continue
            text = f"{name}={mean:.6f}"
            if base is not None and frac != "0":
                base_mean = _mean(base[key])
                if base_mean is not None:
                    text += f" ({mean - base_mean:+.6f})"
            parts.append(text)
        lines.append("  " + "  ".join(parts))
    return "\n".join(lines) + "\n"


def _cmd_sweep(args) -> int:
    sweep = _load_json(args.spec)
    if "scene" not in sweep:
        raise DataError("sweep spec needs a 'scene' object")
    scene_dict = dict(sweep["scene"])
    if args.seed_override is not None:
        scene_dict["seed"] = args.seed_override
    try:
        base_spec = SceneSpec.from_dict(scene_dict)
    except InfeasibleSceneError:
        raise
    except ValueError as exc:
        raise DataError(str(exc)) from None

    fractions = [str(_parse_fraction(f)) for f in sweep.get("fractions", _DEFAULT_FRACTIONS)]
    matchings = [_parse_matching(m) for m in sweep.get("matching", (False, True))]
    repeats = int(sweep.get("repeats", 1))
    if repeats < 1:
        raise DataError(f"repeats must be >= 1, got {repeats}")
    if args.parallel < 1:
        raise UsageError(f"--parallel must be >= 1, got {args.parallel}")
    boundary = args.boundary or sweep.get("boundary", "zero")
    try:
        BoundaryPolicy(boundary)
    except ValueError:
        raise DataError(f"boundary must be 'zero' or 'hold', got {boundary!r}") from None
    threshold = float(sweep.get("mask_threshold", 0.5))

    tasks = []
    for frac in fractions:
        for matching in matchings:
            for r in range(repeats):
                seed = (base_spec.seed + r) & MASK64
                tasks.append(
                    (base_spec.to_dict(), frac, matching, seed, boundary, threshold)
                )

    rows: list[list[str]] = []
    with open(args.out, "w") as f:
        f.write(_CSV_HEADER + "\n")
        f.flush()
        if args.parallel > 1:
            with ProcessPoolExecutor(max_workers=args.parallel) as pool:
                for row in pool.map(_sweep_cell, tasks, chunksize=1):
                    rows.append(row)
                    f.write(",".join(row) + "\n")
                    f.flush()
        else:
            for task in tasks:
                row = _sweep_cell(task)
                rows.append(row)
                f.write(",".join(row) + "\n")
                f.flush()
    sys.stdout.write(_sweep_summary(rows))
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="queryshift",
        description="Temporal channel shift with cross-frame query matching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a scene directory from a JSON spec")
    p.add_argument("--spec", required=True, help="scene spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed-override", type=int, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("run", help="run the pipeline on a scene directory")
    p.add_argument("--scene", required=True, help="scene directory (from synth)")
    p.add_argument("--config", required=True, help="pipeline config JSON file")
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.add_argument("--boundary", choices=("zero", "hold"), default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("match", help="align a query tensor across frames")
    p.add_argument("--queries", required=True, help="query tensor file")
    p.add_argument("--out", default=None, help="alignment JSON path (default: stdout)")
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("sweep", help="fraction x matching grid, CSV output")
    p.add_argument("--spec", required=True, help="sweep spec JSON file")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--boundary", choices=("zero", "hold"), default=None)
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleSceneError as exc:
        print(f"infeasible scene: {exc}", file=sys.stderr)
        return 3
    except (DataError, TensorFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
