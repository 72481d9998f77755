"""Command-line interface.

Commands: match, bench, propagate, eval, crop, info. Every command takes
``--config FILE`` with ``key = value`` lines (``#`` starts a comment); keys
are flag names without the leading dashes. Explicit flags win over the
file.

Exit codes: 0 success, 1 usage, 2 I/O, 3 dimension/validation.
``FBMATCH_THREADS`` caps kernel worker threads (0 = all).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    FrameSequence,
    load_mask,
    load_tensor,
    read_tensor_header,
    save_mask,
    save_tensor,
)
from .distance import MatchParams
from .errors import DimensionMismatch, FBMatchError, FormatError, IoFailure
from .matching import (
    AtrousSpec,
    WindowSet,
    global_match,
    global_match_dense,
    multi_local_match,
    multi_local_match_dense,
    oracle_match,
)
from .metrics import boundary_f, jaccard
from .pipeline import propagate_sequence
from .sampling import CropConfig, balanced_random_crop

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# flag types


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {s}")
    return v


def _finite_float(s: str) -> float:
    v = float(s)
    if not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a finite number, got {s}")
    return v


def _int_list(s: str) -> list[int]:
    try:
        vals = [int(x) for x in s.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {s!r}")
    return vals


def _windows(s: str) -> WindowSet:
    vals = _int_list(s)
    try:
        return WindowSet(tuple(vals))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# --------------------------------------------------------------------------
# config file


def read_config(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"--config: cannot read {path}: {exc}") from exc
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"--config {path}:{lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def _config_argv(sub: argparse.ArgumentParser, cfg: dict[str, str]) -> list[str]:
    by_flag = {opt: a for a in sub._actions for opt in a.option_strings}
    argv = []
    for key, value in cfg.items():
        action = by_flag.get("--" + key)
        if action is None or key == "config":
            raise UsageError(f"--config: unknown key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append("--" + key)
        else:
            argv += ["--" + key, value]
    return argv


# --------------------------------------------------------------------------
# shared option groups


def _add_match_opts(p: argparse.ArgumentParser, windows_default: str = "1,2,3"):
    p.add_argument("--windows", type=_windows, default=_windows(windows_default),
                   help=f"local window radii, strictly increasing (default {windows_default})")
    p.add_argument("--atrous", type=_positive_int, default=1, help="atrous factor l")
    p.add_argument("--atrous-origin", type=_nonneg_int, default=0, help="global atrous grid origin in [0, l)")
    p.add_argument("--bias-fg", type=_finite_float, default=0.0)
    p.add_argument("--bias-bg", type=_finite_float, default=0.0)


def _require(args, *names):
    for n in names:
        if getattr(args, n.replace("-", "_")) is None:
            raise UsageError(f"missing required flag --{n}")


def _atrous(args) -> AtrousSpec:
    try:
        return AtrousSpec(args.atrous, args.atrous_origin)
    except ValueError as exc:
        raise UsageError(f"--atrous-origin: {exc}") from None


def _out_path(prefix: str, name: str) -> Path:
    p = Path(prefix)
    if prefix.endswith(os.sep) or p.is_dir():
        return p / name
    return Path(prefix + name)


def _map_stats(a: np.ndarray) -> dict:
    if a.size == 0:
        return {"min": None, "max": None, "mean": None}
    return {"min": float(a.min()), "max": float(a.max()), "mean": float(a.mean())}


# --------------------------------------------------------------------------
# commands


def cmd_match(args) -> int:
    _require(args, "ref-embed", "ref-mask", "prev-embed", "prev-mask", "cur-embed", "object", "out")
    ref, ref_mask = load_tensor(args.ref_embed), load_mask(args.ref_mask)
    prev, prev_mask = load_tensor(args.prev_embed), load_mask(args.prev_mask)
    cur = load_tensor(args.cur_embed)
    params = MatchParams(args.bias_fg, args.bias_bg)
    atrous = _atrous(args)
    if args.oracle:
        t0 = time.perf_counter()
        out = oracle_match(cur, ref, ref_mask, prev, prev_mask, args.object, args.windows, params, atrous)
        gfg, gbg, lfg, lbg = out.global_fg, out.global_bg, out.local_fg, out.local_bg
        timings = {"oracle_s": time.perf_counter() - t0}
        counts = {"referred_total": out.referred_pixels}
    else:
        t0 = time.perf_counter()
        gfg, gbg, n_global = global_match(cur, ref, ref_mask, args.object, params, atrous)
        t1 = time.perf_counter()
        lfg, lbg, n_local = multi_local_match(cur, prev, prev_mask, args.object, args.windows, params, atrous)
        t2 = time.perf_counter()
        timings = {"global_s": t1 - t0, "local_s": t2 - t1}
        counts = {"referred_global": n_global, "referred_local": n_local,
                  "referred_total": n_global + n_local}

    maps = {"global_fg": gfg, "global_bg": gbg}
    for i, k in enumerate(args.windows):
        maps[f"local_fg_k{k}"] = lfg[i]
        maps[f"local_bg_k{k}"] = lbg[i]
    lines = [{
        "event": "run", "object": args.object, "height": cur.height, "width": cur.width,
        "channels": cur.channels, "windows": list(args.windows.sizes), "atrous": atrous.factor,
        "atrous_origin": atrous.origin, "bias_fg": params.bias_fg, "bias_bg": params.bias_bg,
        "oracle": bool(args.oracle), **counts, **timings,
    }]
    for name, m in maps.items():
        path = _out_path(args.out, f"{name}.fbt")
        save_tensor(np.asarray(m, dtype=np.float32)[:, :, None], path)
        lines.append({"event": "map", "name": name, "file": str(path), **_map_stats(m)})
    summary = _out_path(args.out, "summary.jsonl")
    try:
        summary.write_text("".join(json.dumps(line) + "\n" for line in lines))
    except OSError as exc:
        raise IoFailure(f"--out: cannot write {summary}: {exc}") from exc
    return EXIT_OK


def _timed(fn, repeat: int) -> tuple[float, float, object]:
    times, result = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), min(times), result


def run_bench(height: int, width: int, channels: int, atrous_list, windows, repeat: int = 5,
              seed: int = 0, kinds=("global", "local"), fg_fraction: float = 0.5) -> list[dict]:
    """Time dense (l=1) against atrous matching on seeded synthetic frames.

    Returns one row per (kind, l). Factor 1 runs the dense implementations;
    other factors run the atrous path. The first call of each configuration
    is an untimed warm-up.
    """
    windows = windows if isinstance(windows, WindowSet) else WindowSet(tuple(windows))
    rng = np.random.default_rng(seed)
    cur = rng.standard_normal((height, width, channels)).astype(np.float32)
    ref = rng.standard_normal((height, width, channels)).astype(np.float32)
    prev = rng.standard_normal((height, width, channels)).astype(np.float32)
    mask = (rng.random((height, width)) < fg_fraction).astype(np.uint16)
    rows = []
    for kind in kinds:
        base = None
        for l in atrous_list:
            if kind == "global":
                fn = ((lambda: global_match_dense(cur, ref, mask, 1)) if l == 1
                      else (lambda l=l: global_match(cur, ref, mask, 1, atrous=AtrousSpec(l))))
            elif kind == "local":
                fn = ((lambda: multi_local_match_dense(cur, prev, mask, 1, windows)) if l == 1
                      else (lambda l=l: multi_local_match(cur, prev, mask, 1, windows, atrous=AtrousSpec(l))))
            else:
                raise ValueError(f"unknown bench kind {kind!r}")
            fn()
            median, fastest, result = _timed(fn, repeat)
            if l == 1:
                base = median
            rows.append({
                "kind": kind, "atrous": l, "height": height, "width": width, "channels": channels,
                "windows": " ".join(map(str, windows.sizes)) if kind == "local" else "",
                "referred": result[2], "repeat": repeat, "median_s": median, "min_s": fastest,
                "speedup": (base / median) if base is not None and median > 0 else "",
            })
    return rows


BENCH_FIELDS = ["kind", "atrous", "height", "width", "channels", "windows", "referred",
                "repeat", "median_s", "min_s", "speedup"]


def cmd_bench(args) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    bad = [k for k in kinds if k not in ("global", "local")]
    if bad or not kinds:
        raise UsageError(f"--kinds: expected global and/or local, got {args.kinds!r}")
    rows = run_bench(args.height, args.width, args.channels, args.atrous_list, args.windows,
                     args.repeat, args.seed, kinds, args.fg_fraction)
    w = csv.DictWriter(sys.stdout, fieldnames=BENCH_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return EXIT_OK


def _sorted_files(directory, suffix: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise IoFailure(f"not a directory: {directory}")
    return sorted(p for p in d.iterdir() if p.suffix == suffix)


def _ensure_dir(path) -> Path:
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc
    return d


def cmd_propagate(args) -> int:
    _require(args, "ref-embed", "ref-mask", "out-dir")
    if not args.embeds and not args.embed_dir:
        raise UsageError("one of --embeds or --embed-dir is required")
    paths = [Path(p) for p in args.embeds] if args.embeds else _sorted_files(args.embed_dir, ".fbt")
    ref, ref_mask = load_tensor(args.ref_embed), load_mask(args.ref_mask)
    embeds = [load_tensor(p) for p in paths]
    preds = propagate_sequence(ref, ref_mask, embeds, MatchParams(args.bias_fg, args.bias_bg),
                               args.windows, _atrous(args))
    out = _ensure_dir(args.out_dir)
    for p, m in zip(paths, preds):
        save_mask(m, out / f"{p.stem}.pgm")
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "pred-dir", "gt-dir")
    gt_files = _sorted_files(args.gt_dir, ".pgm")
    rows = []
    for g in gt_files:
        p = Path(args.pred_dir) / g.name
        gt, pred = load_mask(g), load_mask(p)
        if gt.shape != pred.shape:
            raise DimensionMismatch(f"{g.name}: pred {pred.shape} vs gt {gt.shape}")
        for o in sorted(set(gt.object_ids()) | set(pred.object_ids())):
            j = jaccard(pred, gt, o)
            f = boundary_f(pred, gt, o, args.tol)
            rows.append([g.stem, o, f"{j:.6f}", f"{f:.6f}", f"{(j + f) / 2:.6f}"])
    header = ["frame", "object", "J", "F", "J&F"]
    if args.out in (None, "-"):
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    else:
        try:
            with open(args.out, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
        except OSError as exc:
            raise IoFailure(f"--out: cannot write {args.out}: {exc}") from exc
    return EXIT_OK


def cmd_crop(args) -> int:
    _require(args, "frames-dir", "out-dir")
    embeds = _sorted_files(args.frames_dir, ".fbt")
    if not embeds:
        raise IoFailure(f"--frames-dir: no .fbt files in {args.frames_dir}")
    frames = FrameSequence(tuple((load_tensor(p), load_mask(p.with_suffix(".pgm"))) for p in embeds))
    cfg = CropConfig(
        window=(args.crop_height, args.crop_width), min_fg_pixels=args.min_fg,
        max_retries=args.max_retries, scale_range=(args.scale_min, args.scale_max),
    )
    res = balanced_random_crop(frames, cfg, args.seed)
    out = _ensure_dir(args.out_dir)
    for p, (e, m) in zip(embeds, res.frames):
        save_tensor(e, out / p.name)
        save_mask(m, out / f"{p.stem}.pgm")
    print(json.dumps({"top": res.window.top, "left": res.window.left, "scale": res.window.scale,
                      "scaled_hw": list(res.window.scaled_hw), "retries": res.retries,
                      "seed": args.seed}))
    return EXIT_OK


def _pgm_info(path: Path) -> dict:
    m = load_mask(path)
    return {"file": str(path), "format": "PGM", "magic": "P5", "width": m.width,
            "height": m.height, "maxval": 255 if m.labels.max(initial=0) <= 255 else 65535,
            "objects": m.object_ids()}


def cmd_info(args) -> int:
    for name in args.paths:
        path = Path(name)
        try:
            buf = path.read_bytes()
        except OSError as exc:
            raise IoFailure(f"cannot read {name}: {exc}") from exc
        if buf[:2] == b"P5":
            info = _pgm_info(path)
        else:
            hdr = read_tensor_header(buf)
            h, w, c = hdr["dims"]
            info = {"file": name, "format": "FBT", "magic": hdr["magic"], "dtype": "f32",
                    "dtype_code": hdr["dtype"], "rank": hdr["rank"], "height": h, "width": w,
                    "channels": c, "payload_bytes": len(buf) - 21, "expected_payload_bytes": h * w * c * 4}
        print(json.dumps(info))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fbmatch", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"fbmatch {__version__}")
    subs = parser.add_subparsers(dest="command", parser_class=_Parser)

    def sub(name, func, help):
        p = subs.add_parser(name, help=help)
        p.add_argument("--config", help="key=value file; explicit flags take precedence")
        p.set_defaults(func=func)
        return p

    p = sub("match", cmd_match, "write global and multi-local matching maps for one object")
    for flag in ("ref-embed", "ref-mask", "prev-embed", "prev-mask", "cur-embed"):
        p.add_argument("--" + flag)
    p.add_argument("--object", type=_positive_int)
    p.add_argument("--out", help="output prefix (a directory if it ends with a separator)")
    p.add_argument("--oracle", action="store_true", help="use the brute-force oracle (small frames)")
    _add_match_opts(p)

    p = sub("bench", cmd_bench, "time dense vs atrous matching; CSV on stdout")
    p.add_argument("--height", type=_positive_int, default=64)
    p.add_argument("--width", type=_positive_int, default=64)
    p.add_argument("--channels", type=_positive_int, default=32)
    p.add_argument("--atrous-list", type=_int_list, default=[1, 2, 4])
    p.add_argument("--windows", type=_windows, default=_windows("4,8"))
    p.add_argument("--repeat", type=_positive_int, default=5)
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--kinds", default="global,local", help="comma list of global, local")
    p.add_argument("--fg-fraction", type=_finite_float, default=0.5)

    p = sub("propagate", cmd_propagate, "propagate a reference mask by nearest-embedding matching")
    p.add_argument("--ref-embed")
    p.add_argument("--ref-mask")
    p.add_argument("--embeds", nargs="+", help="frame embeddings in order")
    p.add_argument("--embed-dir", help="directory of frame .fbt files (sorted by name)")
    p.add_argument("--out-dir")
    _add_match_opts(p, windows_default="1")

    p = sub("eval", cmd_eval, "per-frame J / F / J&F CSV for matching PGM files")
    p.add_argument("--pred-dir")
    p.add_argument("--gt-dir")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--tol", type=_finite_float, default=None, help="boundary tolerance in pixels")

    p = sub("crop", cmd_crop, "balanced random crop of NAME.fbt/NAME.pgm frame pairs")
    p.add_argument("--frames-dir")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=_nonneg_int, default=0)
    p.add_argument("--crop-height", type=_positive_int, default=465)
    p.add_argument("--crop-width", type=_positive_int, default=465)
    p.add_argument("--min-fg", type=_nonneg_int, default=None, help="default 1%% of the window area")
    p.add_argument("--max-retries", type=_positive_int, default=50)
    p.add_argument("--scale-min", type=_finite_float, default=1.0)
    p.add_argument("--scale-max", type=_finite_float, default=1.3)

    p = sub("info", cmd_info, "print FBT / PGM header fields as JSON lines")
    p.add_argument("paths", nargs="+")
    return parser


def _parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required: " + ", ".join(
            a for a in ("match", "bench", "propagate", "eval", "crop", "info")))
    if args.config:
        i = argv.index(args.command)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        extra = _config_argv(sub, read_config(args.config))
        args = parser.parse_args(argv[: i + 1] + extra + argv[i + 1 :])
    return args


def _apply_thread_cap() -> None:
    raw = os.environ.get("FBMATCH_THREADS", "").strip()
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"FBMATCH_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise UsageError("FBMATCH_THREADS must be >= 0")
    import numba

    if n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    try:
        _apply_thread_cap()
        args = _parse(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"fbmatch: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IoFailure, FormatError, OSError) as exc:
        print(f"fbmatch: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FBMatchError, ValueError) as exc:
        print(f"fbmatch: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
