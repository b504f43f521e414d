"""``skipsr`` command line.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 validation.  ``SKIPSR_THREADS`` overrides
the DiT window-parallel thread count.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import jsonschema

from . import pipeline
from .codec import DEFAULT_KEEP
from .oracle import DEFAULT_FACTOR, DEFAULT_TAU, oracle_mask, write_mask
from .predictor import PredictorNet, TrainConfig, train, training_pair
from .skipdit import VARIANTS, DiTConfig, DiTWeights
from .vidio import CorruptVideoError, VideoFormatError, load_video, save_video

log = logging.getLogger("skipsr")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4
VIDEO_SUFFIXES = {".y4m", ".raw"}


class UsageError(Exception):
    pass


def load_schema(name: str) -> dict:
    text = resources.files("skipsr").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate_report(report: dict, name: str) -> None:
    jsonschema.validate(report, load_schema(name))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _rows_to_csv(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else repr(r[k]) if isinstance(r[k], float) else r[k])
                    for k in fields})
    return buf.getvalue()


def _threads(default: int) -> int:
    env = os.environ.get("SKIPSR_THREADS")
    return int(env) if env else default


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None


def _grid(text: str) -> tuple[int, int, int]:
    parts = text.lower().replace(",", "x").split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid must look like 16x32x32, got {text!r}")
    return tuple(int(p) for p in parts)


# --------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    if args.mask_source == "predictor" and not args.weights:
        raise UsageError("--mask-source predictor requires --weights")
    net = PredictorNet.load(args.weights) if args.mask_source == "predictor" else None
    videos = []
    mask_dir = Path(args.mask_dir) if args.mask_dir else (
        Path(args.out).parent if args.out and args.out != "-" else Path("."))
    mask_dir.mkdir(parents=True, exist_ok=True)
    for path in args.videos:
        v = load_video(path)
        if net is not None:
            mask = pipeline.predicted_mask_for(v, net, args.factor, args.threshold, args.tau)
        else:
            mask = oracle_mask(v, args.tau, args.factor)
        rep = pipeline.analyze_video(v, Path(path).stem, args.tau, args.factor, mask,
                                     args.keep, mask_source=args.mask_source)
        mask_path = mask_dir / f"{Path(path).stem}.skpm"
        write_mask(mask_path, mask)
        rep["mask_file"] = mask_path.name
        videos.append(rep)
    report = {
        "dataset": args.label or Path(args.videos[0]).parent.name or "videos",
        "tau": args.tau, "factor": args.factor, "keep": args.keep,
        "mask_source": args.mask_source, "videos": videos,
    }
    validate_report(report, "analysis_report")
    _write_text(args.out, dump_json(report))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if len(args.taus) < 2:
        raise UsageError("--taus needs at least two thresholds")
    v = load_video(args.video)
    rows = pipeline.sweep_video(v, args.taus, args.factor, args.keep)
    _write_text(args.out, _rows_to_csv(rows, ["tau", "skipped_pct", "swap_psnr"]))
    return EXIT_OK


def _video_files(data_dir: Path) -> list[Path]:
    if not data_dir.is_dir():
        raise FileNotFoundError(data_dir)
    return sorted(p for p in data_dir.iterdir() if p.suffix.lower() in VIDEO_SUFFIXES)


def cmd_train_predictor(args) -> int:
    files = _video_files(Path(args.data_dir))
    if not files:
        raise ValueError(f"no .y4m/.raw videos in {args.data_dir}")
    dataset = [training_pair(load_video(p), args.tau, args.factor, args.keep) for p in files]
    cfg = TrainConfig(lr=args.lr, steps=args.steps, batch=args.batch, seed=args.seed,
                      pos_weight=args.pos_weight, tau=args.tau, factor=args.factor, keep=args.keep)
    net = PredictorNet.init(3 * args.keep, args.width, args.seed)
    net, losses = train(net, dataset, cfg)
    out = Path(args.out)
    net.save(out)
    curve = out.with_name(out.stem + "_loss.csv")
    _write_text(curve, _rows_to_csv(
        [{"step": i + 1, "loss": float(l)} for i, l in enumerate(losses)], ["step", "loss"]))
    report = {
        "weights": out.name, "loss_curve": curve.name, "videos": len(files),
        "steps": args.steps, "seed": args.seed, "tau": args.tau, "factor": args.factor,
        "keep": args.keep, "final_loss": float(losses[-1]) if losses else None,
    }
    validate_report(report, "train_report")
    _write_text(out.with_name(out.stem + "_report.json"), dump_json(report))
    return EXIT_OK


def cmd_init_dit(args) -> int:
    cfg = DiTConfig(dim=args.dim, heads=args.heads, layers=args.layers, variant=args.variant,
                    seed=args.seed, dtype=args.dtype)
    w = DiTWeights.init(cfg, 3 * args.keep, zero_unembed=not args.random_unembed)
    w.save(args.out, cfg)
    return EXIT_OK


def cmd_sr(args) -> int:
    if not args.weights_predictor or not args.weights_dit:
        raise UsageError("sr needs --weights-predictor and --weights-dit")
    net = PredictorNet.load(args.weights_predictor)
    weights, cfg = DiTWeights.load(args.weights_dit)
    cfg = replace(cfg, variant=args.variant or cfg.variant,
                  threads=_threads(args.threads or cfg.threads))
    lr = load_video(args.video)
    hr, mask, report = pipeline.super_resolve(lr, net, weights, cfg, args.scale, args.threshold)
    out = Path(args.out)
    save_video(out, hr)
    mask_path = Path(args.mask_out) if args.mask_out else out.with_suffix(".skpm")
    write_mask(mask_path, mask)
    report.update(output=out.name, mask_file=mask_path.name)
    validate_report(report, "sr_report")
    _write_text(args.report or out.with_name(out.stem + "_report.json"), dump_json(report))
    return EXIT_OK


def cmd_profile(args) -> int:
    bad = [v for v in args.variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variants {bad}")
    cfg = DiTConfig(dim=args.dim, heads=args.heads, layers=args.layers, dtype=args.dtype,
                    threads=_threads(args.threads))
    rows = pipeline.profile_variants(args.grid, args.skip_fractions, args.variants,
                                     args.repeats, cfg, seed=args.seed)
    fields = ["variant", "skip_fraction", "tokens_total", "tokens_kept", "repeats",
              "mean_s", "std_s", "speedup_vs_dense"]
    _write_text(args.out, _rows_to_csv(rows, fields))
    if args.json:
        report = {"grid": list(args.grid), "threads": cfg.threads, "rows": rows}
        validate_report(report, "profile_report")
        Path(args.json).write_text(dump_json(report))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skipsr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="oracle/predicted skip analysis with latent swap")
    a.add_argument("videos", nargs="+")
    a.add_argument("--tau", type=float, default=DEFAULT_TAU)
    a.add_argument("--factor", type=int, default=DEFAULT_FACTOR)
    a.add_argument("--mask-source", choices=("oracle", "predictor"), default="oracle")
    a.add_argument("--weights", help="predictor weights (manifest JSON)")
    a.add_argument("--threshold", type=float, default=0.5)
    a.add_argument("--keep", type=int, default=pipeline.ANALYSIS_KEEP,
                   help="codec coefficients kept per block (default: all)")
    a.add_argument("--label")
    a.add_argument("--out", help="report path (default stdout)")
    a.add_argument("--mask-dir")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="skipped fraction and swap PSNR over thresholds")
    s.add_argument("video")
    s.add_argument("--taus", type=_floats, required=True)
    s.add_argument("--factor", type=int, default=DEFAULT_FACTOR)
    s.add_argument("--keep", type=int, default=pipeline.ANALYSIS_KEEP)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("train-predictor", help="train the skip predictor on a video folder")
    t.add_argument("data_dir")
    t.add_argument("--tau", type=float, default=DEFAULT_TAU)
    t.add_argument("--factor", type=int, default=DEFAULT_FACTOR)
    t.add_argument("--steps", type=int, default=500)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch", type=int, default=8)
    t.add_argument("--pos-weight", type=float, default=1.0)
    t.add_argument("--keep", type=int, default=DEFAULT_KEEP)
    t.add_argument("--width", type=int, default=64)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_predictor)

    i = sub.add_parser("init-dit", help="write freshly initialised DiT weights")
    i.add_argument("--out", required=True)
    i.add_argument("--keep", type=int, default=DEFAULT_KEEP)
    i.add_argument("--dim", type=int, default=128)
    i.add_argument("--heads", type=int, default=4)
    i.add_argument("--layers", type=int, default=4)
    i.add_argument("--variant", choices=VARIANTS, default="full_skip")
    i.add_argument("--dtype", choices=("float32", "float64"), default="float64")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--random-unembed", action="store_true",
                   help="random output projection instead of the pass-through zero init")
    i.set_defaults(func=cmd_init_dit)

    r = sub.add_parser("sr", help="skip-aware super-resolution of a low-res video")
    r.add_argument("video")
    r.add_argument("--weights-predictor")
    r.add_argument("--weights-dit")
    r.add_argument("--scale", type=int, default=4)
    r.add_argument("--variant", choices=VARIANTS)
    r.add_argument("--threshold", type=float, default=0.5)
    r.add_argument("--threads", type=int)
    r.add_argument("--out", required=True, help="output video (.y4m or raw)")
    r.add_argument("--mask-out")
    r.add_argument("--report")
    r.set_defaults(func=cmd_sr)

    f = sub.add_parser("profile", help="time DiT variants on synthetic tokens")
    f.add_argument("--grid", type=_grid, default=(16, 32, 32))
    f.add_argument("--skip-fractions", type=_floats, default=[0.0, 0.4])
    f.add_argument("--variants", type=lambda s: s.replace(",", " ").split(), default=list(VARIANTS))
    f.add_argument("--repeats", type=int, default=5)
    f.add_argument("--dim", type=int, default=128)
    f.add_argument("--heads", type=int, default=4)
    f.add_argument("--layers", type=int, default=4)
    f.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    f.add_argument("--threads", type=int, default=1)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    f.add_argument("--json")
    f.set_defaults(func=cmd_profile)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"skipsr: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, VideoFormatError, CorruptVideoError) as e:
        print(f"skipsr: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, jsonschema.ValidationError) as e:
        print(f"skipsr: validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
