"""Command-line surface wiring the pipeline end to end.

Subcommands: gen-data, train, score, detect, eval, predict-dump. Every
command is deterministic given its flags and files; all randomness flows
from explicit seeds. Exit codes: 0 success, 1 usage/config error, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import anomaly as AN
from . import synth as S
from . import tensor as T
from .config import load_run_config
from .errors import ConfigError, DataError, NumericError
from .network import (
    decode,
    encode,
    init_model,
    load_checkpoint,
    patchify,
    save_checkpoint,
)
from .training import train, write_loss_history


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _has_frames(path: Path) -> bool:
    return any(path.glob("frame_*.pgm"))


def _load_clips_dir(path: Path) -> list[S.VideoClip]:
    """A clip directory, or a directory of clip directories (sorted)."""
    path = Path(path)
    if not path.is_dir():
        raise DataError(f"{path}: not a directory")
    if _has_frames(path):
        return [S.load_clip(path)]
    subdirs = sorted(p for p in path.iterdir() if p.is_dir())
    clips = [S.load_clip(d) for d in subdirs if _has_frames(d)]
    if not clips:
        raise DataError(f"{path}: no PGM clips found")
    return clips


def cmd_gen_data(args) -> int:
    spec = S.load_scene_spec(args.spec)
    if args.length < 1:
        raise ConfigError("--length must be >= 1")
    clip = S.generate(spec, args.length, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    S.save_clip(clip, out)
    print(f"wrote {len(clip)} frames to {out}")
    if clip.ground_truth:
        print(f"ground truth: {clip.ground_truth}")
    return 0


def cmd_train(args) -> int:
    net_cfg, train_cfg = load_run_config(args.config)
    if args.max_iterations is not None:
        train_cfg.max_iterations = args.max_iterations
    if args.seed is not None:
        train_cfg.seed = args.seed
    if args.threads is not None:
        train_cfg.threads = args.threads
    clips = _load_clips_dir(Path(args.data))
    for i, clip in enumerate(clips):
        if clip.frame_size != net_cfg.frame_size:
            raise DataError(
                f"clip {i} is {clip.frame_size}px but the config says "
                f"{net_cfg.frame_size}px"
            )
    model = init_model(net_cfg, train_cfg.seed)
    result = train(model, clips, train_cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.ckpt", model)
    write_loss_history(out / "loss_history.csv", result.history)
    final = result.final_train_loss
    print(f"iterations: {result.iterations}")
    print(f"final train loss: {'n/a' if final is None else f'{final:.6g}'}")
    best = result.best_val_loss
    print(f"best val loss: {'n/a' if best is None else f'{best:.6g}'}")
    return 0


def cmd_score(args) -> int:
    model = load_checkpoint(args.checkpoint)
    clip = S.load_clip(args.data)
    errors = AN.sliding_errors(
        model, clip, error_source=args.error_source, threads=args.threads
    )
    scores = AN.regularity(errors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    AN.write_regularity_csv(out / "regularity.csv", errors, scores)
    print(f"scored {errors.size} windows -> {out / 'regularity.csv'}")
    return 0


def cmd_detect(args) -> int:
    _, scores = AN.read_regularity_csv(args.scores)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.sweep:
        for th in AN.SWEEP_THRESHOLDS:
            regions = AN.detect_regions(
                scores, th, window=args.window, merge_distance=args.merge_distance
            )
            S.write_intervals(
                out / f"detections_t{th:.2f}.txt",
                [r.as_interval() for r in regions],
            )
        print(f"wrote {len(AN.SWEEP_THRESHOLDS)} sweep files to {out}")
        return 0
    if args.threshold is None:
        raise ConfigError("detect needs --threshold T or --sweep")
    regions = AN.detect_regions(
        scores, args.threshold, window=args.window,
        merge_distance=args.merge_distance,
    )
    S.write_intervals(out / "detections.txt", [r.as_interval() for r in regions])
    print(f"{len(regions)} regions -> {out / 'detections.txt'}")
    return 0


def cmd_eval(args) -> int:
    gt = S.read_intervals(args.ground_truth)
    detections = Path(args.detections)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    sweep_rows = None
    if detections.is_dir():
        files = sorted(detections.glob("detections_t*.txt"))
        if not files:
            raise DataError(f"{detections}: no detections_t*.txt sweep files")
        sweep_rows = []
        best = None
        for f in files:
            th = float(f.stem.split("_t")[1])
            report = AN.evaluate(S.read_intervals(f), gt, overlap=args.overlap)
            row = AN.SweepRow(
                threshold=th,
                true_positives=report.true_positives,
                false_positives=report.false_positives,
                false_negatives=report.false_negatives,
                precision=report.precision,
                recall=report.recall,
                f1=report.f1,
            )
            sweep_rows.append(row)
            if best is None or row.f1 > best[0].f1:
                best = (row, report)
        report = best[1]
        print(f"best threshold by F1: {best[0].threshold:.2f}")
    else:
        report = AN.evaluate(
            S.read_intervals(detections), gt, overlap=args.overlap
        )

    AN.write_report(out / "report.txt", report, sweep_rows)
    print(
        f"TP {report.true_positives}  FP {report.false_positives}  "
        f"FN {report.false_negatives}  precision {report.precision:.3f}  "
        f"recall {report.recall:.3f}"
    )
    return 0


def cmd_predict_dump(args) -> int:
    model = load_checkpoint(args.checkpoint)
    clip = S.load_clip(args.data)
    cfg = model.config
    start = args.start
    if start < 0 or start + cfg.input_len > len(clip):
        raise DataError(
            f"window at {start} needs frames [{start}, {start + cfg.input_len})"
            f" but clip has {len(clip)}"
        )
    inputs = list(clip.frames[start : start + cfg.input_len])
    future_lo = start + cfg.input_len
    future_hi = min(len(clip), future_lo + cfg.output_len)
    truth = inputs + list(clip.frames[future_lo:future_hi])

    with T.no_grad():
        patches = [patchify(f, cfg.patch_factor) for f in inputs]
        enc = encode(model.encoder, patches)
        recon = []
        if model.past is not None:
            recon = decode(
                model.past, enc, "past", cfg.input_len,
                cfg.patch_factor, cfg.output_nonlinearity,
            )
        mode = "future_conditioned" if cfg.conditioned else "future_unconditioned"
        pred = decode(
            model.future, enc, mode, cfg.output_len,
            cfg.patch_factor, cfg.output_nonlinearity,
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    for t, frame in enumerate(truth):
        S.save_pgm(out / f"truth_t{t:02d}.pgm", np.asarray(frame)[0])
        written += 1
    for t, frame in enumerate(recon):
        S.save_pgm(out / f"recon_t{t:02d}.pgm", frame.data[0])
        written += 1
    for t, frame in enumerate(pred):
        S.save_pgm(out / f"pred_t{t + cfg.input_len:02d}.pgm", frame.data[0])
        written += 1
    print(f"wrote {written} frames to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="convlstm-anomaly", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic clip from a scene spec")
    p.add_argument("--spec", required=True, help="scene spec file (key = value)")
    p.add_argument("--out", required=True, help="output clip directory")
    p.add_argument("--length", type=int, required=True, help="number of frames")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a directory of clips")
    p.add_argument("--config", required=True, help="run config file (key = value)")
    p.add_argument("--data", required=True, help="clip directory or parent of clips")
    p.add_argument("--out", required=True)
    p.add_argument("--max-iterations", type=int, default=None,
                   help="override the config value")
    p.add_argument("--seed", type=int, default=None, help="override the config value")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="write per-window regularity for one clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="clip directory")
    p.add_argument("--out", required=True)
    p.add_argument("--error-source", default="combined",
                   choices=AN.ERROR_SOURCES)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("detect", help="propose anomalous regions from scores")
    p.add_argument("--scores", required=True, help="regularity.csv from score")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None,
                   help="persistence threshold")
    p.add_argument("--sweep", action="store_true",
                   help="write detections for thresholds 0.05 .. 1.00")
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--merge-distance", type=int, default=50)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--detections", required=True,
                   help="detections.txt, or a detect --sweep output directory")
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlap", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "predict-dump",
        help="write truth/reconstruction/prediction frames for one window",
    )
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="clip directory")
    p.add_argument("--start", type=int, required=True, help="window start frame")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_dump)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
