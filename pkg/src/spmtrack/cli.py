"""Command-line interface: ``spmtrack {track,eval,recall,init-weights,synth}``."""

import argparse
import csv
import dataclasses
import sys
import time
from pathlib import Path

from .data import SequenceError, TrackResult, load_results, load_sequence, save_results, write_sequence
from .evaluation import precision_curve, recall_analysis, success_curve
from .featnet import init_weights
from .tracker import CONFIG_ENV, SPMModel, Tracker, TrackerConfig
from .weights import WeightFileError, load_weights, save_weights


class InputError(Exception):
    """A named input is missing or unusable; reported with exit code 1."""


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def _parse_ks(text):
    try:
        ks = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError(f"K values must be positive, got {text!r}")
    return ks


def _load_model(args):
    path = _existing(args.weights, "weights file")
    try:
        w = load_weights(path)
    except WeightFileError as e:
        raise InputError(f"weights file {path}: {e}") from None
    try:
        if args.extractor == "toy":
            from .toy import toy_model

            return toy_model(w)
        return SPMModel.from_weights(w)
    except (KeyError, ValueError) as e:
        raise InputError(f"weights file {path} does not fit the {args.extractor} model: {e}") from None


def _load_seq(path):
    _existing(path, "sequence directory")
    try:
        return load_sequence(path)
    except SequenceError as e:
        raise InputError(str(e)) from None


def _config(args):
    cfg = TrackerConfig.default()
    overrides = {
        "w_cls": getattr(args, "wcls", None),
        "w_box": getattr(args, "wbox", None),
        "k": getattr(args, "k", None),
        "window_influence": getattr(args, "window_influence", None),
        "size_lr": getattr(args, "size_lr", None),
    }
    return dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})


def cmd_track(args):
    seq = _load_seq(args.seq)
    tracker = Tracker(_load_model(args), _config(args))
    t0 = time.perf_counter()
    state = tracker.init(seq.image(0), seq.boxes[0])
    boxes, scores, ms = [seq.boxes[0]], [1.0], [1000.0 * (time.perf_counter() - t0)]
    for i in range(1, len(seq)):
        t0 = time.perf_counter()
        res = tracker.track(state, seq.image(i))
        state = res.state
        boxes.append(res.box)
        scores.append(res.score)
        ms.append(1000.0 * (time.perf_counter() - t0))
    save_results(TrackResult(boxes, scores, ms, seq.name), args.out)
    fps = len(ms) / max(sum(ms) / 1000.0, 1e-9)
    print(f"{seq.name}: tracked {len(seq)} frames ({fps:.1f} fps) -> {args.out}")
    return 0


def cmd_eval(args):
    res_path = _existing(args.results, "results file")
    seq = _load_seq(args.seq)
    try:
        result = load_results(res_path)
    except (ValueError, KeyError) as e:
        raise InputError(f"results file {res_path}: {e}") from None
    if len(result.boxes) != len(seq):
        raise InputError(f"results file {res_path}: {len(result.boxes)} frames, sequence has {len(seq)}")
    pred = result.bboxes()
    ts, success, auc = success_curve(pred, seq.boxes)
    es, precision, p20 = precision_curve(pred, seq.boxes)
    with open(args.out, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["curve", "threshold", "value"])
        out.writerows(("success", f"{t:.2f}", repr(float(v))) for t, v in zip(ts, success))
        out.writerows(("precision", f"{e:g}", repr(float(v))) for e, v in zip(es, precision))
    print(f"AUC {auc:.4f}  precision@20 {p20:.4f}")
    return 0


def cmd_recall(args):
    seq = _load_seq(args.seq)
    tracker = Tracker(_load_model(args), _config(args))
    frames = [seq.image(i) for i in range(len(seq))]
    try:
        table = recall_analysis(tracker, frames, seq.boxes, args.k)
    except ValueError as e:
        raise InputError(f"sequence {seq.name}: {e}") from None
    with open(args.out, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["k", "threshold", "recall"])
        out.writerows((k, t, repr(v)) for k, t, v in table.rows())
    for k, mean in zip(table.ks, table.mean_recall):
        print(f"K={k}: mean recall {mean:.4f}")
    return 0


def cmd_init_weights(args):
    if args.toy:
        from .toy import toy_head_weights

        w = toy_head_weights()
    else:
        w = init_weights(args.seed)
    save_weights(w, args.out)
    print(f"wrote {len(w)} tensors to {args.out}")
    return 0


def cmd_synth(args):
    from .toy import synthetic_square_sequence

    frames, boxes = synthetic_square_sequence(args.frames)
    write_sequence(args.out, frames, boxes)
    print(f"wrote {len(frames)} frames to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="spmtrack",
        description=f"Two-stage Siamese tracker. Default config JSON may be named in ${CONFIG_ENV}.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def model_args(sp):
        sp.add_argument("--weights", required=True, help="weight file (SPMW format)")
        sp.add_argument("--seq", required=True, help="sequence directory")
        sp.add_argument("--extractor", choices=("backbone", "toy"), default="backbone",
                        help="feature extractor; 'toy' expects weights from init-weights --toy")

    t = sub.add_parser("track", help="track one sequence, write per-frame results JSON")
    model_args(t)
    t.add_argument("--out", required=True)
    t.add_argument("--wcls", type=float, help="fusion weight of the FM score (default 0.5)")
    t.add_argument("--wbox", type=float, help="fusion weight of the FM box (default 2)")
    t.add_argument("--k", type=int, help="proposals kept after NMS (default 9)")
    t.add_argument("--window-influence", type=float, help="cosine window weight (default 0.42)")
    t.add_argument("--size-lr", type=float, help="size interpolation rate (default 0.3)")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="success / precision curves as CSV")
    e.add_argument("--results", required=True)
    e.add_argument("--seq", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("recall", help="proposal recall versus K and overlap threshold")
    model_args(r)
    r.add_argument("--k", type=_parse_ks, default=[1, 3, 5, 7, 9], help="comma-separated K values")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_recall)

    i = sub.add_parser("init-weights", help="write deterministic random (or toy) weights")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True)
    i.add_argument("--toy", action="store_true", help="hand-set heads for the toy extractor")
    i.set_defaults(func=cmd_init_weights)

    s = sub.add_parser("synth", help="write the synthetic moving-square sequence")
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=60)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except InputError as e:
        print(f"spmtrack {args.command}: error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"spmtrack {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
