"""Command line: ``lesiondiff {gen-data,train,infer,eval,ablate,schedule}``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
runtime failures (I/O, numerical divergence).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .denoiser import load_checkpoint, save_checkpoint
from .diffusion import cosine_schedule, timestep_ladder
from .estimator import DiffusionBoxDetector
from .evalmetrics import evaluate
from .padding import STRATEGIES
from .pipeline import TrainingDiverged
from .svgplot import bar_chart, line_plot
from .synthdata import generate_dataset, read_dataset, write_dataset

log = logging.getLogger("lesiondiff")

PREDICTIONS_FORMAT = "lesiondiff-predictions"
REPORT_FORMAT = "lesiondiff-eval"

# flag name -> estimator parameter
OVERRIDES = {
    "padding": ("--padding", str),
    "n_boxes": ("--n-boxes", int),
    "lambda_scale": ("--lambda-scale", float),
    "loss_target": ("--loss-target", str),
    "timesteps": ("--timesteps", int),
    "max_iter": ("--iterations", int),
    "batch_size": ("--batch-size", int),
    "learning_rate": ("--lr", float),
    "sampling_steps": ("--steps", int),
    "lambda_conf": ("--lambda-conf", float),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _fmt(x) -> str:
    return repr(float(x))


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{p}: expected a JSON object of parameter names")
    return cfg


def build_detector(args, base: dict | None = None) -> DiffusionBoxDetector:
    """Defaults < ``base`` (e.g. checkpoint) < config file < command-line flags."""
    params = dict(base or {})
    if getattr(args, "config", None):
        params.update(load_config_file(args.config))
    for name in OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            params[name] = value
    if getattr(args, "seed", None) is not None:
        params["random_state"] = args.seed
    if getattr(args, "no_nms", False):
        params["use_nms"] = False
    if getattr(args, "denoiser", None):
        params["denoiser"] = args.denoiser
    valid = DiffusionBoxDetector().get_params()
    unknown = sorted(set(params) - set(valid))
    if unknown:
        raise UsageError(f"unknown configuration keys: {', '.join(unknown)}")
    det = DiffusionBoxDetector(**params)
    try:
        det.validate_params()
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    return det


def _load_data(path):
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"data directory not found: {p}")
    manifest, samples = read_dataset(p)
    return manifest, samples


def _images_and_boxes(samples):
    X = np.stack([s.image for s in samples]) if samples else np.zeros((0, 1, 1), np.float32)
    return X, [s.gt_boxes for s in samples]


def cmd_gen_data(args):
    if args.count < 0 or args.size < 32:
        raise UsageError("count must be >= 0 and size >= 32")
    samples = generate_dataset(args.count, args.seed, args.size)
    write_dataset(args.out, samples, seed=args.seed, size=args.size)
    print(f"wrote {len(samples)} samples to {args.out}")


def cmd_train(args):
    det = build_detector(args)
    if det.denoiser != "mlp":
        raise UsageError("only the mlp denoiser can be trained")
    _, samples = _load_data(args.data)
    if not samples:
        raise UsageError(f"{args.data}: dataset is empty")
    X, y = _images_and_boxes(samples)
    det.set_params(verbose=1)
    det.fit(X, y)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    params = det.get_params()
    params.pop("verbose")
    save_checkpoint(out, det.params_, seed=det.train_config().seed,
                    extra={"estimator_params": params, "iterations": det.n_iter_})
    loss_csv = out.with_name("loss.csv")
    with open(loss_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(det.loss_curve_):
            w.writerow([i + 1, _fmt(v)])
    out.with_name("loss.svg").write_text(
        line_plot(np.arange(1, len(det.loss_curve_) + 1), det.loss_curve_,
                  title="training loss", xlabel="iteration", ylabel="loss"))
    print(f"checkpoint: {out}\nloss curve: {loss_csv}")


def cmd_infer(args):
    if args.denoiser == "oracle":
        det = build_detector(args)
        ckpt_name = None
    else:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required unless --denoiser oracle")
        if not Path(args.checkpoint).is_file():
            raise UsageError(f"checkpoint not found: {args.checkpoint}")
        params, doc = load_checkpoint(args.checkpoint)
        det = build_detector(args, base=doc.get("estimator_params", {}))
        det.params_ = params
        det.schedule_ = cosine_schedule(int(det.timesteps), float(det.s_offset))
        ckpt_name = Path(args.checkpoint).name
    _, samples = _load_data(args.data)
    if samples:
        X, y = _images_and_boxes(samples)
        preds = det.predict(X, gt_boxes=y if det.denoiser == "oracle" else None, threads=args.threads)
    else:
        preds = []
    doc = {
        "format": PREDICTIONS_FORMAT,
        "version": 1,
        "checkpoint": ckpt_name,
        "denoiser": det.denoiser,
        "infer_params": {k: det.get_params()[k] for k in
                         ("n_boxes", "sampling_steps", "lambda_conf", "use_nms", "nms_iou", "random_state")},
        "predictions": [
            {"image_id": s.image_id, "boxes": b.tolist(), "scores": sc.tolist()}
            for s, (b, sc) in zip(samples, preds)
        ],
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(doc, indent=1) + "\n")
    n = sum(len(sc) for _, sc in preds)
    print(f"wrote {n} detections for {len(samples)} images to {args.out}")


def load_predictions(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"predictions file not found: {p}")
    doc = json.loads(p.read_text())
    if doc.get("format") != PREDICTIONS_FORMAT:
        raise UsageError(f"{p}: not a {PREDICTIONS_FORMAT} file")
    return {e["image_id"]: (np.asarray(e["boxes"], dtype=np.float64).reshape(-1, 4),
                            np.asarray(e["scores"], dtype=np.float64))
            for e in doc["predictions"]}


def _report_doc(report: dict) -> dict:
    out = {"format": REPORT_FORMAT, "version": 1}
    out.update(report)
    out["curve"] = [[None if not np.isfinite(t) else t, f, s] for t, f, s in report["curve"]]
    return out


def cmd_eval(args):
    preds = load_predictions(args.predictions)
    _, samples = _load_data(args.data)
    gts = {s.image_id: s.gt_boxes for s in samples}
    unknown = sorted(set(preds) - set(gts))
    if unknown:
        raise UsageError(f"predictions reference unknown images: {', '.join(unknown[:5])}")
    report = evaluate(preds, gts, iou_thr=args.iou)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(_report_doc(report), indent=1) + "\n")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fppi", "sensitivity"])
            for t, f, s in report["curve"]:
                w.writerow([_fmt(t), _fmt(f), _fmt(s)])
    if args.svg:
        pts = [(f, s) for _, f, s in report["curve"]]
        Path(args.svg).write_text(line_plot([p[0] for p in pts], [p[1] for p in pts],
                                            title="FROC", xlabel="false positives per image",
                                            ylabel="sensitivity"))
    sens = ", ".join(f"@{k}: {v:.4f}" for k, v in report["sensitivity"].items())
    print(f"{sens}; average {report['average_sensitivity']:.4f}")


def _parse_list(text, kind):
    return [kind(x) for x in text.split(",") if x.strip()]


def cmd_ablate(args):
    strategies = _parse_list(args.strategies, str)
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad or not strategies:
        raise UsageError(f"unknown strategy {', '.join(bad) or '(none given)'}; "
                         f"valid names: {', '.join(STRATEGIES)}")
    try:
        seeds = _parse_list(args.seeds, int)
    except ValueError as exc:
        raise UsageError(f"--seeds must be a comma-separated list of integers ({exc})") from exc
    base = build_detector(args)
    _, train = _load_data(args.data)
    _, test = _load_data(args.eval_data or args.data)
    X, y = _images_and_boxes(train)
    Xt, yt = _images_and_boxes(test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for strategy in strategies:
        for seed in seeds:
            det = DiffusionBoxDetector(**{**base.get_params(), "padding": strategy, "random_state": seed})
            det.fit(X, y)
            preds = det.predict(Xt, threads=args.threads)
            report = evaluate({i: p for i, p in enumerate(preds)}, {i: b for i, b in enumerate(yt)})
            rows.append((strategy, seed, report))
            print(f"{strategy} seed={seed}: average sensitivity {report['average_sensitivity']:.4f}")
    keys = list(rows[0][2]["sensitivity"]) if rows else []
    with open(out / "ablation_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "seed", *[f"sens@{k}" for k in keys], "avg_sensitivity"])
        for strategy, seed, r in rows:
            w.writerow([strategy, seed, *[_fmt(r["sensitivity"][k]) for k in keys],
                        _fmt(r["average_sensitivity"])])
    summary = []
    for strategy in strategies:
        vals = np.array([r["average_sensitivity"] for s, _, r in rows if s == strategy])
        sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        summary.append((strategy, len(vals), float(vals.mean()), sd))
    with open(out / "ablation_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "runs", "mean_avg_sensitivity", "sd"])
        for strategy, n, mean, sd in summary:
            w.writerow([strategy, n, _fmt(mean), _fmt(sd)])
    (out / "ablation.svg").write_text(bar_chart(
        [s[0] for s in summary], [s[2] for s in summary], [s[3] for s in summary],
        title="padding strategy ablation", ylabel="mean avg sensitivity"))
    print(f"wrote {out / 'ablation_summary.csv'}")


def cmd_schedule(args):
    try:
        sched = cosine_schedule(args.T, args.s_offset)
        ladder = timestep_ladder(args.T, args.steps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    lines = ["t,alpha_bar"] + [f"{t},{_fmt(a)}" for t, a in enumerate(sched.alpha_bar)]
    text = "\n".join(lines) + "\n"
    ladder_line = "ladder: " + " ".join(str(t) for t in ladder)
    if args.out:
        Path(args.out).write_text(text)
        print(ladder_line)
    else:
        sys.stdout.write(text)
        print(ladder_line, file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lesiondiff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_help, out_required=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", help="JSON file of estimator parameters")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", required=out_required, help=out_help)

    def overrides(p, names):
        for name in names:
            flag, kind = OVERRIDES[name]
            p.add_argument(flag, dest=name, type=kind, default=None)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p, "output directory")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(func=cmd_gen_data, seed=0)

    p = sub.add_parser("train", help="train the box denoiser")
    common(p, "checkpoint path (loss.csv and loss.svg go next to it)")
    p.add_argument("--data", required=True)
    overrides(p, OVERRIDES)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="detect lesions in a dataset")
    common(p, "predictions file")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--denoiser", choices=("mlp", "oracle"), default=None)
    p.add_argument("--no-nms", action="store_true")
    overrides(p, ("n_boxes", "sampling_steps", "lambda_conf"))
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="FROC evaluation of a predictions file")
    common(p, "report file")
    p.add_argument("--data", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--csv", help="write threshold,fppi,sensitivity rows here")
    p.add_argument("--svg", help="write a FROC plot here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare padding strategies over seeds")
    common(p, "output directory")
    p.add_argument("--data", required=True, help="training dataset")
    p.add_argument("--eval-data", help="held-out dataset (defaults to --data)")
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    p.add_argument("--seeds", default="0")
    overrides(p, OVERRIDES)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("schedule", help="dump the cosine alpha-bar table")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--s-offset", type=float, default=0.008)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_schedule)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("lesiondiff: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except UsageError as exc:
        print(f"lesiondiff {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"lesiondiff {args.command}: training diverged: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"lesiondiff {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
