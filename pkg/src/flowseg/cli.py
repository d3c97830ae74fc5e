"""Command-line pipeline: gen / flow / train / eval / compare / render.

Every subcommand is deterministic given its config and seed.  Flags
override config-file values ([scene]/[flow]/[train]/[run] sections via
repeated --set section.key=value), and the effective configuration is
echoed into the output directory for provenance.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from . import config as cfgmod
from . import dataio, metrics, pipeline, report, segnet
from .config import RunConfig, load_config
from .flowviz import colorize_flow
from .optflow import estimate_flow
from .render import ground_truth_flow, render_frame, render_mask
from .scene import CameraFramePair, derive_seed, generate_scene, sample_camera_pair


def _apply_overrides(cfg: RunConfig, assignments):
    for item in assignments or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise cfgmod.ConfigError(f"--set expects section.key=value, got {item!r}")
        key, raw = item.split("=", 1)
        section, name = key.split(".", 1)
        if section == "run":
            if name == "master_seed":
                cfg.master_seed = int(raw)
            elif name == "flow_color_max_mag":
                cfg.flow_color_max_mag = float(raw)
            else:
                raise cfgmod.ConfigError(f"unknown key run.{name}")
            continue
        if section not in ("scene", "flow", "train"):
            raise cfgmod.ConfigError(f"unknown config section {section!r}")
        sub = getattr(cfg, section)
        if not hasattr(sub, name):
            raise cfgmod.ConfigError(f"unknown key {section}.{name}")
        setattr(sub, name, cfgmod._parse_value(raw, getattr(sub, name)))
    return cfg


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    _apply_overrides(cfg, getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        cfg.master_seed = args.seed
    return cfg.validate()


def _echo_config(cfg: RunConfig, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    cfgmod.save_config(cfg, os.path.join(out_dir, "effective.cfg"))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _load(args)
    split = [int(x) for x in args.split.split(",")] if args.split else None
    records = pipeline.generate_dataset(cfg, args.out, args.count,
                                        workers=args.workers, split=split,
                                        lateral_only=args.lateral_only)
    _echo_config(cfg, args.out)
    print(f"wrote {len(records)} samples to {args.out}"
          + (f" (split {args.split})" if split else ""))
    return 0


def cmd_flow(args) -> int:
    cfg = _load(args)
    img_a = dataio.read_image(args.image_a)
    img_b = dataio.read_image(args.image_b)
    flow = estimate_flow(img_a, img_b, cfg.flow)
    dataio.write_flo(args.out_flo, flow)
    dataio.write_image(args.out_color, colorize_flow(flow, cfg.flow_color_max_mag))
    print(f"mean |flow| = {flow.magnitude().mean():.4f} px; "
          f"wrote {args.out_flo} and {args.out_color}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    mode = cfg.train.input_mode
    train_manifest = os.path.join(args.data, "train.jsonl")
    val_manifest = os.path.join(args.data, "val.jsonl")
    train_set = pipeline.load_training_samples(train_manifest, mode, cfg.train.flow_source)
    val_set = pipeline.load_training_samples(val_manifest, mode, cfg.train.flow_source)

    channels = segnet.INPUT_CHANNELS[mode]
    gen_spec = segnet.GeneratorSpec(in_channels=channels)
    disc_spec = segnet.DiscriminatorSpec(cond_channels=channels)
    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)

    def progress(entry):
        flag = " *" if entry.saved else ""
        print(f"  images={entry.images_seen:6d} val_l1={entry.val_l1:.5f} "
              f"g={entry.gen_loss:.4f} d={entry.disc_loss:.4f}{flag}", flush=True)

    best, final, log = segnet.train(train_set, val_set, gen_spec, disc_spec,
                                    cfg.train, checkpoint_dir=args.out,
                                    progress=progress)
    segnet.write_trainlog_csv(log, os.path.join(args.out, "trainlog.csv"))
    if log:
        report.save_training_curves(log, os.path.join(args.out, "loss_curves.png"))
    print(f"best val L1 {best.best_val_loss:.5f} at {best.images_seen} images; "
          f"checkpoints in {args.out}")
    return 0


def _mode_for_checkpoint(ckpt) -> str:
    return "rgb_plus_flow" if int(ckpt.gen_spec["in_channels"]) == 6 else "rgb_only"


def cmd_eval(args) -> int:
    ckpt = dataio.read_checkpoint(args.checkpoint)
    mode = _mode_for_checkpoint(ckpt)
    samples = pipeline.load_eval_samples(args.data, mode, args.flow_source)
    records, summary = metrics.evaluate_dataset(ckpt, samples)
    os.makedirs(args.out, exist_ok=True)
    metrics.write_metrics_csv(records, os.path.join(args.out, "metrics.csv"))
    with open(os.path.join(args.out, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "std", "n"])
        writer.writerow(["iou", repr(summary.iou_mean), repr(summary.iou_std), summary.n])
        writer.writerow(["fp_rate", repr(summary.fp_mean), repr(summary.fp_std), summary.n])
        writer.writerow(["fn_rate", repr(summary.fn_mean), repr(summary.fn_std), summary.n])
    report.save_metrics_figure(records, summary, os.path.join(args.out, "metrics.png"))
    gen = segnet.load_generator(ckpt)
    preds = [segnet.predict_mask(gen, s[1]) for s in samples[:4]]
    report.save_eval_montage(samples[:4], preds, os.path.join(args.out, "examples.png"))
    print(f"IOU {summary.iou_mean:.4f} +/- {summary.iou_std:.4f}  "
          f"FP {summary.fp_mean:.4f}  FN {summary.fn_mean:.4f}  (n={summary.n})")
    return 0


def cmd_compare(args) -> int:
    recs_a = metrics.read_metrics_csv(args.metrics_a)
    recs_b = metrics.read_metrics_csv(args.metrics_b)
    rows = metrics.compare_metric_sets(recs_a, recs_b)
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "compare.csv")
    metrics.write_comparison_csv(rows, out_csv)
    report.save_comparison_figure(rows, os.path.join(args.out, "compare.png"))
    for metric, ma, mb, t, nu, p in rows:
        print(f"{metric}: mean_a={ma:.4f} mean_b={mb:.4f} t={t:.4f} nu={nu:.2f} p={p:.6f}")
    return 0


def cmd_render(args) -> int:
    cfg = _load(args)
    scene_seed = derive_seed(cfg.master_seed, args.index, 0)
    cam_seed = derive_seed(cfg.master_seed, args.index, 1)
    scene = generate_scene(cfg.scene, scene_seed)
    pair = sample_camera_pair(scene, cfg.scene, cam_seed, lateral_only=args.lateral_only)
    intr = pair.intrinsics
    rgb_a, depth_a = render_frame(scene, pair.pose_a, intr)
    rgb_b, _ = render_frame(scene, pair.pose_b, intr)
    mask_a = render_mask(scene, pair.pose_a, intr)
    gt = ground_truth_flow(depth_a, pair)
    est = estimate_flow(rgb_a, rgb_b, cfg.flow)

    os.makedirs(args.out, exist_ok=True)
    _echo_config(cfg, args.out)
    dataio.write_image(os.path.join(args.out, "rgb_a.ppm"), rgb_a)
    dataio.write_image(os.path.join(args.out, "rgb_b.ppm"), rgb_b)
    dataio.write_image(os.path.join(args.out, "mask_a.pgm"), mask_a)
    # inverse-depth visualization: 1/(1+z), sky = 0
    inv = np.where(np.isfinite(depth_a), 1.0 / (1.0 + depth_a), 0.0)
    dataio.write_image(os.path.join(args.out, "depth_a.pgm"), inv)
    dataio.write_flo(os.path.join(args.out, "flow_gt.flo"), gt)
    dataio.write_flo(os.path.join(args.out, "flow_est.flo"), est)
    dataio.write_image(os.path.join(args.out, "flow_gt.ppm"),
                       colorize_flow(gt, cfg.flow_color_max_mag))
    dataio.write_image(os.path.join(args.out, "flow_est.ppm"),
                       colorize_flow(est, cfg.flow_color_max_mag))
    print(f"wrote debug renders for scene {args.index} to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowseg",
        description="Simulation-trained branch segmentation from RGB + optical flow")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeded=True):
        p.add_argument("--config", default=None,
                       help=f"config file (default ${cfgmod.CONFIG_ENV_VAR})")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        if seeded:
            p.add_argument("--seed", type=int, default=None, help="master seed override")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=450, help="number of samples (2 per scene)")
    p.add_argument("--split", default="400,50",
                   help="comma counts for train/val/test manifests ('' = none)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--lateral-only", action="store_true",
                   help="constrain inter-frame translation to the image plane")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("flow", help="estimate flow between two images")
    common(p, seeded=False)
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--out-flo", required=True)
    p.add_argument("--out-color", required=True)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("train", help="train the segmentation network")
    common(p)
    p.add_argument("--data", required=True, help="dataset dir with train.jsonl/val.jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    common(p, seeded=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest .jsonl path")
    p.add_argument("--flow-source", choices=("est", "gt"), default="est")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="Welch-test two metrics CSVs")
    common(p, seeded=False)
    p.add_argument("metrics_a")
    p.add_argument("metrics_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("render", help="debug-render one scene")
    common(p)
    p.add_argument("--index", type=int, default=0, help="scene index under the master seed")
    p.add_argument("--out", required=True)
    p.add_argument("--lateral-only", action="store_true")
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
