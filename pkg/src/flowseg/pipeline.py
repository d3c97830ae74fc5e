"""Dataset production: scenes -> camera pairs -> renders -> flows -> files.

Each scene yields two directed samples (one per frame, flow toward the
other frame), mirroring how a moving camera pairs every frame with its
predecessor.  Per-scene seeds derive from the master seed by counter, so
generation is order-independent and parallelizes over a worker pool
without changing a single byte of output.
"""

from __future__ import annotations

import hashlib
import math
import os
from multiprocessing import Pool

import numpy as np

from .config import RunConfig
from .dataio import SampleRecord, read_manifest, write_flo, write_image, write_manifest
from .flowviz import colorize_flow
from .optflow import estimate_flow
from .render import ground_truth_flow, render_frame, render_mask
from .scene import CameraFramePair, derive_seed, generate_scene, sample_camera_pair
from .segnet import assemble_input

IMAGES_SUBDIR = "images"
SPLIT_NAMES = ("train", "val", "test")


def _digest(config, scene) -> str:
    return hashlib.sha256(repr((config, scene)).encode("utf-8")).hexdigest()[:16]


def generate_scene_samples(cfg: RunConfig, root: str, scene_index: int,
                           lateral_only: bool = False, flow_provider=None):
    """Render one scene pair and write both directed samples under root.

    flow_provider(img_a, img_b) -> FlowField defaults to the built-in
    estimator; swap in any other provider (or precomputed fields) here.
    """
    scene_seed = derive_seed(cfg.master_seed, scene_index, 0)
    cam_seed = derive_seed(cfg.master_seed, scene_index, 1)
    scene = generate_scene(cfg.scene, scene_seed)
    pair = sample_camera_pair(scene, cfg.scene, cam_seed, lateral_only=lateral_only)
    intr = pair.intrinsics

    rgb_a, depth_a = render_frame(scene, pair.pose_a, intr)
    rgb_b, depth_b = render_frame(scene, pair.pose_b, intr)
    mask_a = render_mask(scene, pair.pose_a, intr)
    mask_b = render_mask(scene, pair.pose_b, intr)
    gt_ab = ground_truth_flow(depth_a, pair)
    gt_ba = ground_truth_flow(depth_b, CameraFramePair(intr, pair.pose_b, pair.pose_a))
    if flow_provider is None:
        flow_provider = lambda a, b: estimate_flow(a, b, cfg.flow)
    est_ab = flow_provider(rgb_a, rgb_b)
    est_ba = flow_provider(rgb_b, rgb_a)

    img_dir = os.path.join(root, IMAGES_SUBDIR)
    os.makedirs(img_dir, exist_ok=True)
    prefix = f"{scene_index:05d}"
    digest = _digest(cfg.scene, scene)

    def rel(name):
        return f"{IMAGES_SUBDIR}/{prefix}{name}"

    write_image(os.path.join(root, rel("a_rgb.ppm")), rgb_a)
    write_image(os.path.join(root, rel("b_rgb.ppm")), rgb_b)
    write_image(os.path.join(root, rel("a_mask.pgm")), mask_a)
    write_image(os.path.join(root, rel("b_mask.pgm")), mask_b)

    records = []
    for side, gt, est in (("a", gt_ab, est_ab), ("b", gt_ba, est_ba)):
        write_flo(os.path.join(root, rel(f"{side}_flow.flo")), est)
        write_flo(os.path.join(root, rel(f"{side}_flowgt.flo")), gt)
        write_image(os.path.join(root, rel(f"{side}_flow.ppm")),
                    colorize_flow(est, cfg.flow_color_max_mag))
        write_image(os.path.join(root, rel(f"{side}_flowgt.ppm")),
                    colorize_flow(gt, cfg.flow_color_max_mag))
        other = "b" if side == "a" else "a"
        records.append(SampleRecord(
            sample_id=f"{prefix}{side}",
            rgb_a=rel(f"{side}_rgb.ppm"),
            rgb_b=rel(f"{other}_rgb.ppm"),
            mask=rel(f"{side}_mask.pgm"),
            flow=rel(f"{side}_flow.flo"),
            flow_color=rel(f"{side}_flow.ppm"),
            flow_gt=rel(f"{side}_flowgt.flo"),
            flow_color_gt=rel(f"{side}_flowgt.ppm"),
            seed=scene_seed,
            digest=digest,
        ))
    return records


def _scene_job(args):
    cfg, root, index, lateral_only = args
    return generate_scene_samples(cfg, root, index, lateral_only)


def generate_dataset(cfg: RunConfig, root: str, count: int, workers: int = 1,
                     split=None, lateral_only: bool = False, start_index: int = 0):
    """Produce count samples (2 per scene) plus manifest(s) under root.

    split is an optional list of counts assigned in order to manifests
    train.jsonl / val.jsonl / test.jsonl; the full manifest.jsonl always
    covers every record.  Returns the list of records.
    """
    cfg.validate()
    os.makedirs(root, exist_ok=True)
    if count < 0:
        raise ValueError("count must be >= 0")
    if split is not None:
        if len(split) > len(SPLIT_NAMES):
            raise ValueError(f"at most {len(SPLIT_NAMES)} split parts supported")
        if sum(split) > count:
            raise ValueError(f"split {split} exceeds count {count}")
    n_scenes = math.ceil(count / 2)
    jobs = [(cfg, root, start_index + i, lateral_only) for i in range(n_scenes)]
    if workers > 1 and n_scenes > 1:
        with Pool(workers) as pool:
            per_scene = pool.map(_scene_job, jobs)
    else:
        per_scene = [_scene_job(j) for j in jobs]
    records = [rec for pair in per_scene for rec in pair][:count]

    write_manifest(os.path.join(root, "manifest.jsonl"), records)
    if split is not None:
        cursor = 0
        for name, n in zip(SPLIT_NAMES, split):
            write_manifest(os.path.join(root, f"{name}.jsonl"),
                           records[cursor:cursor + n])
            cursor += n
    return records


# ---------------------------------------------------------------------------
# Loading samples back for training / evaluation
# ---------------------------------------------------------------------------


def _record_arrays(root: str, rec: SampleRecord, flow_source: str):
    from .dataio import read_image

    rgb = read_image(os.path.join(root, rec.rgb_a))
    mask = read_image(os.path.join(root, rec.mask))
    flow_rel = rec.flow_color if flow_source == "est" else rec.flow_color_gt
    flow_color = read_image(os.path.join(root, flow_rel))
    return rgb, flow_color, mask


def load_training_samples(manifest_path: str, input_mode: str, flow_source: str = "est"):
    """(input CHW, target HW) pairs for segnet.train."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for rec in read_manifest(manifest_path):
        rgb, flow_color, mask = _record_arrays(root, rec, flow_source)
        flow = None if input_mode == "rgb_only" else flow_color
        samples.append((assemble_input(rgb, flow, input_mode), mask))
    return samples


def load_eval_samples(manifest_path: str, input_mode: str, flow_source: str = "est"):
    """(sample_id, input HWC, target HW) triples for evaluate_dataset."""
    root = os.path.dirname(os.path.abspath(manifest_path))
    samples = []
    for rec in read_manifest(manifest_path):
        rgb, flow_color, mask = _record_arrays(root, rec, flow_source)
        flow = None if input_mode == "rgb_only" else flow_color
        chw = assemble_input(rgb, flow, input_mode)
        samples.append((rec.sample_id, np.ascontiguousarray(chw.transpose(1, 2, 0)), mask))
    return samples
