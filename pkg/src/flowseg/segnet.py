"""Conditional-GAN segmentation network and its training protocol.

A small U-Net generator maps a 6-channel input (RGB stacked with the
colorized flow image; 3-channel RGB-only mode for the ablation) to a
1-channel sigmoid mask.  A patch discriminator judges (condition, mask)
pairs on a spatial logits grid.  Training alternates discriminator and
generator steps; every val_every sample presentations the average
validation L1 is computed and the checkpoint is kept iff strictly lower
than the previous best.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainParams
from .dataio import Checkpoint
from .scene import derive_seed

INPUT_CHANNELS = {"rgb_plus_flow": 6, "rgb_only": 3}


@dataclass
class GeneratorSpec:
    in_channels: int = 6
    ladder: tuple = (16, 32, 64, 128)
    kernel: int = 4

    def validate(self):
        if self.in_channels not in (3, 6):
            raise ValueError(f"in_channels must be 3 or 6, got {self.in_channels}")
        if len(self.ladder) < 2:
            raise ValueError("ladder needs at least 2 stages")
        return self


@dataclass
class DiscriminatorSpec:
    cond_channels: int = 6
    ladder: tuple = (16, 32, 64)
    kernel: int = 4

    def validate(self):
        if self.cond_channels not in (3, 6):
            raise ValueError(f"cond_channels must be 3 or 6, got {self.cond_channels}")
        if len(self.ladder) < 1:
            raise ValueError("ladder needs at least 1 stage")
        return self


def spec_to_dict(spec) -> dict:
    d = asdict(spec)
    d["ladder"] = list(d["ladder"])
    return d


def generator_spec_from_dict(d: dict) -> GeneratorSpec:
    return GeneratorSpec(int(d["in_channels"]), tuple(d["ladder"]), int(d["kernel"])).validate()


def discriminator_spec_from_dict(d: dict) -> DiscriminatorSpec:
    return DiscriminatorSpec(int(d["cond_channels"]), tuple(d["ladder"]), int(d["kernel"])).validate()


def _init_conv(rng, out_ch, in_ch, k):
    w = Tensor(rng.normal(0.0, 0.02, size=(out_ch, in_ch, k, k)).astype(np.float32),
               requires_grad=True)
    b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
    return w, b


def _init_tconv(rng, in_ch, out_ch, k):
    w = Tensor(rng.normal(0.0, 0.02, size=(in_ch, out_ch, k, k)).astype(np.float32),
               requires_grad=True)
    b = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
    return w, b


class Generator:
    """Encoder-decoder with skip concatenations and a sigmoid head.

    Stride-2 convs halve the resolution at each encoder stage (input
    sizes must be divisible by 2**len(ladder)); mirrored transposed
    convs restore it, so output spatial dims equal input dims.
    """

    def __init__(self, spec: GeneratorSpec, seed: int = 0):
        self.spec = spec.validate()
        rng = np.random.default_rng(seed)
        k = spec.kernel
        self.params: dict[str, Tensor] = {}
        prev = spec.in_channels
        for i, ch in enumerate(spec.ladder):
            self.params[f"enc{i}.w"], self.params[f"enc{i}.b"] = _init_conv(rng, ch, prev, k)
            prev = ch
        depth = len(spec.ladder)
        for i in range(depth - 2, -1, -1):
            in_ch = spec.ladder[i + 1] * (1 if i == depth - 2 else 2)
            self.params[f"dec{i}.w"], self.params[f"dec{i}.b"] = _init_tconv(
                rng, in_ch, spec.ladder[i], k)
        self.params["head.w"], self.params["head.b"] = _init_tconv(
            rng, spec.ladder[0] * 2, 1, k)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.spec.in_channels:
            raise ValueError(
                f"generator expects {self.spec.in_channels} channels, got {x.shape[1]}")
        skips = []
        h = x
        for i in range(len(self.spec.ladder)):
            h = ad.conv2d(h, self.params[f"enc{i}.w"], self.params[f"enc{i}.b"],
                          stride=2, padding=1)
            h = ad.leaky_relu(h, 0.2)
            skips.append(h)
        h = skips[-1]
        for i in range(len(self.spec.ladder) - 2, -1, -1):
            h = ad.conv2d_transpose(h, self.params[f"dec{i}.w"], self.params[f"dec{i}.b"],
                                    stride=2, padding=1)
            h = ad.relu(h)
            h = ad.concat_channels(h, skips[i])
        h = ad.conv2d_transpose(h, self.params["head.w"], self.params["head.b"],
                                stride=2, padding=1)
        return ad.sigmoid(h)

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()


class Discriminator:
    """Patch discriminator over (condition, mask) stacks; emits a logits grid."""

    def __init__(self, spec: DiscriminatorSpec, seed: int = 0):
        self.spec = spec.validate()
        rng = np.random.default_rng(seed)
        k = spec.kernel
        self.params: dict[str, Tensor] = {}
        prev = spec.cond_channels + 1
        for i, ch in enumerate(spec.ladder):
            self.params[f"conv{i}.w"], self.params[f"conv{i}.b"] = _init_conv(rng, ch, prev, k)
            prev = ch
        self.params["head.w"], self.params["head.b"] = _init_conv(rng, 1, prev, k)

    def forward(self, cond: Tensor, mask: Tensor) -> Tensor:
        if cond.shape[1] != self.spec.cond_channels:
            raise ValueError(
                f"discriminator expects {self.spec.cond_channels} condition channels, "
                f"got {cond.shape[1]}")
        h = ad.concat_channels(cond, mask)
        for i in range(len(self.spec.ladder)):
            h = ad.conv2d(h, self.params[f"conv{i}.w"], self.params[f"conv{i}.b"],
                          stride=2, padding=1)
            h = ad.leaky_relu(h, 0.2)
        return ad.conv2d(h, self.params["head.w"], self.params["head.b"],
                         stride=1, padding=1)

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()


# ---------------------------------------------------------------------------
# Sample assembly
# ---------------------------------------------------------------------------


def assemble_input(rgb: np.ndarray, flow_color: np.ndarray | None, mode: str) -> np.ndarray:
    """Stack network input channels (C,H,W): RGB first, then colorized flow."""
    if mode not in INPUT_CHANNELS:
        raise ValueError(f"unknown input mode {mode!r}")
    rgb = np.asarray(rgb, dtype=np.float32)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb must be (H,W,3), got {rgb.shape}")
    if mode == "rgb_only":
        return np.ascontiguousarray(rgb.transpose(2, 0, 1))
    if flow_color is None:
        raise ValueError("rgb_plus_flow mode requires a flow image")
    flow_color = np.asarray(flow_color, dtype=np.float32)
    if flow_color.shape != rgb.shape:
        raise ValueError(f"flow image {flow_color.shape} does not match rgb {rgb.shape}")
    return np.ascontiguousarray(
        np.concatenate([rgb.transpose(2, 0, 1), flow_color.transpose(2, 0, 1)], axis=0))


def split_input(chw: np.ndarray):
    """Inverse of assemble_input: (rgb HWC, flow HWC or None)."""
    if chw.shape[0] == 3:
        return chw.transpose(1, 2, 0), None
    if chw.shape[0] == 6:
        return chw[:3].transpose(1, 2, 0), chw[3:].transpose(1, 2, 0)
    raise ValueError(f"expected 3 or 6 channels, got {chw.shape[0]}")


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainLogEntry:
    images_seen: int
    val_l1: float
    gen_loss: float
    disc_loss: float
    saved: bool


def validation_l1(gen: Generator, val_set, batch_size: int = 8) -> float:
    """Average L1 between generator output and target over a sample list."""
    total = 0.0
    count = 0
    for start in range(0, len(val_set), batch_size):
        chunk = val_set[start:start + batch_size]
        x = np.stack([s[0] for s in chunk])
        y = np.stack([s[1][None, ...] for s in chunk])
        pred = gen.forward(Tensor(x)).data
        total += float(np.abs(pred - y).sum())
        count += y.size
    return total / count


def _check_samples(samples, channels, what):
    if not samples:
        raise ValueError(f"{what} dataset is empty")
    for x, y in samples:
        if x.shape[0] != channels:
            raise ValueError(
                f"{what} sample has {x.shape[0]} channels, input mode expects {channels}")
        if y.shape != x.shape[1:]:
            raise ValueError(f"{what} target shape {y.shape} does not match input {x.shape}")
        break


def snapshot(gen: Generator, disc: Discriminator, images_seen: int,
             best_val_loss: float) -> Checkpoint:
    params = {f"gen.{k}": v.data.copy() for k, v in gen.params.items()}
    params.update({f"disc.{k}": v.data.copy() for k, v in disc.params.items()})
    return Checkpoint(spec_to_dict(gen.spec), spec_to_dict(disc.spec), params,
                      images_seen, best_val_loss)


def train(train_set, val_set, gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec,
          params: TrainParams, checkpoint_dir: str | None = None, progress=None):
    """Run the full training protocol.

    train_set/val_set are lists of (input CHW float32, target HW float32)
    pairs.  Samples are presented in seeded per-epoch shuffles until
    max_images presentations; every val_every presentations the validation
    L1 decides whether the best checkpoint is replaced (strict improvement
    only).  Returns (best_checkpoint, final_checkpoint, log).
    """
    params.validate()
    gen_spec.validate()
    disc_spec.validate()
    channels = INPUT_CHANNELS[params.input_mode]
    if gen_spec.in_channels != channels or disc_spec.cond_channels != channels:
        raise ValueError(
            f"input mode {params.input_mode!r} needs {channels}-channel specs, got "
            f"generator={gen_spec.in_channels}, discriminator={disc_spec.cond_channels}")
    _check_samples(train_set, channels, "train")
    _check_samples(val_set, channels, "validation")

    gen = Generator(gen_spec, seed=derive_seed(params.seed, 1))
    disc = Discriminator(disc_spec, seed=derive_seed(params.seed, 2))
    shuffle_rng = np.random.default_rng(derive_seed(params.seed, 0))
    g_state = ad.AdamState([p.data for p in gen.params.values()])
    d_state = ad.AdamState([p.data for p in disc.params.values()])

    log: list[TrainLogEntry] = []
    best_val = float("inf")
    best_ckpt: Checkpoint | None = None
    images_seen = 0
    vals_done = 0
    g_running, d_running, steps_since_val = 0.0, 0.0, 0

    def optimizer_step(model, state):
        tensors = list(model.params.values())
        grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]
        ad.adam_step([t.data for t in tensors], grads, state,
                     lr=params.lr, beta1=params.beta1, beta2=params.beta2)

    while images_seen < params.max_images:
        order = shuffle_rng.permutation(len(train_set))
        for start in range(0, len(order), params.batch_size):
            remaining = params.max_images - images_seen
            if remaining <= 0:
                break
            idx = order[start:start + min(params.batch_size, remaining)]
            xb = np.stack([train_set[i][0] for i in idx])
            yb = np.stack([train_set[i][1][None, ...] for i in idx]).astype(np.float32)
            x_t = Tensor(xb)
            y_t = Tensor(yb)

            fake = gen.forward(x_t)

            # discriminator step on (real, detached fake)
            disc.zero_grads()
            gen.zero_grads()
            fake_const = Tensor(fake.data)
            d_real = disc.forward(x_t, y_t)
            d_fake = disc.forward(x_t, fake_const)
            d_loss = ad.scale(ad.add(ad.bce_with_logits(d_real, np.ones_like(d_real.data)),
                                     ad.bce_with_logits(d_fake, np.zeros_like(d_fake.data))),
                              0.5)
            d_loss.backward()
            optimizer_step(disc, d_state)

            # generator step against the updated discriminator
            disc.zero_grads()
            gen.zero_grads()
            d_on_fake = disc.forward(x_t, fake)
            g_adv = ad.bce_with_logits(d_on_fake, np.ones_like(d_on_fake.data))
            g_l1 = ad.l1_loss(fake, y_t)
            g_loss = ad.add(g_adv, ad.scale(g_l1, params.lambda_l1))
            g_loss.backward()
            optimizer_step(gen, g_state)

            images_seen += len(idx)
            g_running += float(g_loss.data)
            d_running += float(d_loss.data)
            steps_since_val += 1

            if images_seen // params.val_every > vals_done:
                vals_done = images_seen // params.val_every
                val_l1 = validation_l1(gen, val_set, batch_size=params.batch_size)
                saved = val_l1 < best_val
                entry = TrainLogEntry(images_seen, val_l1,
                                      g_running / steps_since_val,
                                      d_running / steps_since_val, saved)
                log.append(entry)
                g_running, d_running, steps_since_val = 0.0, 0.0, 0
                if saved:
                    best_val = val_l1
                    best_ckpt = snapshot(gen, disc, images_seen, best_val)
                    if checkpoint_dir is not None:
                        from .dataio import write_checkpoint
                        write_checkpoint(f"{checkpoint_dir}/best.ckpt", best_ckpt)
                if progress is not None:
                    progress(entry)

    final_ckpt = snapshot(gen, disc, images_seen, best_val)
    if checkpoint_dir is not None:
        from .dataio import write_checkpoint
        write_checkpoint(f"{checkpoint_dir}/final.ckpt", final_ckpt)
    if best_ckpt is None:
        best_ckpt = final_ckpt
    return best_ckpt, final_ckpt, log


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def load_generator(ckpt: Checkpoint) -> Generator:
    """Rebuild a generator from a checkpoint, bit-exactly."""
    gen = Generator(generator_spec_from_dict(ckpt.gen_spec), seed=0)
    for name, tensor in gen.params.items():
        key = f"gen.{name}"
        if key not in ckpt.params:
            raise ValueError(f"checkpoint is missing parameter {key!r}")
        blob = ckpt.params[key]
        if blob.shape != tensor.data.shape:
            raise ValueError(
                f"checkpoint parameter {key!r} has shape {blob.shape}, "
                f"expected {tensor.data.shape}")
        tensor.data = blob.astype(np.float32, copy=True)
    return gen


def predict_mask(gen: Generator, image: np.ndarray) -> np.ndarray:
    """Forward one (H,W,C) image through the generator; returns (H,W) in (0,1)."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != gen.spec.in_channels:
        raise ValueError(
            f"expected (H,W,{gen.spec.in_channels}) input, got {image.shape}")
    x = image.transpose(2, 0, 1)[None, ...]
    out = gen.forward(Tensor(x)).data
    return out[0, 0]


def infer(ckpt: Checkpoint, image: np.ndarray) -> np.ndarray:
    """Deterministic forward pass of a checkpointed generator."""
    return predict_mask(load_generator(ckpt), image)


# ---------------------------------------------------------------------------
# Training-log CSV
# ---------------------------------------------------------------------------

TRAINLOG_HEADER = ("images_seen", "val_l1", "gen_loss", "disc_loss", "saved")


def write_trainlog_csv(entries, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINLOG_HEADER)
        for e in entries:
            writer.writerow([e.images_seen, repr(e.val_l1), repr(e.gen_loss),
                             repr(e.disc_loss), int(e.saved)])


def read_trainlog_csv(path):
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != TRAINLOG_HEADER:
            raise ValueError(f"{path}: bad training log header {header}")
        for row in reader:
            entries.append(TrainLogEntry(int(row[0]), float(row[1]), float(row[2]),
                                         float(row[3]), bool(int(row[4]))))
    return entries
