"""Bit-exact file formats: PPM/PGM images, Middlebury .flo flow fields,
JSON-lines dataset manifests, and binary network checkpoints.

Every format round-trips byte-identically (write -> read -> write) and
all multi-byte values are explicitly little-endian, so a checkpoint moves
across machines without changing inference outputs.  Writes go through a
temp file + rename, so readers never observe partial files.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .flowfield import FlowField

FLO_MAGIC = 202021.25
FLO_UNKNOWN = 1e10  # invalid-pixel sentinel; |value| > 1e9 means unknown
CHECKPOINT_MAGIC = b"FSEGCKPT"
CHECKPOINT_VERSION = 1


class ParseError(ValueError):
    """Malformed file; message carries the path and a byte/line position."""


def atomic_write_bytes(path: str, payload: bytes):
    """Write payload to path via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# PPM (P6) / PGM (P5) images
# ---------------------------------------------------------------------------


def write_image(path: str, img: np.ndarray):
    """Save a [0,1] float image: (H,W) as binary PGM, (H,W,3) as binary PPM."""
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H,W) or (H,W,3) image, got {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    h, w = img.shape[:2]
    quantized = np.rint(img.astype(np.float64) * 255.0).astype(np.uint8)
    header = magic + b"\n" + f"{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + quantized.tobytes())


def read_image(path: str) -> np.ndarray:
    """Load a binary PPM/PGM written by write_image; returns float32 in [0,1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated header at byte {start}")
        return data[start:pos], start

    magic, off = token()
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"{path}: unsupported magic {magic!r} at byte {off}")
    dims = []
    for _ in range(3):
        tok, off = token()
        if not tok.isdigit():
            raise ParseError(f"{path}: expected integer at byte {off}, got {tok!r}")
        dims.append(int(tok))
    w, h, maxval = dims
    if maxval != 255:
        raise ParseError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    expected = w * h * channels
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise ParseError(
            f"{path}: payload truncated at byte {pos + len(payload)} "
            f"(expected {expected} bytes, got {len(payload)})")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
    if channels == 3:
        return arr.reshape(h, w, 3)
    return arr.reshape(h, w)


# ---------------------------------------------------------------------------
# Middlebury .flo flow fields
# ---------------------------------------------------------------------------


def write_flo(path: str, flow: FlowField):
    """Serialize a FlowField; invalid pixels use the conventional sentinel."""
    uv = flow.uv.astype("<f4")
    if not np.isfinite(uv[flow.valid]).all():
        raise ValueError("flow contains non-finite values on valid pixels")
    uv = uv.copy()
    uv[~flow.valid] = FLO_UNKNOWN
    header = struct.pack("<fii", FLO_MAGIC, flow.width, flow.height)
    atomic_write_bytes(path, header + uv.tobytes())


def read_flo(path: str) -> FlowField:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12:
        raise ParseError(f"{path}: file too short for a .flo header")
    magic, w, h = struct.unpack("<fii", data[:12])
    if magic != FLO_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r} (expected {FLO_MAGIC})")
    if w <= 0 or h <= 0:
        raise ParseError(f"{path}: bad dimensions {w}x{h}")
    expected = w * h * 2 * 4
    if len(data) - 12 != expected:
        raise ParseError(f"{path}: payload size {len(data) - 12} != expected {expected}")
    uv = np.frombuffer(data[12:], dtype="<f4").reshape(h, w, 2).copy()
    valid = (np.abs(uv[..., 0]) < 1e9) & (np.abs(uv[..., 1]) < 1e9)
    uv[~valid] = 0.0
    return FlowField(uv, valid)


# ---------------------------------------------------------------------------
# Dataset manifests (JSON lines)
# ---------------------------------------------------------------------------


@dataclass
class SampleRecord:
    """One directed training sample; paths are relative to the dataset root."""

    sample_id: str
    rgb_a: str          # current frame (network input)
    rgb_b: str          # other frame of the pair
    mask: str           # ground-truth mask of the current frame
    flow: str           # estimated flow .flo (current -> other)
    flow_color: str     # colorized estimated flow
    flow_gt: str        # exact flow .flo from the renderer
    flow_color_gt: str  # colorized exact flow
    seed: int = 0
    digest: str = ""


def write_manifest(path: str, records):
    records = list(records)
    seen = set()
    for r in records:
        if r.sample_id in seen:
            raise ValueError(f"duplicate sample id {r.sample_id!r}")
        seen.add(r.sample_id)
    lines = [json.dumps(asdict(r), sort_keys=True) for r in records]
    payload = ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")
    atomic_write_bytes(path, payload)


def read_manifest(path: str):
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = SampleRecord(**obj)
            except (json.JSONDecodeError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            if rec.sample_id in seen:
                raise ParseError(f"{path}:{lineno}: duplicate sample id {rec.sample_id!r}")
            seen.add(rec.sample_id)
            records.append(rec)
    return records


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Network snapshot: specs as plain dicts plus named float32 blobs."""

    gen_spec: dict
    disc_spec: dict
    params: dict                 # name -> np.ndarray (float32)
    images_seen: int = 0
    best_val_loss: float = float("inf")
    version: int = CHECKPOINT_VERSION


def write_checkpoint(path: str, ckpt: Checkpoint):
    names = list(ckpt.params.keys())
    header = {
        "gen_spec": ckpt.gen_spec,
        "disc_spec": ckpt.disc_spec,
        "images_seen": int(ckpt.images_seen),
        "best_val_loss": float(ckpt.best_val_loss),
        "tensors": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blobs = b"".join(np.ascontiguousarray(ckpt.params[n], dtype="<f4").tobytes()
                     for n in names)
    payload = (CHECKPOINT_MAGIC
               + struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes))
               + header_bytes + blobs)
    atomic_write_bytes(path, payload)


def read_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 8:
        raise ParseError(f"{path}: truncated checkpoint header")
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: bad checkpoint magic")
    off = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version} "
                         f"(this build reads version {CHECKPOINT_VERSION})")
    off += 8
    try:
        header = json.loads(data[off:off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad checkpoint header: {exc}") from exc
    off += header_len
    params = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        blob = data[off:off + nbytes]
        if len(blob) != nbytes:
            raise ParseError(f"{path}: blob for {entry['name']!r} truncated at byte {off}")
        params[entry["name"]] = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
        off += nbytes
    if off != len(data):
        raise ParseError(f"{path}: {len(data) - off} trailing bytes after blobs")
    return Checkpoint(header["gen_spec"], header["disc_spec"], params,
                      header["images_seen"], header["best_val_loss"], version)
