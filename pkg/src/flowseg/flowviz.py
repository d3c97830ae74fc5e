"""Flow-to-color conversion for the network's 3-channel flow input.

Direction maps to hue on the standard 55-entry optical-flow color wheel,
magnitude to colorfulness (white at zero motion).  The default uses a
fixed magnitude scale so input statistics stay stationary across a
dataset; per-image scaling is available for parity experiments.
"""

from __future__ import annotations

import numpy as np

from .flowfield import FlowField

WHEEL_SEGMENTS = (("RY", 15), ("YG", 6), ("GC", 4), ("CB", 11), ("BM", 13), ("MR", 6))
N_WHEEL = sum(n for _, n in WHEEL_SEGMENTS)  # 55


def make_colorwheel() -> np.ndarray:
    """(55, 3) RGB table, piecewise-linear between the six primary hues."""
    wheel = np.zeros((N_WHEEL, 3))
    col = 0
    for name, n in WHEEL_SEGMENTS:
        ramp = np.arange(n) / n
        if name == "RY":
            wheel[col:col + n, 0] = 1.0
            wheel[col:col + n, 1] = ramp
        elif name == "YG":
            wheel[col:col + n, 0] = 1.0 - ramp
            wheel[col:col + n, 1] = 1.0
        elif name == "GC":
            wheel[col:col + n, 1] = 1.0
            wheel[col:col + n, 2] = ramp
        elif name == "CB":
            wheel[col:col + n, 1] = 1.0 - ramp
            wheel[col:col + n, 2] = 1.0
        elif name == "BM":
            wheel[col:col + n, 2] = 1.0
            wheel[col:col + n, 0] = ramp
        elif name == "MR":
            wheel[col:col + n, 2] = 1.0 - ramp
            wheel[col:col + n, 0] = 1.0
        col += n
    return wheel


def colorize_flow(flow: FlowField, max_mag: float | None = 8.0) -> np.ndarray:
    """Render a FlowField as an (H, W, 3) float32 image in [0, 1].

    max_mag is the magnitude (px) mapped to full color saturation; pass
    None to normalize by the per-image maximum (an all-zero field then
    renders pure white rather than dividing by zero).  Invalid pixels
    come out black.
    """
    wheel = make_colorwheel()
    u = flow.uv[..., 0].astype(np.float64)
    v = flow.uv[..., 1].astype(np.float64)
    mag = np.sqrt(u * u + v * v)

    if max_mag is None:
        peak = float(mag[flow.valid].max()) if flow.valid.any() else 0.0
        scale = peak if peak > 0 else 1.0
    else:
        if max_mag <= 0:
            raise ValueError("max_mag must be > 0")
        scale = float(max_mag)
    rad = np.clip(mag / scale, 0.0, 1.0)

    angle = np.arctan2(v, u) / (2.0 * np.pi)  # turns in (-0.5, 0.5]
    fk = (angle % 1.0) * N_WHEEL
    k0 = np.floor(fk).astype(np.int64) % N_WHEEL
    k1 = (k0 + 1) % N_WHEEL
    f = (fk - np.floor(fk))[..., None]
    col = (1.0 - f) * wheel[k0] + f * wheel[k1]

    img = 1.0 - rad[..., None] * (1.0 - col)
    img[~flow.valid] = 0.0
    return img.astype(np.float32)
