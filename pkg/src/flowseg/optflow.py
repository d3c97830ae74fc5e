"""Coarse-to-fine variational dense optical flow.

Classical Horn-Schunck smoothness + brightness-constancy solver with a
Gaussian image pyramid and iterative warping.  It replaces a learned flow
network as the pipeline's flow provider: adequate for the small (<~6 px)
motions induced by centimeter camera translations, and deliberately
swappable (anything producing a FlowField, including precomputed .flo
files, can be slotted in instead).

Images come in as [0,1] float arrays; internally luminance is scaled to
0-255 so the default smoothness weight sits in the classical range.
All operations are pure and bit-deterministic.
"""

from __future__ import annotations

import numpy as np

from .config import FlowParams
from .flowfield import FlowField

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def luminance(img: np.ndarray) -> np.ndarray:
    """Reduce an image to one channel with fixed luminance weights."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        return img.copy()
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0].copy()
    if img.ndim == 3 and img.shape[2] == 3:
        w = np.asarray(LUMA_WEIGHTS, dtype=np.float32)
        return img @ w
    raise ValueError(f"expected (H,W), (H,W,1) or (H,W,3) image, got {img.shape}")


def _shift_clamped(f: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift with clamp-to-edge padding (2D arrays)."""
    h, w = f.shape[:2]
    ys = np.clip(np.arange(h) - dy, 0, h - 1)
    xs = np.clip(np.arange(w) - dx, 0, w - 1)
    return f[np.ix_(ys, xs)]


def _grad_x(f: np.ndarray) -> np.ndarray:
    return 0.5 * (_shift_clamped(f, 0, -1) - _shift_clamped(f, 0, 1))


def _grad_y(f: np.ndarray) -> np.ndarray:
    return 0.5 * (_shift_clamped(f, -1, 0) - _shift_clamped(f, 1, 0))


def _neighbor_mean(f: np.ndarray) -> np.ndarray:
    return 0.25 * (_shift_clamped(f, 1, 0) + _shift_clamped(f, -1, 0)
                   + _shift_clamped(f, 0, 1) + _shift_clamped(f, 0, -1))


def hs_update(u: np.ndarray, v: np.ndarray, ix: np.ndarray, iy: np.ndarray,
              it: np.ndarray, alpha: float):
    """One Jacobi-style Horn-Schunck update of the flow components.

    u' = ubar - Ix (Ix ubar + Iy vbar + It) / (alpha^2 + Ix^2 + Iy^2),
    symmetric for v, where ubar/vbar are clamped 4-neighbor means.
    """
    if not (u.shape == v.shape == ix.shape == iy.shape == it.shape):
        raise ValueError("all flow/gradient grids must share one shape")
    ubar = _neighbor_mean(u)
    vbar = _neighbor_mean(v)
    common = (ix * ubar + iy * vbar + it) / (alpha * alpha + ix * ix + iy * iy)
    return ubar - ix * common, vbar - iy * common


def _blur5(img: np.ndarray) -> np.ndarray:
    """Separable binomial [1,4,6,4,1]/16 low-pass with edge clamping."""
    k = np.array([1.0, 4.0, 6.0, 4.0, 1.0], dtype=np.float64) / 16.0
    pad_width = ((2, 2), (0, 0)) if img.ndim == 2 else ((2, 2), (0, 0), (0, 0))
    p = np.pad(img.astype(np.float64), pad_width, mode="edge")
    out = sum(k[i] * p[i:i + img.shape[0]] for i in range(5))
    pad_width = ((0, 0), (2, 2)) if img.ndim == 2 else ((0, 0), (2, 2), (0, 0))
    p = np.pad(out, pad_width, mode="edge")
    out = sum(k[i] * p[:, i:i + img.shape[1]] for i in range(5))
    return out.astype(img.dtype if img.dtype == np.float64 else np.float32)


def _sample_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear lookup at float coordinates, clamped to the image border."""
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0).astype(img.dtype)
    fy = (y - y0).astype(img.dtype)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp_bilinear(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Sample img at p + flow(p) for every pixel p (clamp at the border)."""
    flow = np.asarray(flow)
    if flow.shape[:2] != img.shape[:2] or flow.shape[-1] != 2:
        raise ValueError("flow shape must be (H, W, 2) matching the image")
    h, w = img.shape[:2]
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return _sample_bilinear(img, xx + flow[..., 0], yy + flow[..., 1])


def _resize_bilinear(img: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    xs = (np.arange(new_w, dtype=np.float64) + 0.5) * (w / new_w) - 0.5
    ys = (np.arange(new_h, dtype=np.float64) + 0.5) * (h / new_h) - 0.5
    xx, yy = np.meshgrid(xs, ys)
    return _sample_bilinear(img, xx, yy)


def pyramid_sizes(height: int, width: int, levels: int, scale_factor: float):
    sizes = [(height, width)]
    for _ in range(levels - 1):
        h, w = sizes[-1]
        sizes.append((int(round(h * scale_factor)), int(round(w * scale_factor))))
    return sizes


def build_pyramid(img: np.ndarray, levels: int, scale_factor: float = 0.5) -> list:
    """Low-pass + resample pyramid; level 0 is the untouched input."""
    if levels < 1:
        raise ValueError("levels must be >= 1")
    sizes = pyramid_sizes(img.shape[0], img.shape[1], levels, scale_factor)
    if min(sizes[-1]) < 8:
        raise ValueError(
            f"image {img.shape[1]}x{img.shape[0]} too small for {levels} pyramid levels")
    pyr = [np.asarray(img, dtype=np.float32)]
    for h, w in sizes[1:]:
        pyr.append(_resize_bilinear(_blur5(pyr[-1]), h, w).astype(np.float32))
    return pyr


def max_feasible_levels(height: int, width: int, scale_factor: float) -> int:
    levels = 1
    while True:
        sizes = pyramid_sizes(height, width, levels + 1, scale_factor)
        if min(sizes[-1]) < 8:
            return levels
        levels += 1


def estimate_flow(img_a: np.ndarray, img_b: np.ndarray,
                  params: FlowParams | None = None) -> FlowField:
    """Dense flow A->B via pyramidal Horn-Schunck with iterative warping.

    Requested pyramid levels are clamped so the coarsest level stays at
    least 8x8.  Output marks every pixel valid.
    """
    params = (params or FlowParams()).validate()
    img_a = np.asarray(img_a)
    img_b = np.asarray(img_b)
    if img_a.shape != img_b.shape:
        raise ValueError(f"image dimensions differ: {img_a.shape} vs {img_b.shape}")
    if img_a.shape[0] < 16 or img_a.shape[1] < 16:
        raise ValueError("images must be at least 16x16")

    a = luminance(img_a).astype(np.float32) * 255.0
    b = luminance(img_b).astype(np.float32) * 255.0
    levels = min(params.pyramid_levels,
                 max_feasible_levels(a.shape[0], a.shape[1], params.scale_factor))
    pyr_a = build_pyramid(a, levels, params.scale_factor)
    pyr_b = build_pyramid(b, levels, params.scale_factor)

    u = np.zeros(pyr_a[-1].shape, dtype=np.float32)
    v = np.zeros_like(u)
    for lvl in range(levels - 1, -1, -1):
        al, bl = pyr_a[lvl], pyr_b[lvl]
        if u.shape != al.shape:
            sy = al.shape[0] / u.shape[0]
            sx = al.shape[1] / u.shape[1]
            u = (_resize_bilinear(u, al.shape[0], al.shape[1]) * sx).astype(np.float32)
            v = (_resize_bilinear(v, al.shape[0], al.shape[1]) * sy).astype(np.float32)
        for _ in range(params.warp_passes_per_level):
            bw = warp_bilinear(bl, np.stack([u, v], axis=-1)).astype(np.float32)
            avg = 0.5 * (al + bw)
            ix = _grad_x(avg)
            iy = _grad_y(avg)
            # residual linearized at the warp-time flow, so the Jacobi update
            # below solves directly for the total displacement
            it = (bw - al) - ix * u - iy * v
            for _ in range(params.iterations_per_level):
                u, v = hs_update(u, v, ix, iy, it, params.alpha)
    return FlowField(np.stack([u, v], axis=-1).astype(np.float32))


def endpoint_error(flow: FlowField, gt: FlowField):
    """(mean, median) Euclidean error over pixels valid in both fields."""
    if flow.uv.shape != gt.uv.shape:
        raise ValueError("flow fields have different dimensions")
    both = flow.valid & gt.valid
    if not both.any():
        raise ValueError("no pixels valid in both flow fields")
    d = flow.uv.astype(np.float64) - gt.uv.astype(np.float64)
    err = np.sqrt(d[..., 0] ** 2 + d[..., 1] ** 2)[both]
    return float(err.mean()), float(np.median(err))


def textured_mask(img: np.ndarray, threshold: float = 0.02) -> np.ndarray:
    """Pixels whose local luminance gradient exceeds the threshold.

    Used to restrict flow-accuracy measurements to regions where the
    brightness-constancy term actually constrains the motion.
    """
    lum = luminance(img)
    mag = np.sqrt(_grad_x(lum) ** 2 + _grad_y(lum) ** 2)
    return mag > threshold
