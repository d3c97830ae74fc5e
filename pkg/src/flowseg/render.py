"""Primary-ray caster: RGB renders, foreground masks, depth, exact flow.

One ray per pixel, Lambertian + ambient shading with the scene's
procedural textures, no shadows or bounces.  Depth maps enable
analytically exact optical flow between the two poses of a camera pair,
which is the supervision signal the rest of the pipeline consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flowfield import FlowField
from .scene import (CameraFramePair, CapsuleGeom, Intrinsics, Pose, QuadGeom,
                    Scene, eval_texture)

_EPS = 1e-9

# hit categories, used by tests and diagnostics
CAT_FRONT_TREE = "front_tree"
CAT_BACK_TREE = "back_tree"
CAT_WIRE = "wire"
CAT_SOIL = "soil"
CAT_GROUND = "ground"
CAT_WALL = "wall"


class _Capsule:
    def __init__(self, geom: CapsuleGeom, texture, category):
        self.texture = texture
        self.category = category
        self.p0 = np.asarray(geom.p0, dtype=np.float64)
        self.p1 = np.asarray(geom.p1, dtype=np.float64)
        self.r = float(geom.radius)
        self.ba = self.p1 - self.p0
        self.baba = float(self.ba @ self.ba)
        axis = self.ba / math.sqrt(self.baba)
        ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        self.e1 = np.cross(axis, ref)
        self.e1 /= np.linalg.norm(self.e1)
        self.e2 = np.cross(axis, self.e1)
        self.axis_len = math.sqrt(self.baba)

    def hit_distances(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Nearest entry distance per ray (inf on miss); origins assumed outside."""
        oa = origin - self.p0
        bard = dirs @ self.ba
        baoa = float(oa @ self.ba)
        rdoa = dirs @ oa
        oaoa = float(oa @ oa)
        a = self.baba - bard * bard
        b = self.baba * rdoa - baoa * bard
        c = self.baba * oaoa - baoa * baoa - self.r * self.r * self.baba

        t = np.full(dirs.shape[0], np.inf)
        disc = b * b - a * c
        body = (disc >= 0.0) & (a > 1e-12)
        if body.any():
            tb = (-b[body] - np.sqrt(disc[body])) / a[body]
            y = baoa + tb * bard[body]
            ok = (tb > _EPS) & (y >= 0.0) & (y <= self.baba)
            tt = np.where(ok, tb, np.inf)
            t[body] = tt
        # spherical caps
        for center in (self.p0, self.p1):
            oc = origin - center
            b2 = dirs @ oc
            c2 = float(oc @ oc) - self.r * self.r
            h2 = b2 * b2 - c2
            cap = h2 >= 0.0
            if cap.any():
                tc = -b2[cap] - np.sqrt(h2[cap])
                tc = np.where(tc > _EPS, tc, np.inf)
                t[cap] = np.minimum(t[cap], tc)
        return t

    def surface(self, points: np.ndarray):
        """(normal, uv) at capsule surface points; uv in meters (axial, arc)."""
        rel = points - self.p0
        tproj = np.clip((rel @ self.ba) / self.baba, 0.0, 1.0)
        closest = self.p0 + tproj[:, None] * self.ba
        n = points - closest
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
        phi = np.arctan2(n @ self.e2, n @ self.e1) / (2.0 * math.pi) + 0.5
        uv = np.stack([tproj * self.axis_len, phi * 2.0 * math.pi * self.r], axis=-1)
        return n, uv


class _Quad:
    def __init__(self, geom: QuadGeom, texture, category):
        self.texture = texture
        self.category = category
        self.origin = np.asarray(geom.origin, dtype=np.float64)
        self.eu = np.asarray(geom.edge_u, dtype=np.float64)
        self.ev = np.asarray(geom.edge_v, dtype=np.float64)
        n = np.cross(self.eu, self.ev)
        self.n = n / np.linalg.norm(n)
        self.d11 = float(self.eu @ self.eu)
        self.d22 = float(self.ev @ self.ev)
        self.d12 = float(self.eu @ self.ev)
        self.det = self.d11 * self.d22 - self.d12 * self.d12
        self.len_u = math.sqrt(self.d11)
        self.len_v = math.sqrt(self.d22)

    def hit_distances(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        denom = dirs @ self.n
        t = np.full(dirs.shape[0], np.inf)
        live = np.abs(denom) > 1e-12
        if not live.any():
            return t
        tt = ((self.origin - origin) @ self.n) / denom[live]
        pts = origin + tt[:, None] * dirs[live]
        rel = pts - self.origin
        pu = rel @ self.eu
        pv = rel @ self.ev
        a = (self.d22 * pu - self.d12 * pv) / self.det
        b = (self.d11 * pv - self.d12 * pu) / self.det
        ok = (tt > _EPS) & (a >= 0.0) & (a <= 1.0) & (b >= 0.0) & (b <= 1.0)
        t[live] = np.where(ok, tt, np.inf)
        return t

    def surface(self, points: np.ndarray):
        rel = points - self.origin
        pu = rel @ self.eu
        pv = rel @ self.ev
        a = (self.d22 * pu - self.d12 * pv) / self.det
        b = (self.d11 * pv - self.d12 * pu) / self.det
        n = np.broadcast_to(self.n, points.shape).copy()
        uv = np.stack([a * self.len_u, b * self.len_v], axis=-1)
        return n, uv


def build_primitives(scene: Scene, mask_only: bool = False) -> list:
    """Flatten a scene into primitives; mask_only keeps front-row trees only."""
    prims = []
    for i, row in enumerate(scene.rows):
        cat = CAT_FRONT_TREE if i == 0 else CAT_BACK_TREE
        for tree in row.trees:
            prims.append(_Capsule(tree.trunk, tree.texture, cat))
            for leader in tree.leaders:
                prims.append(_Capsule(leader, tree.texture, cat))
        if mask_only:
            continue
        for wire in row.wires:
            prims.append(_Capsule(wire, row.wire_texture, CAT_WIRE))
        prims.append(_Quad(row.soil, row.soil_texture, CAT_SOIL))
    if not mask_only:
        prims.append(_Quad(scene.ground, scene.ground_texture, CAT_GROUND))
        for wall in scene.walls:
            prims.append(_Quad(wall.quad, wall.texture, CAT_WALL))
    if mask_only:
        prims = [p for p in prims if p.category == CAT_FRONT_TREE]
    return prims


@dataclass
class CastResult:
    t: np.ndarray          # (N,) distance along ray, inf on miss
    prim_index: np.ndarray  # (N,) int, -1 on miss


def cast(origin: np.ndarray, dirs: np.ndarray, prims: list) -> CastResult:
    """Nearest-hit query of N rays against all primitives."""
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1, dtype=np.int64)
    for i, prim in enumerate(prims):
        t = prim.hit_distances(origin, dirs)
        closer = t < best_t
        if closer.any():
            best_t[closer] = t[closer]
            best_i[closer] = i
    return CastResult(best_t, best_i)


def intersect(ray_origin, ray_direction, primitive):
    """Nearest positive intersection of one ray with a capsule or quad.

    Returns None on miss, else (distance, point, unit normal, uv-in-meters).
    The ray direction must be normalized.
    """
    o = np.asarray(ray_origin, dtype=np.float64)
    d = np.asarray(ray_direction, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("ray direction must be normalized")
    if isinstance(primitive, CapsuleGeom):
        prim = _Capsule(primitive, None, None)
    elif isinstance(primitive, QuadGeom):
        prim = _Quad(primitive, None, None)
    else:
        raise TypeError(f"unsupported primitive {type(primitive).__name__}")
    t = prim.hit_distances(o, d[None, :])[0]
    if not np.isfinite(t):
        return None
    point = o + t * d
    normal, uv = prim.surface(point[None, :])
    return float(t), point, normal[0], uv[0]


def _camera_rays(pose: Pose, intr: Intrinsics):
    dirs_cam = intr.pixel_directions().reshape(-1, 3)
    dirs_world = dirs_cam @ pose.matrix().T
    return dirs_cam, dirs_world


def _shade(prims, hit, dirs_world, points, light):
    """Textured Lambertian + ambient color for every hit ray."""
    n_rays = dirs_world.shape[0]
    colors = np.zeros((n_rays, 3))
    ldir = np.asarray(light.direction)
    for i in np.unique(hit.prim_index):
        if i < 0:
            continue
        prim = prims[i]
        sel = hit.prim_index == i
        normals, uv = prim.surface(points[sel])
        # flip normals toward the viewer for two-sided surfaces
        facing = np.sum(normals * dirs_world[sel], axis=1)
        normals = np.where(facing[:, None] > 0, -normals, normals)
        albedo = eval_texture(prim.texture, uv[:, 0], uv[:, 1])
        lam = np.maximum(0.0, -(normals @ ldir))
        colors[sel] = albedo * (light.ambient + light.intensity * lam)[:, None]
    return np.clip(colors, 0.0, 1.0)


def render_rgb(scene: Scene, pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Render a (H, W, 3) float32 image in [0, 1]; sky from the light spec."""
    if intr.focal_px <= 0:
        raise ValueError("focal_px must be > 0")
    rgb, _ = render_frame(scene, pose, intr)
    return rgb


def render_depth(scene: Scene, pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Per-pixel depth along the camera z axis in meters; +inf for sky."""
    _, depth = render_frame(scene, pose, intr)
    return depth


def render_frame(scene: Scene, pose: Pose, intr: Intrinsics):
    """One cast shared by RGB and depth output: returns (rgb, depth)."""
    if intr.focal_px <= 0:
        raise ValueError("focal_px must be > 0")
    prims = build_primitives(scene)
    dirs_cam, dirs_world = _camera_rays(pose, intr)
    origin = pose.position_vec()
    hit = cast(origin, dirs_world, prims)

    colors = np.empty((dirs_world.shape[0], 3))
    colors[:] = scene.light.sky_color()
    hit_sel = hit.prim_index >= 0
    if hit_sel.any():
        points = origin + hit.t[:, None] * dirs_world
        shaded = _shade(prims, hit, dirs_world, points, scene.light)
        colors[hit_sel] = shaded[hit_sel]

    depth = hit.t * dirs_cam[:, 2]
    depth[~hit_sel] = np.inf
    h, w = intr.height, intr.width
    return (colors.reshape(h, w, 3).astype(np.float32),
            depth.reshape(h, w))


def render_mask(scene: Scene, pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Binary (H, W) float32 mask of front-row trees with all else hidden."""
    if not scene.rows:
        raise ValueError("scene has no rows")
    prims = build_primitives(scene, mask_only=True)
    _, dirs_world = _camera_rays(pose, intr)
    hit = cast(pose.position_vec(), dirs_world, prims)
    mask = (hit.prim_index >= 0).astype(np.float32)
    return mask.reshape(intr.height, intr.width)


def hit_categories(scene: Scene, pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Per-pixel category string of the full-scene first hit ('' for sky)."""
    prims = build_primitives(scene)
    _, dirs_world = _camera_rays(pose, intr)
    hit = cast(pose.position_vec(), dirs_world, prims)
    cats = np.array([p.category for p in prims] + [""], dtype=object)
    return cats[hit.prim_index].reshape(intr.height, intr.width)


def ground_truth_flow(depth_a: np.ndarray, pair: CameraFramePair) -> FlowField:
    """Exact flow A->B from frame A's depth map and the pair's rigid motion.

    Each valid pixel is back-projected with its depth, moved into frame B
    and re-projected; sky pixels (infinite depth) are flagged invalid.
    """
    intr = pair.intrinsics
    h, w = depth_a.shape
    if (h, w) != (intr.height, intr.width):
        raise ValueError("depth map dimensions do not match intrinsics")
    dirs_cam = intr.pixel_directions()
    valid = np.isfinite(depth_a)

    scale = np.where(valid, depth_a, 1.0) / dirs_cam[..., 2]
    pts_cam_a = dirs_cam * scale[..., None]

    ra, ta = pair.pose_a.matrix(), pair.pose_a.position_vec()
    rb, tb = pair.pose_b.matrix(), pair.pose_b.position_vec()
    pts_world = pts_cam_a @ ra.T + ta
    pts_cam_b = (pts_world - tb) @ rb

    behind = pts_cam_b[..., 2] <= 1e-9
    valid = valid & ~behind
    pts_cam_b[..., 2] = np.where(valid, pts_cam_b[..., 2], 1.0)

    uv_b = intr.project(pts_cam_b)
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    flow = uv_b - np.stack([uu, vv], axis=-1)
    flow[~valid] = 0.0
    return FlowField(flow.astype(np.float32), valid)
