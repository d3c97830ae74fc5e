"""Seeded procedural generation of randomized planar-orchard scenes.

A scene is a planar trellis orchard: 1-5 rows of trees (near-horizontal
trunk capsules carrying near-vertical leader capsules), trellis wires,
a ground plane with per-row soil strips, optional clutter walls behind
the last row, and one directional light.  All surface appearance comes
from small procedural texture descriptors instead of image assets; hue,
saturation and value are randomly shifted per object.

Coordinates: world x runs along the rows, y is up, z is depth (rows sit
at increasing z, the camera in front of row 0 at negative z offsets).
Everything is generated from a numpy Generator seeded explicitly, so the
same (config, seed) always yields a field-for-field identical scene.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, SceneConfig

TEXTURE_KINDS = ("solid", "value-noise", "stripes", "checker")

_U64 = np.uint64
_MIX1 = _U64(0x9E3779B97F4A7C15)
_MIX2 = _U64(0xBF58476D1CE4E5B9)
_MIX3 = _U64(0x94D049BB133111EB)


def derive_seed(master_seed: int, *key: int) -> int:
    """Derive an independent 64-bit stream seed from a master seed and a key path.

    Uses numpy's SeedSequence spawn keys, so derivation is order-independent:
    worker i can compute its own seed without touching any other stream.
    """
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Geometry and appearance records (plain floats, so equality is exact)
# ---------------------------------------------------------------------------

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class CapsuleGeom:
    """Line segment p0-p1 swept by a sphere of the given radius (meters)."""

    p0: Vec3
    p1: Vec3
    radius: float


@dataclass(frozen=True)
class QuadGeom:
    """Parallelogram patch: origin plus two edge vectors (meters)."""

    origin: Vec3
    edge_u: Vec3
    edge_v: Vec3


@dataclass(frozen=True)
class ProceduralTexture:
    """Compact texture descriptor evaluated analytically at surface (u, v).

    kind: one of TEXTURE_KINDS; base_hsv plus hsv_jitter give the object
    color (clamped to [0,1] after the shift); scale is in cycles per meter.
    """

    kind: str
    base_hsv: Vec3
    hsv_jitter: Vec3 = (0.0, 0.0, 0.0)
    scale: float = 10.0
    noise_seed: int = 0

    def effective_hsv(self) -> Vec3:
        return tuple(min(1.0, max(0.0, b + j)) for b, j in zip(self.base_hsv, self.hsv_jitter))


@dataclass(frozen=True)
class LightSpec:
    """Directional light (direction of travel), plus ambient and sky tint."""

    direction: Vec3
    intensity: float
    ambient: float
    sky_tint_hsv: Vec3

    def sky_color(self) -> Vec3:
        h, s, v = self.sky_tint_hsv
        v = min(1.0, max(0.0, v * (0.35 + 0.65 * self.intensity)))
        rgb = hsv_to_rgb(np.array([h]), np.array([s]), np.array([v]))
        return tuple(float(c) for c in rgb[0])


@dataclass(frozen=True)
class Tree:
    trunk: CapsuleGeom
    leaders: tuple[CapsuleGeom, ...]
    texture: ProceduralTexture


@dataclass(frozen=True)
class TreeRow:
    depth_m: float
    trees: tuple[Tree, ...]
    wires: tuple[CapsuleGeom, ...]
    wire_texture: ProceduralTexture
    soil: QuadGeom
    soil_texture: ProceduralTexture


@dataclass(frozen=True)
class Wall:
    quad: QuadGeom
    texture: ProceduralTexture


@dataclass(frozen=True)
class Scene:
    rows: tuple[TreeRow, ...]
    ground: QuadGeom
    ground_texture: ProceduralTexture
    walls: tuple[Wall, ...]
    light: LightSpec


# ---------------------------------------------------------------------------
# Camera records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; pixel row v grows downward while world y is up."""

    width: int
    height: int
    focal_px: float
    cx: float
    cy: float

    @staticmethod
    def centered(width: int, height: int, focal_px: float) -> "Intrinsics":
        return Intrinsics(width, height, focal_px, (width - 1) / 2.0, (height - 1) / 2.0)

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """Camera-frame points (...,3) with z>0 to pixel (u, v)."""
        pts_cam = np.asarray(pts_cam, dtype=np.float64)
        z = pts_cam[..., 2]
        u = self.cx + self.focal_px * pts_cam[..., 0] / z
        v = self.cy - self.focal_px * pts_cam[..., 1] / z
        return np.stack([u, v], axis=-1)

    def pixel_directions(self) -> np.ndarray:
        """Unit ray directions in the camera frame, shape (H, W, 3)."""
        us = np.arange(self.width, dtype=np.float64)
        vs = np.arange(self.height, dtype=np.float64)
        uu, vv = np.meshgrid(us, vs)
        d = np.stack([(uu - self.cx) / self.focal_px,
                      -(vv - self.cy) / self.focal_px,
                      np.ones_like(uu)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform: x_world = R @ x_cam + position."""

    rotation: tuple[tuple[float, float, float], ...]
    position: Vec3

    def matrix(self) -> np.ndarray:
        return np.array(self.rotation, dtype=np.float64)

    def position_vec(self) -> np.ndarray:
        return np.array(self.position, dtype=np.float64)

    def forward(self) -> np.ndarray:
        return self.matrix()[:, 2]


@dataclass(frozen=True)
class CameraFramePair:
    """Two camera poses differing by a small pure translation."""

    intrinsics: Intrinsics
    pose_a: Pose
    pose_b: Pose

    def translation_world(self) -> np.ndarray:
        return self.pose_b.position_vec() - self.pose_a.position_vec()

    def relative_rotation(self) -> np.ndarray:
        return self.pose_a.matrix().T @ self.pose_b.matrix()


# ---------------------------------------------------------------------------
# Procedural texture evaluation
# ---------------------------------------------------------------------------


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z + _MIX1).astype(_U64)
    z = ((z ^ (z >> _U64(30))) * _MIX2).astype(_U64)
    z = ((z ^ (z >> _U64(27))) * _MIX3).astype(_U64)
    return z ^ (z >> _U64(31))


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    h = _mix64(ix.astype(np.int64).view(_U64) * _U64(0x632BE59BD9B4E019)
               ^ iy.astype(np.int64).view(_U64) * _U64(0x9E3779B97F4A7C15)
               ^ _U64(seed & 0xFFFFFFFFFFFFFFFF))
    return h.astype(np.float64) / float(2**64)


def value_noise(u: np.ndarray, v: np.ndarray, seed: int) -> np.ndarray:
    """Smooth (C1) lattice value noise in [0, 1], deterministic in (u, v, seed)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x0 = np.floor(u)
    y0 = np.floor(v)
    fx = u - x0
    fy = v - y0
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    n00 = _hash01(x0, y0, seed)
    n10 = _hash01(x0 + 1, y0, seed)
    n01 = _hash01(x0, y0 + 1, seed)
    n11 = _hash01(x0 + 1, y0 + 1, seed)
    nx0 = n00 + (n10 - n00) * sx
    nx1 = n01 + (n11 - n01) * sx
    return nx0 + (nx1 - nx0) * sy


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Vectorized HSV (all in [0,1]) to RGB, output shape (..., 3)."""
    h = np.asarray(h, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.select([i == 0, i == 1, i == 2, i == 3, i == 4, i == 5], [v, q, p, p, t, v])
    g = np.select([i == 0, i == 1, i == 2, i == 3, i == 4, i == 5], [t, v, v, q, p, p])
    b = np.select([i == 0, i == 1, i == 2, i == 3, i == 4, i == 5], [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def eval_texture(tex: ProceduralTexture, u, v) -> np.ndarray:
    """Evaluate a texture at surface coordinates (meters); returns RGB in [0,1].

    Accepts scalars or broadcastable arrays; output shape is (..., 3).
    The value-noise kind is continuous in (u, v); all kinds are pure
    functions of (descriptor, u, v).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    h0, s0, v0 = tex.effective_hsv()
    if tex.kind == "solid":
        rgb = hsv_to_rgb(np.asarray(h0), np.asarray(s0), np.asarray(v0))
        return np.broadcast_to(rgb, u.shape + (3,)).copy()
    if tex.kind == "value-noise":
        n = 0.65 * value_noise(u * tex.scale, v * tex.scale, tex.noise_seed)
        n = n + 0.35 * value_noise(u * tex.scale * 2.7 + 13.0,
                                   v * tex.scale * 2.7 + 71.0, tex.noise_seed + 1)
        val = np.clip(v0 * (0.45 + 0.9 * n), 0.0, 1.0)
        return hsv_to_rgb(np.full_like(val, h0), np.full_like(val, s0), val)
    if tex.kind == "stripes":
        t = 0.5 + 0.5 * np.sin(2.0 * math.pi * u * tex.scale)
        val = np.clip(v0 * (0.55 + 0.6 * t), 0.0, 1.0)
        return hsv_to_rgb(np.full_like(val, h0), np.full_like(val, s0), val)
    if tex.kind == "checker":
        parity = (np.floor(u * tex.scale) + np.floor(v * tex.scale)) % 2.0
        v_alt = v0 + 0.45 if v0 < 0.5 else v0 - 0.45
        val = np.where(parity < 0.5, v0, v_alt)
        return hsv_to_rgb(np.full_like(val, h0), np.full_like(val, s0), val)
    raise ValueError(f"unknown texture kind {tex.kind!r}")


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------


def _random_texture(rng: np.random.Generator, scale_range=(2.0, 40.0)) -> ProceduralTexture:
    kind = TEXTURE_KINDS[int(rng.integers(0, len(TEXTURE_KINDS)))]
    base = (float(rng.uniform(0, 1)), float(rng.uniform(0.05, 0.9)), float(rng.uniform(0.2, 0.95)))
    jitter = tuple(float(rng.uniform(-0.15, 0.15)) for _ in range(3))
    scale = float(rng.uniform(*scale_range))
    return ProceduralTexture(kind, base, jitter, scale, int(rng.integers(0, 2**62)))


def _jittered(tex: ProceduralTexture, rng: np.random.Generator) -> ProceduralTexture:
    """Per-object HSV shift of a shared base texture."""
    jitter = tuple(float(rng.uniform(-0.15, 0.15)) for _ in range(3))
    return ProceduralTexture(tex.kind, tex.base_hsv, jitter, tex.scale, tex.noise_seed)


def _make_tree(rng: np.random.Generator, cfg: SceneConfig, x_center: float, z: float,
               base_tex: ProceduralTexture) -> Tree:
    half = 0.45 * cfg.tree_spacing_m
    h0 = float(rng.uniform(*cfg.trunk_height_range_m))
    h1 = h0 + float(rng.uniform(-0.03, 0.03))
    trunk = CapsuleGeom((x_center - half, h0, z), (x_center + half, h1, z),
                        float(rng.uniform(*cfg.trunk_radius_range_m)))
    n_leaders = int(rng.integers(cfg.leaders_per_tree_range[0], cfg.leaders_per_tree_range[1] + 1))
    leaders = []
    for k in range(n_leaders):
        t = (k + 0.5) / n_leaders + float(rng.uniform(-0.3, 0.3)) / n_leaders
        t = min(1.0, max(0.0, t))
        base = tuple(a + t * (b - a) for a, b in zip(trunk.p0, trunk.p1))
        lean = math.radians(float(rng.uniform(0, cfg.leader_max_lean_deg)))
        phi = float(rng.uniform(0, 2 * math.pi))
        direction = (math.sin(lean) * math.cos(phi), math.cos(lean), math.sin(lean) * math.sin(phi))
        height = float(rng.uniform(*cfg.leader_height_range_m))
        top = tuple(b + height * d for b, d in zip(base, direction))
        leaders.append(CapsuleGeom(base, top, float(rng.uniform(*cfg.leader_radius_range_m))))
    return Tree(trunk, tuple(leaders), _jittered(base_tex, rng))


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """Generate one randomized orchard scene; pure function of (config, seed)."""
    config.validate()
    rng = np.random.default_rng(seed)

    n_rows = int(rng.integers(config.rows_range[0], config.rows_range[1] + 1))
    extent = config.trees_per_row * config.tree_spacing_m / 2.0 + 0.3
    tree_base_tex = _random_texture(rng, scale_range=(6.0, 50.0))

    rows = []
    for i in range(n_rows):
        z = i * config.row_spacing_m
        trees = []
        for j in range(config.trees_per_row):
            x = (j - (config.trees_per_row - 1) / 2.0) * config.tree_spacing_m
            trees.append(_make_tree(rng, config, x, z, tree_base_tex))
        wires = []
        for _ in range(config.wires_per_row):
            h = float(rng.uniform(*config.wire_height_range_m))
            wires.append(CapsuleGeom((-extent, h, z - 0.04), (extent, h, z - 0.04), 0.0025))
        wire_tex = _random_texture(rng)
        soil = QuadGeom((-extent, 0.004, z - 0.25), (2 * extent, 0.0, 0.0), (0.0, 0.0, 0.5))
        soil_tex = _random_texture(rng, scale_range=(1.0, 15.0))
        rows.append(TreeRow(z, tuple(trees), tuple(wires), wire_tex, soil, soil_tex))

    ground = QuadGeom((-14.0, 0.0, -4.0), (28.0, 0.0, 0.0), (0.0, 0.0, 14.0 + n_rows * config.row_spacing_m))
    ground_tex = _random_texture(rng, scale_range=(0.5, 10.0))

    n_walls = int(rng.integers(config.walls_range[0], config.walls_range[1] + 1))
    last_z = rows[-1].depth_m
    walls = []
    for _ in range(n_walls):
        sx = float(rng.uniform(*config.wall_size_range_m))
        sy = float(rng.uniform(*config.wall_size_range_m))
        cx = float(rng.uniform(-2.0, 2.0))
        zw = last_z + float(rng.uniform(*config.wall_distance_range_m))
        quad = QuadGeom((cx - sx / 2.0, 0.0, zw), (sx, 0.0, 0.0), (0.0, sy, 0.0))
        walls.append(Wall(quad, _random_texture(rng)))

    ldir = np.array([rng.uniform(-1, 1), -rng.uniform(0.4, 1.0), rng.uniform(-1, 1)])
    ldir = ldir / np.linalg.norm(ldir)
    light = LightSpec(tuple(float(c) for c in ldir),
                      float(rng.uniform(0.6, 1.1)),
                      float(rng.uniform(0.15, 0.35)),
                      (float(rng.uniform(0, 1)), float(rng.uniform(0.0, 0.5)),
                       float(rng.uniform(0.7, 1.0))))

    return Scene(tuple(rows), ground, ground_tex, tuple(walls), light)


# ---------------------------------------------------------------------------
# Camera sampling
# ---------------------------------------------------------------------------


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    ax, ay, az = axis
    k = np.array([[0.0, -az, ay], [az, 0.0, -ax], [-ay, ax, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def sample_camera_pair(scene: Scene, config: SceneConfig, seed: int,
                       lateral_only: bool = False) -> CameraFramePair:
    """Place a camera facing the front row and offset a second frame by a
    small translation (0.5-2 cm default range).

    The orientation is the row normal perturbed by a random rotation of at
    most camera_tilt_max_deg; both frames share it exactly (pure translation
    between frames).  With lateral_only=True the inter-frame translation is
    constrained to the camera's image plane, guaranteeing strong parallax.
    """
    if not scene.rows:
        raise ValueError("scene has no rows")
    rng = np.random.default_rng(seed)
    front = scene.rows[0]

    xs = [t.trunk.p0[0] for t in front.trees] + [t.trunk.p1[0] for t in front.trees]
    x_lo, x_hi = (min(xs), max(xs)) if xs else (-1.0, 1.0)
    span = max(0.1, 0.35 * (x_hi - x_lo))
    cam_x = float(rng.uniform(-span, span))
    cam_y = float(rng.uniform(*config.camera_height_range_m))
    cam_z = front.depth_m - float(rng.uniform(*config.camera_distance_range_m))

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(float(rng.uniform(0.0, config.camera_tilt_max_deg)))
    rot = _rodrigues(axis, angle)

    if lateral_only:
        phi = float(rng.uniform(0, 2 * math.pi))
        d_cam = np.array([math.cos(phi), math.sin(phi), 0.0])
    else:
        d_cam = rng.normal(size=3)
        d_cam /= np.linalg.norm(d_cam)
    d_world = rot @ d_cam
    norm = float(rng.uniform(*config.camera_translation_range_m))

    w, h = config.image_size
    intr = Intrinsics.centered(w, h, config.focal_px)
    rot_t = tuple(tuple(float(x) for x in r) for r in rot)
    pos_a = (cam_x, cam_y, cam_z)
    pos_b = tuple(float(p + norm * d) for p, d in zip(pos_a, d_world))
    return CameraFramePair(intr, Pose(rot_t, pos_a), Pose(rot_t, pos_b))


def front_row_in_view(scene: Scene, pose: Pose, intr: Intrinsics) -> bool:
    """True if some point of the front row's trellis plane projects into the image."""
    front = scene.rows[0]
    xs = np.linspace(-3.0, 3.0, 25)
    ys = np.linspace(0.0, 3.0, 25)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, front.depth_m)], axis=-1)
    cam = (pts - pose.position_vec()) @ pose.matrix()
    ok = cam[:, 2] > 1e-6
    if not ok.any():
        return False
    uv = intr.project(cam[ok])
    inside = ((uv[:, 0] >= 0) & (uv[:, 0] < intr.width)
              & (uv[:, 1] >= 0) & (uv[:, 1] < intr.height))
    return bool(inside.any())
