"""Procedural low-resolution renderer and visual scene randomization.

Textures are pure functions of (u, v) and a texture id (hash-based value noise,
stripes, checkers, gradients), so every frame is a deterministic function of its
arguments. Scenes randomize background/floor/gate textures, gate shape, and
per-entity ambient/emissive lighting; shading is clamp(texture*ambient + emissive).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    CameraModel,
    CameraPose,
    Gate,
    HELD_OUT_GATE_SHAPE,
    RngStream,
    Track,
    Vec3,
    gate_opening_polygon,
)

TRAIN_BACKGROUND_POOL = range(0, 30)
TEST_BACKGROUND_POOL = range(100, 110)
TRAIN_GATE_TEXTURE_POOL = range(0, 10)
TEST_GATE_TEXTURE_ID = 10
TRAIN_GATE_SHAPES = range(0, 5)

AMBIENT_SUPPORT = (0.0, 1.0)
EMISSIVE_SUPPORT = (0.0, 0.3)


@dataclass(frozen=True)
class SceneConfig:
    background_texture_id: int
    floor_texture_id: int
    gate_texture_id: int
    gate_shape_id: int
    ambient: tuple[float, float, float]  # background, floor, gates
    emissive: tuple[float, float, float]

    def __post_init__(self):
        for a in self.ambient:
            if not AMBIENT_SUPPORT[0] <= a <= AMBIENT_SUPPORT[1]:
                raise ValueError(f"ambient {a} outside {AMBIENT_SUPPORT}")
        for e in self.emissive:
            if not EMISSIVE_SUPPORT[0] <= e <= EMISSIVE_SUPPORT[1]:
                raise ValueError(f"emissive {e} outside {EMISSIVE_SUPPORT}")


@dataclass(frozen=True)
class Raster:
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8
    channels: int = 3

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width, self.channels):
            raise ValueError("pixel buffer shape mismatch")
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8")

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


def sample_scene(stream: RngStream, mode: str) -> SceneConfig:
    """Draw one randomized scene; 'train' uses the training pools, 'test' the held-out ones."""
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    g = stream.generator()
    if mode == "train":
        background = int(g.integers(0, 30))
        floor = background
        while floor == background:
            floor = int(g.integers(0, 30))
        gate_tex = int(g.integers(0, 10))
        shape = int(g.integers(0, 5))
    else:
        background = 100 + int(g.integers(0, 10))
        floor = background
        while floor == background:
            floor = 100 + int(g.integers(0, 10))
        gate_tex = TEST_GATE_TEXTURE_ID
        shape = HELD_OUT_GATE_SHAPE
    ambient = tuple(float(a) for a in g.uniform(*AMBIENT_SUPPORT, size=3))
    emissive = tuple(float(e) for e in g.uniform(*EMISSIVE_SUPPORT, size=3))
    return SceneConfig(
        background_texture_id=background,
        floor_texture_id=floor,
        gate_texture_id=gate_tex,
        gate_shape_id=shape,
        ambient=ambient,
        emissive=emissive,
    )


# --------------------------------------------------------------------------
# procedural textures


def _hash01(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    """Deterministic lattice hash to [0, 1); wrapping uint64 mix."""
    h = ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    h ^= iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
    h ^= np.uint64((salt * 0x165667B19E3779F9) % (1 << 64))
    h ^= h >> np.uint64(29)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(32)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(u: np.ndarray, v: np.ndarray, salt: int, scale: float) -> np.ndarray:
    x = u * scale
    y = v * scale
    ix = np.floor(x).astype(np.int64)
    iy = np.floor(y).astype(np.int64)
    fx = x - ix
    fy = y - iy
    sx = fx * fx * (3 - 2 * fx)
    sy = fy * fy * (3 - 2 * fy)
    n00 = _hash01(ix, iy, salt)
    n10 = _hash01(ix + 1, iy, salt)
    n01 = _hash01(ix, iy + 1, salt)
    n11 = _hash01(ix + 1, iy + 1, salt)
    return (n00 * (1 - sx) + n10 * sx) * (1 - sy) + (n01 * (1 - sx) + n11 * sx) * sy


def _texture_params(texture_id: int):
    g = RngStream(seed=9173, stream_id=texture_id).generator()
    base = g.uniform(0.15, 0.9, size=3)
    accent = g.uniform(0.1, 0.95, size=3)
    scale = float(g.uniform(1.5, 7.0))
    angle = float(g.uniform(0.0, math.pi))
    return base, accent, scale, angle


def texture_color(texture_id: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Texture RGB in [0, 1] for (u, v) arrays; family chosen by id modulo 4."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    base, accent, scale, angle = _texture_params(texture_id)
    family = texture_id % 4
    if family == 0:
        w = _value_noise(u, v, texture_id, scale)
    elif family == 1:
        w = 0.5 + 0.5 * np.sin(
            2 * math.pi * scale * (u * math.cos(angle) + v * math.sin(angle))
        )
    elif family == 2:
        w = (
            (np.floor(u * scale) + np.floor(v * scale)) % 2.0
        )
    else:
        w = np.clip(0.5 * (u * math.cos(angle) + v * math.sin(angle)) * 0.5 + 0.5, 0, 1)
        w = w + 0.25 * _value_noise(u, v, texture_id, 2 * scale)
        w = np.clip(w, 0.0, 1.0)
    return base * (1 - w[..., None]) + accent * w[..., None]


def gate_texture_color(texture_id: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Gate frame texture: red/orange dominant with an id-specific pattern."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    g = RngStream(seed=5521, stream_id=texture_id).generator()
    red = float(g.uniform(0.75, 1.0))
    green = float(g.uniform(0.15, 0.55))
    blue = float(g.uniform(0.0, 0.2))
    scale = float(g.uniform(2.0, 6.0))
    w = _value_noise(u, v, 1000 + texture_id, scale)
    color = np.empty(w.shape + (3,))
    color[..., 0] = red * (0.8 + 0.2 * w)
    color[..., 1] = green * (0.6 + 0.4 * w)
    color[..., 2] = blue * w
    return color


def _shade(tex_rgb: np.ndarray, ambient: float, emissive: float) -> np.ndarray:
    return np.clip(tex_rgb * ambient + emissive, 0.0, 1.0)


# --------------------------------------------------------------------------
# rasterization


def _pixel_rays(cam_pose: CameraPose, cam: CameraModel) -> np.ndarray:
    w, h = cam.image_width, cam.image_height
    xs = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * cam.tan_half_h
    ys = (2.0 * (np.arange(h) + 0.5) / h - 1.0) * cam.tan_half_v
    dirs = np.empty((h, w, 3))
    dirs[..., 0] = xs[None, :]
    dirs[..., 1] = ys[:, None]
    dirs[..., 2] = 1.0
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    return dirs @ cam_pose.r_wc.T


def _gate_quads(gate: Gate, offset: Vec3, shape_id: int):
    """Frame bars as parallelograms (origin, edge_along, edge_out) in world space."""
    poly = gate_opening_polygon(gate, shape_id=shape_id)
    lateral = gate.lateral()
    up = np.array([0.0, 0.0, 1.0])
    center = gate.center + offset
    quads = []
    n = len(poly)
    for i in range(n):
        a2, b2 = poly[i], poly[(i + 1) % n]
        edge = b2 - a2
        length = math.hypot(edge[0], edge[1])
        out2 = np.array([edge[1], -edge[0]]) / length  # outward normal (CCW polygon)
        a3 = center + a2[0] * lateral + a2[1] * up
        along = (b2[0] - a2[0]) * lateral + (b2[1] - a2[1]) * up
        outward = gate.frame_thickness * (out2[0] * lateral + out2[1] * up)
        quads.append((a3, along, outward, length))
    return quads


def render(
    track: Track,
    gate_offsets: np.ndarray | None,
    cam_pose: CameraPose,
    cam: CameraModel,
    scene: SceneConfig,
) -> Raster:
    """Rasterize the scene: background, floor plane, gates far-to-near."""
    h, w = cam.image_height, cam.image_width
    dirs = _pixel_rays(cam_pose, cam)
    origin = cam_pose.position

    # background indexed by ray direction (azimuth / elevation)
    az = np.arctan2(dirs[..., 1], dirs[..., 0]) / (2 * math.pi) + 0.5
    el = np.arcsin(np.clip(dirs[..., 2], -1.0, 1.0)) / math.pi + 0.5
    img = _shade(
        texture_color(scene.background_texture_id, az * 8.0, el * 8.0),
        scene.ambient[0],
        scene.emissive[0],
    )

    # floor plane z = 0
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(dz < -1e-9, -origin[2] / dz, np.inf)
    floor_mask = np.isfinite(t_floor) & (t_floor > 1e-6)
    if np.any(floor_mask):
        hit_x = origin[0] + t_floor[floor_mask] * dirs[..., 0][floor_mask]
        hit_y = origin[1] + t_floor[floor_mask] * dirs[..., 1][floor_mask]
        floor_rgb = _shade(
            texture_color(scene.floor_texture_id, hit_x / 6.0, hit_y / 6.0),
            scene.ambient[1],
            scene.emissive[1],
        )
        img[floor_mask] = floor_rgb

    # gates, painter's order far to near
    offsets = (
        gate_offsets if gate_offsets is not None else np.zeros((len(track.gates), 3))
    )
    order = sorted(
        range(len(track.gates)),
        key=lambda i: -float(
            np.linalg.norm(track.gates[i].center + offsets[i] - origin)
        ),
    )
    for gi in order:
        gate = track.gates[gi]
        for a3, along, outward, length in _gate_quads(gate, offsets[gi], scene.gate_shape_id):
            normal = np.cross(along, outward)
            nn = np.linalg.norm(normal)
            if nn < 1e-12:
                continue
            normal /= nn
            denom = dirs @ normal
            rel = a3 - origin
            with np.errstate(divide="ignore", invalid="ignore"):
                t_hit = (rel @ normal) / denom
            mask = np.isfinite(t_hit) & (t_hit > 1e-6) & (np.abs(denom) > 1e-9)
            if not np.any(mask):
                continue
            pts = origin + t_hit[mask, None] * dirs[mask]
            local = pts - a3
            # 2x2 solve for parallelogram coordinates
            g11 = along @ along
            g12 = along @ outward
            g22 = outward @ outward
            det = g11 * g22 - g12 * g12
            if abs(det) < 1e-12:
                continue
            r1 = local @ along
            r2 = local @ outward
            alpha = (g22 * r1 - g12 * r2) / det
            beta = (g11 * r2 - g12 * r1) / det
            inside = (alpha >= 0) & (alpha <= 1) & (beta >= 0) & (beta <= 1)
            if not np.any(inside):
                continue
            sel = np.zeros_like(mask)
            sel[mask] = inside
            uu = alpha[inside] * length
            vv = beta[inside] * gate.frame_thickness
            rgb = _shade(
                gate_texture_color(scene.gate_texture_id, uu, vv),
                scene.ambient[2],
                scene.emissive[2],
            )
            img[sel] = rgb

    pixels = np.rint(img * 255.0).astype(np.uint8)
    return Raster(width=w, height=h, pixels=pixels)


def raster_to_ppm(raster: Raster) -> bytes:
    header = f"P6\n{raster.width} {raster.height}\n255\n".encode("ascii")
    return header + raster.tobytes()
