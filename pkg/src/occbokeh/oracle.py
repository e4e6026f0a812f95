"""Ray-traced ground truth through a biconvex spherical lens.

Geometry: the optical axis is ``z`` and object space is ``z > 0``.  The lens is
the intersection of two spheres of radius ``R_c`` whose centres sit at
``z = -h`` and ``z = +h`` with ``h = sqrt(R_c^2 - R_a^2)``.  The rim lies in the
plane ``z = 0`` and the sensor is the plane ``z = -D_I``.

Billboards are planes ``z = D_i`` whose textures are stretched to cover the
field of view seen from the front principal point.  Output pixel ``(i, j)`` is
arranged so that in-focus content lands on texel ``(i, j)``.  The traced image
is therefore already upright.

Two families of focal-length functions live here.  ``lens_thickness`` and
``focal_length`` evaluate the closed forms the benchmark recipe is usually
quoted with.  ``cap_thickness``, ``effective_focal_length`` and
``principal_offset`` describe the lens the tracer actually refracts through,
using the paraxial thick-lens relations.  Everything that has to agree with the
tracer (focus distance, physical CoC, engine parameters) uses the second family.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Tuple

import numba
import numpy as np
from numba import prange
from scipy import ndimage

from . import io as bio
from .metrics import MetricReport
from .render import render
from .scene import BokehError, LayeredScene, LensConfig, Mode, make_layer

_MAX_RESAMPLE = 16


@dataclass(frozen=True)
class OracleLensConfig:
    sphere_radius: float = 400.0
    aperture_radius: float = 30.0
    refractive_index: float = 1.5
    image_plane_distance: float = 500.0
    fov: float = 20.0
    sensor_resolution: Tuple[int, int] = (128, 128)
    samples_per_pixel: int = 512
    rng_seed: int = 0

    def __post_init__(self):
        res = self.sensor_resolution
        if isinstance(res, (int, np.integer)):
            res = (int(res), int(res))
        object.__setattr__(self, "sensor_resolution", (int(res[0]), int(res[1])))
        if not self.aperture_radius < self.sphere_radius:
            raise BokehError("GEOMETRY_INVALID", "aperture radius must be below the sphere radius")
        if self.aperture_radius < 0:
            raise BokehError("GEOMETRY_INVALID", "aperture radius must be >= 0")
        if not self.refractive_index > 1.0:
            raise BokehError("GEOMETRY_INVALID", "refractive index must exceed 1")
        if not 0.0 < self.fov < 180.0:
            raise BokehError("GEOMETRY_INVALID", "fov must lie in (0, 180) degrees")
        if min(self.sensor_resolution) < 1:
            raise BokehError("GEOMETRY_INVALID", "sensor resolution must be positive")
        if self.samples_per_pixel < 1:
            raise BokehError("GEOMETRY_INVALID", "samples_per_pixel must be >= 1")

    @property
    def height(self) -> int:
        return self.sensor_resolution[0]

    @property
    def width(self) -> int:
        return self.sensor_resolution[1]

    def with_(self, **changes) -> "OracleLensConfig":
        return replace(self, **changes)


@dataclass
class Billboard:
    color: np.ndarray
    alpha: np.ndarray
    distance: float


@dataclass
class BillboardScene:
    """Textured planes ordered front to back; the last one must be opaque."""

    billboards: List[Billboard] = field(default_factory=list)

    def validate(self, cfg: Optional[OracleLensConfig] = None) -> None:
        if not self.billboards:
            raise BokehError("SCENE_INVALID", "no billboards")
        shape = self.billboards[0].alpha.shape
        prev = -math.inf
        for i, b in enumerate(self.billboards):
            if b.alpha.shape != shape or b.color.shape != shape + (3,):
                raise BokehError("DIMENSION_MISMATCH", f"billboard {i} texture size differs")
            if not b.distance > prev:
                raise BokehError("SCENE_INVALID", "billboard distances must increase strictly")
            prev = b.distance
        if not np.all(self.billboards[-1].alpha == 1.0):
            raise BokehError("BACK_LAYER_NOT_OPAQUE", "background billboard must be opaque")
        if cfg is not None:
            if self.billboards[0].distance <= lens_thickness(cfg) / 2.0:
                raise BokehError("SCENE_INVALID", "billboard inside the lens")
            if shape != cfg.sensor_resolution:
                raise BokehError("DIMENSION_MISMATCH", "textures must match the sensor resolution")

    def stacked(self):
        color = np.stack([np.asarray(b.color, dtype=np.float64) for b in self.billboards])
        alpha = np.stack([np.asarray(b.alpha, dtype=np.float64) for b in self.billboards])
        dist = np.array([b.distance for b in self.billboards], dtype=np.float64)
        return color, alpha, dist


# -- closed forms --------------------------------------------------------------

def _geometry(cfg: OracleLensConfig):
    rc, ra = float(cfg.sphere_radius), float(cfg.aperture_radius)
    if not ra < rc:
        raise BokehError("GEOMETRY_INVALID", "aperture radius must be below the sphere radius")
    return rc, ra, float(cfg.refractive_index)


def lens_thickness(cfg: OracleLensConfig) -> float:
    rc, ra, _ = _geometry(cfg)
    return 2.0 * math.sqrt(rc * rc - ra * ra)


def focal_length(cfg: OracleLensConfig) -> float:
    """Closed-form focal length driven by :func:`lens_thickness`."""
    rc, _, n = _geometry(cfg)
    d = lens_thickness(cfg)
    inv = (n - 1.0) * (2.0 / rc + (n - 1.0) * d / (n * rc * rc))
    return math.inf if inv == 0.0 else 1.0 / inv


def cap_thickness(cfg: OracleLensConfig) -> float:
    """Axial glass thickness of the traced lens, vertex to vertex."""
    rc, ra, _ = _geometry(cfg)
    return 2.0 * (rc - math.sqrt(rc * rc - ra * ra))


def effective_focal_length(cfg: OracleLensConfig) -> float:
    """Paraxial focal length of the traced symmetric biconvex lens."""
    rc, _, n = _geometry(cfg)
    t = cap_thickness(cfg)
    inv = (n - 1.0) * (2.0 / rc - (n - 1.0) * t / (n * rc * rc))
    if inv <= 0.0:
        raise BokehError("GEOMETRY_INVALID", "lens has no positive focal length")
    return 1.0 / inv


def principal_offset(cfg: OracleLensConfig) -> float:
    """Distance of each principal plane from the rim plane (object side ``+``, image side ``-``)."""
    rc, _, n = _geometry(cfg)
    t = cap_thickness(cfg)
    f = effective_focal_length(cfg)
    return 0.5 * t - f * (n - 1.0) * t / (n * rc)


def conjugate(f: float, d: float) -> float:
    """Thin-lens conjugate distance ``1 / (1/f - 1/d)``."""
    inv = 1.0 / f - 1.0 / d
    if inv <= 0.0:
        raise BokehError("NOT_FOCUSABLE", f"distance {d} is not beyond the focal length {f}")
    return 1.0 / inv


def coc_radius(f: float, aperture_radius: float, image_distance: float,
               object_distance: float) -> float:
    """``R_a |D_I - D_I'| / D_I'`` where ``D_I'`` is the conjugate of ``object_distance``."""
    di2 = conjugate(f, object_distance)
    return aperture_radius * abs(image_distance - di2) / di2


def focus_distance(cfg: OracleLensConfig) -> float:
    """Object distance (from the rim plane) that the traced lens images sharply."""
    f = effective_focal_length(cfg)
    dp = principal_offset(cfg)
    return conjugate(f, cfg.image_plane_distance - dp) + dp


def image_distance_for_focus(cfg: OracleLensConfig, distance: float) -> float:
    """Sensor distance that brings an object plane at ``distance`` into focus."""
    f = effective_focal_length(cfg)
    dp = principal_offset(cfg)
    return conjugate(f, distance - dp) + dp


def coc_radius_physical(cfg: OracleLensConfig, distance: float) -> float:
    """Blur radius on the sensor, in scene units, of a point at ``distance``."""
    f = effective_focal_length(cfg)
    dp = principal_offset(cfg)
    if cfg.image_plane_distance - dp <= f:
        raise BokehError("NOT_FOCUSABLE", "sensor sits inside the focal length")
    return coc_radius(f, cfg.aperture_radius, cfg.image_plane_distance - dp, distance - dp)


def pixels_per_disparity(cfg: OracleLensConfig) -> float:
    """Engine ``blur_scale``: CoC radius in pixels per unit of inverse distance."""
    return cfg.aperture_radius * cfg.width / (2.0 * math.tan(math.radians(cfg.fov) / 2.0))


def disparity_of(cfg: OracleLensConfig, distance: float) -> float:
    return 1.0 / (distance - principal_offset(cfg))


# -- tracer ----------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _uniform(seed, pixel, counter):
    """Counter-based uniform in ``[0, 1)`` keyed on ``(seed, pixel, counter)``."""
    k = _mix64(np.uint64(seed) + np.uint64(0x9E3779B97F4A7C15))
    k = _mix64(k ^ (np.uint64(pixel) * np.uint64(0xD1B54A32D192ED03)))
    k = _mix64(k ^ (np.uint64(counter) * np.uint64(0x8CB92BA72F3D8DD7)))
    return float(k >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, nogil=True)
def _concentric(u, v):
    a = 2.0 * u - 1.0
    b = 2.0 * v - 1.0
    if a == 0.0 and b == 0.0:
        return 0.0, 0.0
    if abs(a) > abs(b):
        r = a
        phi = (math.pi / 4.0) * (b / a)
    else:
        r = b
        phi = math.pi / 2.0 - (math.pi / 4.0) * (a / b)
    return r * math.cos(phi), r * math.sin(phi)


@numba.njit(cache=True, nogil=True)
def _refract(dx, dy, dz, nx, ny, nz, eta):
    """Snell refraction of unit ``d`` at unit normal ``n``; ``ok`` is False on TIR."""
    cosi = -(dx * nx + dy * ny + dz * nz)
    if cosi < 0.0:
        nx, ny, nz = -nx, -ny, -nz
        cosi = -cosi
    k = 1.0 - eta * eta * (1.0 - cosi * cosi)
    if k < 0.0:
        return False, 0.0, 0.0, 0.0
    c = eta * cosi - math.sqrt(k)
    tx = eta * dx + c * nx
    ty = eta * dy + c * ny
    tz = eta * dz + c * nz
    inv = 1.0 / math.sqrt(tx * tx + ty * ty + tz * tz)
    return True, tx * inv, ty * inv, tz * inv


@numba.njit(cache=True, nogil=True)
def _hit_sphere(ox, oy, oz, dx, dy, dz, cz, rc, far):
    """Ray parameter of the near (or far) intersection with a sphere centred at ``(0, 0, cz)``."""
    qz = oz - cz
    b = ox * dx + oy * dy + qz * dz
    c = ox * ox + oy * oy + qz * qz - rc * rc
    disc = b * b - c
    if disc < 0.0:
        return -1.0
    sq = math.sqrt(disc)
    if far:
        return -b + sq
    t = -b - sq
    if t < 0.0:
        t = -b + sq
    return t


@numba.njit(cache=True, nogil=True)
def _through_lens(px, py, pz, lx, ly, h, rc, ra, eta):
    """Trace sensor point ``p`` aimed at rim-plane point ``(lx, ly, 0)`` out into object space."""
    dx, dy, dz = lx - px, ly - py, -pz
    inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
    dx, dy, dz = dx * inv, dy * inv, dz * inv
    # back surface: sphere centred at +h, cap with z <= 0
    t = _hit_sphere(px, py, pz, dx, dy, dz, h, rc, False)
    if t < 0.0:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    qx, qy, qz = px + t * dx, py + t * dy, pz + t * dz
    if qz > 1e-12 * rc or qx * qx + qy * qy > ra * ra * (1.0 + 1e-12):
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    ok, dx, dy, dz = _refract(dx, dy, dz, qx / rc, qy / rc, (qz - h) / rc, 1.0 / eta)
    if not ok:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    # front surface: sphere centred at -h, we are inside it
    t = _hit_sphere(qx, qy, qz, dx, dy, dz, -h, rc, True)
    if t < 0.0:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    qx, qy, qz = qx + t * dx, qy + t * dy, qz + t * dz
    if qz < -1e-12 * rc:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    ok, dx, dy, dz = _refract(dx, dy, dz, qx / rc, qy / rc, (qz + h) / rc, eta)
    if not ok or dz <= 0.0:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    return True, qx, qy, qz, dx, dy, dz


@numba.njit(cache=True, nogil=True)
def _taps(n, f):
    f = min(max(f, 0.0), n - 1.0)
    i0 = int(f)
    if i0 > n - 2:
        i0 = max(n - 2, 0)
    return i0, min(i0 + 1, n - 1), f - i0


@numba.njit(cache=True, nogil=True)
def _shade(ox, oy, oz, dx, dy, dz, rgba, dists, half_w, half_h):
    """Straight-alpha ``over`` compositing of every billboard the ray crosses.

    Texture lookups are bilinear with clamp-to-edge.
    """
    L, H, W = rgba.shape[0], rgba.shape[1], rgba.shape[2]
    out = np.zeros(3)
    trans = 1.0
    for l in range(L):
        t = (dists[l] - oz) / dz
        x = ox + t * dx
        y = oy + t * dy
        i0, i1, ti = _taps(H, (1.0 - y / half_h[l]) * 0.5 * H - 0.5)
        j0, j1, tj = _taps(W, (x / half_w[l] + 1.0) * 0.5 * W - 0.5)
        w00 = (1.0 - ti) * (1.0 - tj)
        w01 = (1.0 - ti) * tj
        w10 = ti * (1.0 - tj)
        w11 = ti * tj
        tex = rgba[l]
        a = w00 * tex[i0, j0, 3] + w01 * tex[i0, j1, 3] + w10 * tex[i1, j0, 3] + w11 * tex[i1, j1, 3]
        if a <= 0.0:
            continue
        wgt = trans * a
        for c in range(3):
            out[c] += wgt * (w00 * tex[i0, j0, c] + w01 * tex[i0, j1, c]
                             + w10 * tex[i1, j0, c] + w11 * tex[i1, j1, c])
        trans *= 1.0 - a
        if trans <= 0.0:
            break
    return out[0], out[1], out[2]


@numba.njit(cache=True, nogil=True)
def _strata(spp):
    nx = int(math.sqrt(spp))
    while spp % nx != 0:
        nx -= 1
    return nx, spp // nx


@numba.njit(cache=True, nogil=True)
def _trace_one(i, j, H, W, sx, sy, di, h, rc, ra, eta, spp, seed,
               rgba, dists, half_w, half_h):
    u = ((j + 0.5) / W) * 2.0 - 1.0
    v = 1.0 - ((i + 0.5) / H) * 2.0
    px, py, pz = -u * sx, -v * sy, -di
    pix = i * W + j
    nx, ny = _strata(spp)
    acc_r = 0.0
    acc_g = 0.0
    acc_b = 0.0
    counter = 0
    for k in range(spp):
        ok = False
        for attempt in range(_MAX_RESAMPLE):
            if attempt == 0:
                ju = (k % nx + _uniform(seed, pix, counter)) / nx
                jv = (k // nx + _uniform(seed, pix, counter + 1)) / ny
            else:
                ju = _uniform(seed, pix, counter)
                jv = _uniform(seed, pix, counter + 1)
            counter += 2
            lx, ly = _concentric(ju, jv)
            ok, ox, oy, oz, dx, dy, dz = _through_lens(px, py, pz, lx * ra, ly * ra, h, rc, ra, eta)
            if ok:
                break
        if not ok:
            # a pinhole-like fallback keeps the estimator defined for degenerate apertures
            ok, ox, oy, oz, dx, dy, dz = _through_lens(px, py, pz, 0.0, 0.0, h, rc, ra, eta)
        r, g, b = _shade(ox, oy, oz, dx, dy, dz, rgba, dists, half_w, half_h)
        acc_r += r
        acc_g += g
        acc_b += b
    return acc_r / spp, acc_g / spp, acc_b / spp


@numba.njit(cache=True, parallel=True, nogil=True)
def _trace_image(H, W, sx, sy, di, h, rc, ra, eta, spp, seed,
                 rgba, dists, half_w, half_h):
    out = np.zeros((H, W, 3))
    for i in prange(H):
        for j in range(W):
            r, g, b = _trace_one(i, j, H, W, sx, sy, di, h, rc, ra, eta, spp, seed,
                                 rgba, dists, half_w, half_h)
            out[i, j, 0] = r
            out[i, j, 1] = g
            out[i, j, 2] = b
    return out


def _tracer_args(cfg: OracleLensConfig, scene: BillboardScene):
    scene.validate(cfg)
    rc, ra, eta = _geometry(cfg)
    h = math.sqrt(rc * rc - ra * ra)
    dp = principal_offset(cfg)
    tan = math.tan(math.radians(cfg.fov) / 2.0)
    H, W = cfg.sensor_resolution
    sx = (cfg.image_plane_distance - dp) * tan
    sy = sx * H / W
    colors, alphas, dists = scene.stacked()
    half_w = (dists - dp) * tan
    half_h = half_w * H / W
    return (H, W, sx, sy, float(cfg.image_plane_distance), h, rc, ra, eta,
            int(cfg.samples_per_pixel), int(cfg.rng_seed),
            np.ascontiguousarray(np.concatenate([colors, alphas[..., None]], axis=-1)),
            dists, half_w, half_h)


def trace_pixel(cfg: OracleLensConfig, scene: BillboardScene, pixel) -> np.ndarray:
    """Linear RGB of output pixel ``(row, col)`` averaged over ``spp`` lens samples."""
    args = _tracer_args(cfg, scene)
    i, j = int(pixel[0]), int(pixel[1])
    return np.array(_trace_one(i, j, *args))


def trace_image(cfg: OracleLensConfig, scene: BillboardScene) -> np.ndarray:
    """Full ``(H, W, 3)`` ray-traced image; identical for any thread count."""
    return _trace_image(*_tracer_args(cfg, scene))


def pinhole_image(scene: BillboardScene) -> np.ndarray:
    """All-in-focus projection: textures composited texel by texel."""
    colors, alphas, _ = scene.stacked()
    out = np.zeros(colors.shape[1:])
    trans = np.ones(alphas.shape[1:])
    for c, a in zip(colors, alphas):
        out += (trans * a)[..., None] * c
        trans = trans * (1.0 - a)
    return out


def trace_point_spread(cfg: OracleLensConfig, distance: float, n_rays: int = 4096,
                       seed: int = 0) -> np.ndarray:
    """Sensor landing points, shape ``(n, 2)``, of rays from an on-axis point at ``distance``.

    Rays are aimed from the point at uniform positions on the rim-plane disk
    and traced backwards through the lens onto the sensor.  Rays that fail to
    pass are dropped.
    """
    rc, ra, eta = _geometry(cfg)
    h = math.sqrt(rc * rc - ra * ra)
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(n_rays):
        lx, ly = _concentric(*rng.random(2))
        # mirror the geometry so the object sits on the sensor side of the tracer
        ok, ox, oy, oz, dx, dy, dz = _through_lens(0.0, 0.0, -float(distance), lx * ra, ly * ra,
                                                   h, rc, ra, eta)
        if not ok:
            continue
        t = (cfg.image_plane_distance - oz) / dz
        pts.append((ox + t * dx, oy + t * dy))
    return np.array(pts).reshape(-1, 2)


# -- engine view of a billboard scene ------------------------------------------

def engine_lens(cfg: OracleLensConfig, mode=Mode.SOFT, occlusion: bool = True) -> LensConfig:
    return LensConfig(focus_disparity=disparity_of(cfg, focus_distance(cfg)),
                      blur_scale=pixels_per_disparity(cfg), mode=Mode(mode), occlusion=occlusion)


def engine_scene(cfg: OracleLensConfig, scene: BillboardScene) -> LayeredScene:
    """Layered RGBD scene whose layers are the billboard textures at constant disparity."""
    layers = [make_layer(b.color, b.alpha, disparity_of(cfg, b.distance)) for b in scene.billboards]
    return LayeredScene(layers)


def flat_scene(scene: LayeredScene) -> LayeredScene:
    """Single opaque RGBD layer for the no-occlusion baseline.

    Color is the alpha-over composite of all layers; disparity at each pixel
    is that of the front-most layer with alpha above one half.
    """
    colors, alphas, disps = scene.stacked()
    out = np.zeros(colors.shape[1:])
    trans = np.ones(alphas.shape[1:])
    for c, a in zip(colors, alphas):
        out += (trans * a)[..., None] * c
        trans = trans * (1.0 - a)
    disp = disps[-1].copy()
    for l in range(len(disps) - 2, -1, -1):
        disp = np.where(alphas[l] > 0.5, disps[l], disp)
    return LayeredScene([make_layer(out, 1.0, disp)])


def evaluate_dataset(dataset, baseline: bool = False):
    """Render every scene of a generated dataset and score it against the traced ground truth.

    Returns ``(engine_report, baseline_report)``; the second is ``None``
    unless ``baseline`` is set.  The baseline renders :func:`flat_scene`
    with the occlusion term disabled.
    """
    dirs = scene_dirs(dataset)
    if not dirs:
        raise BokehError("IO_FAILURE", f"no scenes under {dataset}")
    engine = MetricReport()
    flat = MetricReport() if baseline else None
    for d in dirs:
        scene, lens = bio.load_scene(d / "scene.json")
        gt = load_ground_truth(d)
        engine.add(d.name, render(scene, lens).bokeh, gt)
        if baseline:
            flat.add(d.name, render(flat_scene(scene), lens.with_(occlusion=False)).bokeh, gt)
    return engine, flat


# -- procedural textures and recipes --------------------------------------------

def _smooth_noise(rng, shape, scale):
    out = np.stack([ndimage.gaussian_filter(rng.random(shape), scale, mode="wrap")
                    for _ in range(3)], axis=-1)
    lo, hi = out.min(), out.max()
    return (out - lo) / max(hi - lo, 1e-12)


def texture_background(shape, seed: int, scale: float = 3.0) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    color = 0.05 + 0.9 * _smooth_noise(rng, shape, scale)
    return color, np.ones(shape)


def texture_shape(shape, seed: int, scale: float = 2.0, supersample: int = 4):
    """Random ellipse or rounded box with anti-aliased edges over a noise texture."""
    rng = np.random.default_rng(seed)
    h, w = shape
    tint = rng.uniform(0.2, 1.0, size=3)
    color = np.clip(tint * (0.4 + 0.6 * _smooth_noise(rng, shape, scale)), 0.0, 1.0)
    cy, cx = rng.uniform(0.35, 0.65) * h, rng.uniform(0.35, 0.65) * w
    ry, rx = rng.uniform(0.18, 0.3) * h, rng.uniform(0.18, 0.3) * w
    box = bool(rng.integers(0, 2))
    s = supersample
    yy, xx = np.mgrid[0:h * s, 0:w * s]
    yy = (yy + 0.5) / s - cy
    xx = (xx + 0.5) / s - cx
    if box:
        inside = np.maximum(np.abs(yy) / ry, np.abs(xx) / rx) < 1.0
    else:
        inside = (yy / ry) ** 2 + (xx / rx) ** 2 < 1.0
    alpha = inside.reshape(h, s, w, s).mean(axis=(1, 3))
    return color, alpha


def _texture_from_entry(entry: dict, shape, base: Path):
    kind = entry.get("kind", "background")
    if kind == "background":
        return texture_background(shape, int(entry.get("seed", 0)), float(entry.get("scale", 3.0)))
    if kind == "shape":
        return texture_shape(shape, int(entry.get("seed", 0)), float(entry.get("scale", 2.0)))
    if kind == "constant":
        color = np.broadcast_to(np.asarray(entry["color"], dtype=np.float64), shape + (3,)).copy()
        return color, np.full(shape, float(entry.get("alpha", 1.0)))
    if kind == "file":
        color = bio.load_png(base / entry["color"], "color")
        alpha = bio.load_png(base / entry["alpha"], "alpha") if "alpha" in entry else np.ones(shape)
        return color, alpha
    raise BokehError("PARSE_ERROR", f"unknown texture kind {kind!r}")


def _quantized(color, alpha):
    """Round-trip textures through 8-bit storage so the tracer sees what the manifest holds."""
    c8 = np.round(np.clip(bio.linear_to_srgb(color), 0, 1) * 255.0) / 255.0
    a8 = np.round(np.clip(alpha, 0, 1) * 255.0) / 255.0
    return bio.srgb_to_linear(c8), a8


def default_recipe(n_scenes: int = 5, resolution: int = 128, spp: int = 512, seed: int = 0) -> dict:
    """Two-billboard scenes alternating between a sharp foreground and a sharp background."""
    scenes = []
    for k in range(n_scenes):
        near = 900.0 + 150.0 * k
        far = 2500.0 + 500.0 * k
        focus = near if k % 2 == 0 else far
        scenes.append({
            "name": f"scene{k:03d}",
            "focus_distance": focus,
            "billboards": [
                {"distance": near, "texture": {"kind": "shape", "seed": 1000 + k}},
                {"distance": far, "texture": {"kind": "background", "seed": 2000 + k}},
            ],
        })
    return {"lens": {"sphere_radius": 400.0, "aperture_radius": 30.0, "refractive_index": 1.5,
                     "fov": 20.0, "sensor_resolution": [resolution, resolution],
                     "samples_per_pixel": spp, "rng_seed": seed},
            "scenes": scenes}


_LENS_FIELDS = {"sphere_radius", "aperture_radius", "refractive_index", "image_plane_distance",
                "fov", "sensor_resolution", "samples_per_pixel", "rng_seed"}


def lens_from_recipe(d: dict) -> OracleLensConfig:
    bio._check_keys(d, _LENS_FIELDS, "recipe.lens")
    kw = dict(d)
    if "sensor_resolution" in kw:
        res = kw["sensor_resolution"]
        kw["sensor_resolution"] = tuple(res) if isinstance(res, (list, tuple)) else (res, res)
    return OracleLensConfig(**kw)


def build_scene(cfg: OracleLensConfig, desc: dict, base: Path = Path(".")):
    """``(cfg focused as requested, BillboardScene)`` from one recipe scene entry."""
    bio._check_keys(desc, {"name", "focus_distance", "image_plane_distance", "billboards",
                           "rng_seed"}, "recipe.scene")
    if "image_plane_distance" in desc:
        cfg = cfg.with_(image_plane_distance=float(desc["image_plane_distance"]))
    elif "focus_distance" in desc:
        cfg = cfg.with_(image_plane_distance=image_distance_for_focus(cfg, float(desc["focus_distance"])))
    if "rng_seed" in desc:
        cfg = cfg.with_(rng_seed=int(desc["rng_seed"]))
    boards = []
    for entry in desc["billboards"]:
        bio._check_keys(entry, {"distance", "texture"}, "recipe.billboard")
        color, alpha = _texture_from_entry(entry.get("texture", {}), cfg.sensor_resolution, base)
        color, alpha = _quantized(color, alpha)
        boards.append(Billboard(color, alpha, float(entry["distance"])))
    boards[-1].alpha = np.ones_like(boards[-1].alpha)
    return cfg, BillboardScene(boards)


def generate_scene(cfg: OracleLensConfig, scene: BillboardScene, directory, name: str = "scene",
                   recipe_entry: Optional[dict] = None) -> Path:
    """Write one benchmark scene directory; returns it."""
    try:
        directory = bio.ensure_dir(directory)
        bokeh = trace_image(cfg, scene)
        layered = engine_scene(cfg, scene)
        bio.save_scene(layered, engine_lens(cfg), directory)
        bio.save_png(directory / "all_in_focus.png", pinhole_image(scene), "color")
        bio.save_png(directory / "bokeh_gt.png", bokeh, "color")
        bio.save_pfm(directory / "bokeh_gt.pfm", bokeh)
        prov = {"name": name, "oracle_lens": asdict(cfg),
                "focus_distance": focus_distance(cfg),
                "effective_focal_length": effective_focal_length(cfg),
                "principal_offset": principal_offset(cfg),
                "distances": [b.distance for b in scene.billboards],
                "recipe": recipe_entry}
        (directory / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise BokehError("IO_FAILURE", str(exc)) from exc
    return directory


def generate_benchmark(recipe: dict, out_dir, base: Path = Path(".")) -> List[Path]:
    """Trace every recipe scene into ``out_dir/<name>``; deterministic given the recipe."""
    bio._check_keys(recipe, {"lens", "scenes"}, "recipe")
    cfg = lens_from_recipe(recipe.get("lens", {}))
    out = []
    for k, desc in enumerate(recipe["scenes"]):
        name = desc.get("name", f"scene{k:03d}")
        scfg, scene = build_scene(cfg, desc, base)
        out.append(generate_scene(scfg, scene, Path(out_dir) / name, name, desc))
    return out


def load_recipe(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise BokehError("IO_FAILURE", f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BokehError("PARSE_ERROR", f"{path}: {exc}") from exc


def scene_dirs(dataset) -> List[Path]:
    return sorted(p.parent for p in Path(dataset).glob("*/scene.json"))


def load_ground_truth(scene_dir) -> np.ndarray:
    scene_dir = Path(scene_dir)
    if (scene_dir / "bokeh_gt.pfm").exists():
        return bio.load_pfm(scene_dir / "bokeh_gt.pfm")
    return bio.load_png(scene_dir / "bokeh_gt.png", "color")
