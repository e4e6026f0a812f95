"""Layered scene data model, lens parameters and validation.

Images are plain ``numpy.ndarray`` buffers in row-major ``(H, W)`` or
``(H, W, C)`` layout.  Color is linear light in ``[0, 1]``; disparity is
inverse depth ``1/z`` and unbounded.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

DEFAULT_RADIUS_CAP = 64


class BokehError(Exception):
    """Error carrying a stable machine-readable ``code``."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class Mode(str, enum.Enum):
    HARD = "hard"
    SOFT = "soft"


@dataclass(frozen=True)
class SoftParams:
    occ_focal_sharpness: float = 3.0
    occ_step_sharpness: float = 10.0
    occ_step_offset: float = 0.1
    scat_sharpness: float = 3.0
    scat_gain: float = 10.0
    scat_margin: float = 1.0
    leak_slope: float = 0.01

    def __post_init__(self):
        for name in ("occ_focal_sharpness", "occ_step_sharpness", "occ_step_offset",
                     "scat_sharpness", "scat_gain", "scat_margin"):
            if not getattr(self, name) > 0:
                raise BokehError("INVALID_PARAM", f"{name} must be > 0")
        if not self.leak_slope >= 0:
            raise BokehError("INVALID_PARAM", "leak_slope must be >= 0")

    def scaled(self, t: float) -> "SoftParams":
        """Copy with both occlusion sharpness coefficients multiplied by ``t``."""
        return replace(self, occ_focal_sharpness=self.occ_focal_sharpness * t,
                       occ_step_sharpness=self.occ_step_sharpness * t)


@dataclass(frozen=True)
class ApertureKernel:
    """Lens shape: a perfect disk, or a square mask centered on its midpoint."""

    kind: str = "circle"
    mask: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "circle":
            if self.mask is not None:
                raise BokehError("INVALID_PARAM", "circle kernel takes no mask")
        elif self.kind == "mask":
            m = self.mask
            if m is None or m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise BokehError("INVALID_PARAM", "mask kernel needs a square 2-D array")
            if not np.all(np.isfinite(m)) or m.min() < 0 or m.max() > 1:
                raise BokehError("INVALID_PARAM", "mask values must lie in [0, 1]")
        else:
            raise BokehError("INVALID_PARAM", f"unknown kernel kind {self.kind!r}")

    @classmethod
    def circle(cls) -> "ApertureKernel":
        return cls("circle")

    @classmethod
    def from_mask(cls, mask) -> "ApertureKernel":
        return cls("mask", np.ascontiguousarray(mask, dtype=np.float64))

    def table(self) -> np.ndarray:
        """Mask as a float64 array; a 1x1 array of ones for the circle."""
        if self.kind == "circle":
            return np.ones((1, 1))
        return self.mask


@dataclass(frozen=True)
class LensConfig:
    """Image-space lens.

    ``blur_scale`` is the CoC radius in pixels per unit of relative
    disparity.  ``max_radius=None`` means "pick from the scene" (see
    :func:`resolve_lens`).  ``occlusion=False`` disables the in-layer
    occlusion term and exists for ablations.
    """

    focus_disparity: float = 0.0
    blur_scale: float = 10.0
    max_radius: Optional[int] = None
    kernel: ApertureKernel = field(default_factory=ApertureKernel.circle)
    soft: SoftParams = field(default_factory=SoftParams)
    mode: Mode = Mode.SOFT
    occlusion: bool = True
    radius_cap: int = DEFAULT_RADIUS_CAP

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not math.isfinite(self.focus_disparity):
            raise BokehError("INVALID_PARAM", "focus_disparity must be finite")
        if not (math.isfinite(self.blur_scale) and self.blur_scale >= 0):
            raise BokehError("INVALID_PARAM", "blur_scale must be >= 0")
        if self.max_radius is not None and self.max_radius < 1:
            raise BokehError("INVALID_PARAM", "max_radius must be >= 1")

    def with_(self, **changes) -> "LensConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Layer:
    color: np.ndarray      # (H, W, 3)
    alpha: np.ndarray      # (H, W)
    disparity: np.ndarray  # (H, W), absolute 1/z

    @property
    def shape(self) -> tuple:
        return self.alpha.shape


@dataclass(frozen=True)
class LayeredScene:
    """Layers ordered front (index 0) to back."""

    layers: tuple

    def __init__(self, layers: Sequence[Layer]):
        object.__setattr__(self, "layers", tuple(layers))

    @property
    def n(self) -> int:
        return len(self.layers)

    @property
    def shape(self) -> tuple:
        return self.layers[0].shape

    def stacked(self):
        """Return ``(color (L,H,W,3), alpha (L,H,W), disparity (L,H,W))`` float64 arrays."""
        color = np.stack([np.asarray(l.color, dtype=np.float64) for l in self.layers])
        alpha = np.stack([np.asarray(l.alpha, dtype=np.float64) for l in self.layers])
        disp = np.stack([np.asarray(l.disparity, dtype=np.float64) for l in self.layers])
        return color, alpha, disp


def make_layer(color, alpha, disparity) -> Layer:
    """Build a layer, broadcasting scalar alpha/disparity to the color's size."""
    color = np.asarray(color, dtype=np.float64)
    hw = color.shape[:2]
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), hw).copy()
    disparity = np.broadcast_to(np.asarray(disparity, dtype=np.float64), hw).copy()
    return Layer(color, alpha, disparity)


def validate_scene(scene: LayeredScene) -> None:
    """Raise :class:`BokehError` on the first broken scene invariant."""
    if scene.n < 1:
        raise BokehError("DIMENSION_MISMATCH", "scene has no layers")
    hw = None
    for i, layer in enumerate(scene.layers):
        c, a, d = (np.asarray(layer.color), np.asarray(layer.alpha),
                   np.asarray(layer.disparity))
        if c.ndim != 3 or c.shape[2] != 3 or a.ndim != 2 or d.ndim != 2:
            raise BokehError("DIMENSION_MISMATCH", f"layer {i}: bad buffer ranks")
        if hw is None:
            hw = a.shape
        if c.shape[:2] != hw or a.shape != hw or d.shape != hw:
            raise BokehError("DIMENSION_MISMATCH",
                             f"layer {i}: sizes {c.shape[:2]}, {a.shape}, {d.shape} vs {hw}")
        for name, buf in (("color", c), ("alpha", a), ("disparity", d)):
            if not np.all(np.isfinite(buf)):
                raise BokehError("NONFINITE_VALUE", f"layer {i}: {name}")
        if a.min() < 0 or a.max() > 1:
            raise BokehError("ALPHA_OUT_OF_RANGE", f"layer {i}")
        if c.min() < 0 or c.max() > 1:
            raise BokehError("COLOR_OUT_OF_RANGE", f"layer {i}")
    if not np.all(np.asarray(scene.layers[-1].alpha) == 1.0):
        raise BokehError("BACK_LAYER_NOT_OPAQUE")


def relative_disparity(disparity, lens: LensConfig):
    """Disparity relative to the focal plane; zero means in focus."""
    return np.asarray(disparity, dtype=np.float64) - lens.focus_disparity


def coc_radius(d_rel, lens: LensConfig, max_radius: Optional[float] = None):
    """CoC radius in pixels, ``min(blur_scale*|d_rel|, R)``."""
    if max_radius is None:
        max_radius = lens.max_radius if lens.max_radius is not None else np.inf
    return np.minimum(lens.blur_scale * np.abs(d_rel), max_radius)


def resolve_lens(scene: LayeredScene, lens: LensConfig) -> LensConfig:
    """Fix ``max_radius`` for this scene when the lens leaves it open.

    The default is ``ceil(blur_scale * max|d_rel|) + 1`` clamped to
    ``radius_cap``.
    """
    if lens.max_radius is not None:
        return lens
    dmax = max(float(np.max(np.abs(relative_disparity(l.disparity, lens))))
               for l in scene.layers)
    r = int(math.ceil(lens.blur_scale * dmax)) + 1
    return lens.with_(max_radius=max(1, min(r, lens.radius_cap)))
