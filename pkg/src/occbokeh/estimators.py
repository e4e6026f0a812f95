"""scikit-learn style wrappers around the renderer and the depth-from-defocus solver."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import dfd
from .render import render
from .scene import (ApertureKernel, BokehError, LayeredScene, LensConfig, Mode, SoftParams,
                    validate_scene)


def check_scene(scene) -> LayeredScene:
    """Return ``scene`` if it is a valid :class:`LayeredScene`, else raise ``BokehError``."""
    if not isinstance(scene, LayeredScene):
        raise BokehError("SCENE_INVALID", f"expected LayeredScene, got {type(scene).__name__}")
    try:
        validate_scene(scene)
    except BokehError as exc:
        raise BokehError("SCENE_INVALID", str(exc)) from exc
    return scene


def check_image(image, name: str = "image") -> np.ndarray:
    """Finite float64 ``(H, W, 3)`` array."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise BokehError("SHAPE_MISMATCH", f"{name} must be (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise BokehError("NONFINITE_VALUE", name)
    return arr


class BokehRenderer(TransformerMixin, BaseEstimator):
    """Stateless transformer: layered scene in, bokeh image out."""

    def __init__(self, focus_disparity: float = 0.0, blur_scale: float = 10.0,
                 max_radius: Optional[int] = None, mode: str = "soft", occlusion: bool = True,
                 kernel: Optional[ApertureKernel] = None, soft: Optional[SoftParams] = None):
        self.focus_disparity = focus_disparity
        self.blur_scale = blur_scale
        self.max_radius = max_radius
        self.mode = mode
        self.occlusion = occlusion
        self.kernel = kernel
        self.soft = soft

    def lens(self) -> LensConfig:
        return LensConfig(focus_disparity=self.focus_disparity, blur_scale=self.blur_scale,
                          max_radius=self.max_radius, mode=Mode(self.mode),
                          occlusion=self.occlusion,
                          kernel=self.kernel or ApertureKernel.circle(),
                          soft=self.soft or SoftParams())

    def fit(self, scene=None, y=None):
        self.lens_ = self.lens()
        return self

    def transform(self, scene) -> np.ndarray:
        lens = getattr(self, "lens_", None) or self.lens()
        return render(check_scene(scene), lens).bokeh


class DepthFromDefocus(BaseEstimator):
    """Per-pixel disparity from an all-in-focus image and a defocused target.

    ``fit(image, target)`` runs the optimiser; ``predict()`` returns the
    recovered disparity map and ``transform()`` the matching render.
    """

    def __init__(self, focus_disparity: float = 0.0, blur_scale: float = 10.0,
                 max_radius: Optional[int] = None, init_disparity: float = 0.0,
                 weights: Sequence[float] = dfd.DEFAULT_WEIGHTS,
                 windows: Sequence[int] = dfd.DEFAULT_WINDOWS, lr: float = 0.01,
                 max_iter: int = 2000, tol: float = 1e-5, patience: int = 50):
        self.focus_disparity = focus_disparity
        self.blur_scale = blur_scale
        self.max_radius = max_radius
        self.init_disparity = init_disparity
        self.weights = weights
        self.windows = windows
        self.lr = lr
        self.max_iter = max_iter
        self.tol = tol
        self.patience = patience

    def _problem(self, image, target) -> dfd.DfdProblem:
        lens = LensConfig(self.focus_disparity, self.blur_scale, max_radius=self.max_radius,
                          mode=Mode.SOFT)
        return dfd.DfdProblem(image, target, lens, self.init_disparity,
                              weights=tuple(self.weights), windows=tuple(self.windows),
                              lr=self.lr, max_iter=self.max_iter, tol=self.tol,
                              patience=self.patience)

    def fit(self, image, target):
        image = check_image(image)
        target = check_image(target, "target")
        result = dfd.optimize(self._problem(image, target))
        self.disparity_ = result.disparity
        self.render_ = result.render
        self.loss_trace_ = result.loss_trace
        self.n_iter_ = result.iterations
        return self

    def predict(self, image=None) -> np.ndarray:
        check_is_fitted(self, "disparity_")
        return self.disparity_

    def transform(self, image=None) -> np.ndarray:
        check_is_fitted(self, "render_")
        return self.render_


__all__ = ["BokehRenderer", "DepthFromDefocus", "check_image", "check_scene", "NotFittedError"]
