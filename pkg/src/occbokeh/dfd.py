"""Depth from defocus by direct per-pixel optimisation through the soft renderer.

The objective is ``l1 * mean|pred - target| + l2 * G(D, I) + l3 * (1 - HSSIM)``
where ``G`` is an edge-aware smoothness term over an image pyramid and
HSSIM averages SSIM over several window sizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import metrics
from .render import backward, render
from .scene import BokehError, LayeredScene, LensConfig, Mode, make_layer

DEFAULT_WEIGHTS = (1.0, 0.1, 1.0)
DEFAULT_WINDOWS = (11, 21, 31)
DEFAULT_LEVELS = 4


class LossValue(NamedTuple):
    total: float
    l1: float
    grad: float
    hssim: float
    d_pred: np.ndarray
    d_disparity: np.ndarray


def _downsample(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _downsample_adjoint(g, shape):
    out = np.zeros(shape)
    h, w = g.shape[0] * 2, g.shape[1] * 2
    up = 0.25 * np.repeat(np.repeat(g, 2, axis=0), 2, axis=1)
    out[:h, :w] = up
    return out


def smoothness(disparity, image, levels: int = DEFAULT_LEVELS):
    """Edge-aware gradient regulariser and its gradient w.r.t. ``disparity``.

    ``(1/N) sum_i mean(|dx D_i| exp(-|dx I_i|)) + mean(|dy D_i| exp(-|dy I_i|))``
    on an ``N``-level 2x box pyramid; image gradients are channel means.
    """
    D = np.asarray(disparity, dtype=np.float64)
    I = np.asarray(image, dtype=np.float64)
    if I.ndim == 3:
        I = I.mean(axis=2)
    if I.shape != D.shape:
        raise BokehError("SHAPE_MISMATCH", "disparity and image sizes differ")
    pyramid = [(D, I)]
    for _ in range(levels - 1):
        d, i = pyramid[-1]
        if min(d.shape) < 4:
            break
        pyramid.append((_downsample(d), _downsample(i)))
    n = len(pyramid)
    value = 0.0
    grads = []
    for d, i in pyramid:
        gx = np.diff(d, axis=1)
        gy = np.diff(d, axis=0)
        wx = np.exp(-np.abs(np.diff(i, axis=1)))
        wy = np.exp(-np.abs(np.diff(i, axis=0)))
        value += (np.mean(np.abs(gx) * wx) + np.mean(np.abs(gy) * wy)) / n
        sx = np.sign(gx) * wx / (gx.size * n)
        sy = np.sign(gy) * wy / (gy.size * n)
        g = np.zeros_like(d)
        g[:, 1:] += sx
        g[:, :-1] -= sx
        g[1:, :] += sy
        g[:-1, :] -= sy
        grads.append(g)
    total = grads[-1]
    for lvl in range(n - 2, -1, -1):
        total = grads[lvl] + _downsample_adjoint(total, pyramid[lvl][0].shape)
    return float(value), total


def hssim(y, y_hat, windows: Sequence[int] = DEFAULT_WINDOWS):
    """Mean SSIM over ``windows`` and its gradient w.r.t. ``y_hat``."""
    windows = tuple(windows)
    if not windows:
        raise BokehError("INVALID_PARAM", "empty window set")
    value = 0.0
    grad = np.zeros(np.shape(y_hat))
    for win in windows:
        v, g = metrics.ssim_and_grad(y, y_hat, win)
        value += v / len(windows)
        grad += g / len(windows)
    return float(value), grad


def loss(pred, target, disparity, image, weights=DEFAULT_WEIGHTS,
         windows: Sequence[int] = DEFAULT_WINDOWS, levels: int = DEFAULT_LEVELS) -> LossValue:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.shape[:2] != np.shape(disparity):
        raise BokehError("SHAPE_MISMATCH", "prediction, target and disparity must align")
    l1w, gw, hw = weights
    diff = pred - target
    l1 = float(np.mean(np.abs(diff)))
    d_pred = l1w * np.sign(diff) / diff.size
    g_val, d_disp = smoothness(disparity, image, levels)
    d_disp = gw * d_disp
    h_val = 0.0
    if hw != 0.0:
        s, gs = hssim(target, pred, windows)
        h_val = 1.0 - s
        d_pred = d_pred - hw * gs
    total = l1w * l1 + gw * g_val + hw * h_val
    return LossValue(float(total), l1, float(g_val), float(h_val), d_pred, d_disp)


class Adam:
    """Adam moments for one parameter array."""

    def __init__(self, shape, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return param - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class DfdProblem:
    image: np.ndarray
    target: np.ndarray
    lens: LensConfig
    init_disparity: np.ndarray
    weights: Tuple[float, float, float] = DEFAULT_WEIGHTS
    windows: Tuple[int, ...] = DEFAULT_WINDOWS
    levels: int = DEFAULT_LEVELS
    lr: float = 0.01
    max_iter: int = 2000
    tol: float = 1e-5
    patience: int = 50

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.init_disparity = np.broadcast_to(
            np.asarray(self.init_disparity, dtype=np.float64), self.image.shape[:2]).copy()
        if self.image.shape != self.target.shape or self.image.ndim != 3:
            raise BokehError("SHAPE_MISMATCH", "image and target must be matching (H, W, 3)")
        if any(w < 0 for w in self.weights):
            raise BokehError("INVALID_PARAM", "loss weights must be >= 0")
        for win in self.windows:
            if win < 3 or win % 2 == 0:
                raise BokehError("INVALID_PARAM", f"bad SSIM window {win}")
        if Mode(self.lens.mode) != Mode.SOFT:
            raise BokehError("MODE_MISMATCH", "depth from defocus needs a SOFT lens")

    def resolved_lens(self) -> LensConfig:
        """Fix the window radius; unset means twice the initial blur, capped."""
        if self.lens.max_radius is not None:
            return self.lens
        dmax = float(np.max(np.abs(self.init_disparity - self.lens.focus_disparity)))
        r = int(math.ceil(self.lens.blur_scale * max(2.0 * dmax, 0.5))) + 1
        return self.lens.with_(max_radius=max(1, min(r, self.lens.radius_cap)))


@dataclass
class DfdResult:
    disparity: np.ndarray
    render: np.ndarray
    loss_trace: List[dict] = field(default_factory=list)
    best_loss: float = math.inf
    iterations: int = 0

    def running_min(self) -> np.ndarray:
        return np.minimum.accumulate([row["total"] for row in self.loss_trace])


def render_single(image, disparity, lens: LensConfig):
    """Render an opaque single-layer RGBD scene; returns ``(scene, RenderOutput)``."""
    scene = LayeredScene([make_layer(image, 1.0, disparity)])
    return scene, render(scene, lens, validate=False)


def objective(problem: DfdProblem, disparity, lens: Optional[LensConfig] = None):
    """Loss value and total gradient w.r.t. disparity at ``disparity``."""
    lens = lens or problem.resolved_lens()
    scene, out = render_single(problem.image, disparity, lens)
    lv = loss(out.bokeh, problem.target, disparity, problem.image, problem.weights,
              problem.windows, problem.levels)
    grads = backward(scene, lens, out, lv.d_pred)
    return lv, grads.disparity[0] + lv.d_disparity, out.bokeh


def optimize(problem: DfdProblem, callback=None) -> DfdResult:
    """Adam descent on per-pixel disparity; returns the best iterate seen."""
    lens = problem.resolved_lens()
    disp = problem.init_disparity.copy()
    opt = Adam(disp.shape, lr=problem.lr)
    result = DfdResult(disp.copy(), np.zeros_like(problem.image))
    history = []
    for it in range(problem.max_iter + 1):
        lv, grad, bokeh = objective(problem, disp, lens)
        if not (math.isfinite(lv.total) and np.all(np.isfinite(grad))):
            raise BokehError("DIVERGED", f"non-finite loss at iteration {it}")
        result.loss_trace.append({"iteration": it, "total": lv.total, "l1": lv.l1,
                                  "grad": lv.grad, "hssim": lv.hssim})
        if lv.total < result.best_loss:
            result.best_loss = lv.total
            result.disparity = disp.copy()
            result.render = bokeh
        result.iterations = it
        if callback is not None:
            callback(it, lv)
        history.append(result.best_loss)
        if it >= problem.patience:
            prev = history[-1 - problem.patience]
            if prev - result.best_loss <= problem.tol * max(abs(prev), 1e-12):
                break
        if it == problem.max_iter:
            break
        disp = opt.step(disp, grad)
    return result
