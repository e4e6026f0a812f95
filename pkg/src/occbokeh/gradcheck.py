"""Finite-difference audit of the analytic backward pass."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict

import numpy as np

from .render import backward, render
from .scene import BokehError, Layer, LayeredScene, LensConfig, Mode, resolve_lens

FAMILIES = ("color", "disparity", "alpha")


@dataclass
class FamilyReport:
    max_rel: float
    median_rel: float
    frac_within: float
    count: int


def relative_error(a, b, floor):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _with(scene: LayeredScene, l: int, **arrays) -> LayeredScene:
    layers = list(scene.layers)
    old = layers[l]
    layers[l] = Layer(arrays.get("color", old.color), arrays.get("alpha", old.alpha),
                      arrays.get("disparity", old.disparity))
    return LayeredScene(layers)


def _bokeh(scene, lens):
    return render(scene, lens, validate=False).bokeh


def numeric_gradients(scene: LayeredScene, lens: LensConfig, direction, eps: float = 1e-3,
                      grouped: bool = True):
    """Central differences of ``sum(direction * render(scene))`` for every input entry.

    An output pixel only depends on inputs within Chebyshev distance ``R``,
    so with ``grouped=True`` all entries on a lattice of spacing ``2R + 1``
    are perturbed together and each one's quotient is read off its own
    disjoint output footprint.  ``grouped=False`` perturbs one entry per pair
    of renders.
    """
    R = lens.max_radius
    color, alpha, disp = scene.stacked()
    h, w = alpha.shape[1:]
    stride = min(2 * R + 1, max(h, w) + 1)
    out = {"color": np.zeros_like(color), "disparity": np.zeros_like(disp),
           "alpha": np.zeros_like(alpha)}
    params = {"color": color, "disparity": disp, "alpha": alpha}
    rows = np.arange(h)
    cols = np.arange(w)
    for name, stack in params.items():
        for l in range(stack.shape[0]):
            base = stack[l]
            channels = range(base.shape[2]) if base.ndim == 3 else [None]
            for ch in channels:
                offsets = [(oi, oj) for oi in range(min(stride, h)) for oj in range(min(stride, w))]
                if not grouped:
                    offsets = [(i, j) for i in range(h) for j in range(w)]
                for oi, oj in offsets:
                    pi = rows[oi::stride] if grouped else np.array([oi])
                    pj = cols[oj::stride] if grouped else np.array([oj])
                    ii, jj = np.meshgrid(pi, pj, indexing="ij")
                    ii, jj = ii.ravel(), jj.ravel()
                    diffs = []
                    for sgn in (1.0, -1.0):
                        arr = base.copy()
                        if ch is None:
                            arr[ii, jj] += sgn * eps
                        else:
                            arr[ii, jj, ch] += sgn * eps
                        diffs.append(_bokeh(_with(scene, l, **{name: arr}), lens))
                    contrib = np.sum((diffs[0] - diffs[1]) * direction, axis=-1) / (2.0 * eps)
                    for i, j in zip(ii, jj):
                        if grouped:
                            val = contrib[max(i - R, 0):i + R + 1, max(j - R, 0):j + R + 1].sum()
                        else:
                            val = contrib.sum()
                        if ch is None:
                            out[name][l, i, j] = val
                        else:
                            out[name][l, i, j, ch] = val
    return out


def kink_mask(scene: LayeredScene, lens: LensConfig, eps: float) -> np.ndarray:
    """Pixels whose disparity stencil ``d +- eps`` crosses a non-smooth point.

    Those are ``d_rel = 0``, the minimum-radius clamp ``gamma |d_rel| = 0.5`` and
    the window clamp ``gamma |d_rel| = R``.
    """
    _, _, disp = scene.stacked()
    a = np.abs(disp - lens.focus_disparity)
    g = lens.blur_scale
    bad = a <= eps
    for edge in (0.5, float(lens.max_radius)):
        if g > 0:
            bad |= np.abs(a - edge / g) <= eps
    return bad


def check_gradients(scene: LayeredScene, lens: LensConfig, eps: float = 1e-3, tol: float = 1e-3,
                    seed: int = 0, leak: float = 0.0, floor_frac: float = 1e-3
                    ) -> Dict[str, FamilyReport]:
    """Compare analytic and central-difference gradients of a random linear loss.

    Degenerate entries are skipped: gradient magnitude below ``floor_frac``
    times the family maximum, layer denominator below ``1e-6``, or a
    disparity stencil that crosses a kink (:func:`kink_mask`).
    """
    if Mode(lens.mode) != Mode.SOFT:
        raise BokehError("MODE_MISMATCH", "gradcheck needs a SOFT lens")
    lens = resolve_lens(scene, lens)
    lens = lens.with_(soft=replace(lens.soft, leak_slope=leak))
    rng = np.random.default_rng(seed)
    out = render(scene, lens, validate=False)
    direction = rng.standard_normal(out.bokeh.shape)
    analytic = backward(scene, lens, out, direction)
    numeric = numeric_gradients(scene, lens, direction, eps)
    good_px = (out.denominator >= 1e-6) & ~kink_mask(scene, lens, eps)
    report = {}
    for name in FAMILIES:
        a = getattr(analytic, name)
        f = numeric[name]
        scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(f))), 1e-300)
        mag = np.maximum(np.abs(a), np.abs(f))
        mask = mag >= floor_frac * scale
        mask &= good_px[..., None] if a.ndim == 4 else good_px
        rel = relative_error(a, f, floor_frac * scale)[mask]
        if rel.size == 0:
            report[name] = FamilyReport(0.0, 0.0, 1.0, 0)
            continue
        report[name] = FamilyReport(float(rel.max()), float(np.median(rel)),
                                    float(np.mean(rel <= tol)), int(rel.size))
    return report


def random_scene(rng: np.random.Generator, size: int, layers: int = 1,
                 disparity_range: float = 1.0) -> LayeredScene:
    """Random opaque-backed scene with disparities away from exactly zero."""
    out = []
    for l in range(layers):
        color = rng.random((size, size, 3))
        alpha = np.ones((size, size)) if l == layers - 1 else rng.uniform(0.0, 1.0, (size, size))
        disp = rng.uniform(-disparity_range, disparity_range, (size, size))
        disp = np.where(np.abs(disp) < 0.05, np.sign(disp + 1e-12) * 0.05, disp)
        out.append(Layer(color, alpha, disp))
    return LayeredScene(out)
