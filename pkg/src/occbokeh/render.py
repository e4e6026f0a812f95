"""Layered occlusion-aware bokeh rendering and its analytic backward pass.

Forward, per layer ``l`` and output pixel ``x``::

    N_l(x) = sum_y I_l(y) w_l(y, x) O_l(y, x)
    W_l(x) = sum_y w_l(y, x) O_l(y, x)
    B(x)   = sum_l V_l(x) prod_{k<l} (1 - V_k(x)) N_l(x) / max(W_l(x), eps)

``y`` runs over the square window of half-width ``R`` around ``x`` in
row-major order, so every pixel is reduced in a fixed order and results do
not depend on the thread count.  Per pair the arithmetic is exactly
``t = w * O; N += I * t; W += t`` with ``w = S * K * a / A``.

The backward pass is a gather over parameter pixels: each pixel ``z``
visits the pairs ``z -> x`` (``z`` scatters) and ``y -> z`` (``z``
receives) in its window, so no two threads write the same output.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from numba import prange

from . import kernels as K
from .scene import BokehError, LayeredScene, LensConfig, Mode, resolve_lens, validate_scene

EPS_W = 1e-8
_EXP_SAFE = 340.0

_pjit = numba.njit(cache=True, parallel=True, nogil=True)


def set_threads(n: Optional[int]) -> int:
    """Set the worker count for the render kernels; ``None`` keeps the current one."""
    if n is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
    return numba.get_num_threads()


@dataclass(frozen=True)
class _Params:
    R: int
    gamma: float
    soft: bool
    occlusion: bool
    c1: float
    c2: float
    c3: float
    s: float
    g: float
    m: float
    leak: float
    ktab: np.ndarray

    @classmethod
    def of(cls, lens: LensConfig):
        sp = lens.soft
        return cls(int(lens.max_radius), float(lens.blur_scale), lens.mode == Mode.SOFT,
                   bool(lens.occlusion), sp.occ_focal_sharpness, sp.occ_step_sharpness,
                   sp.occ_step_offset, sp.scat_sharpness, sp.scat_gain, sp.scat_margin,
                   sp.leak_slope, np.ascontiguousarray(lens.kernel.table(), dtype=np.float64))


@_pjit
def _forward_layer(color, alpha, drel, R, gamma, soft, occlusion, c1, c2, c3, s, g, m, ktab):
    h, w = alpha.shape
    num = np.zeros((h, w, 3))
    den = np.zeros((h, w))
    n = 2 * R + 1
    dist = np.empty((n, n))
    expd = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            dist[i, j] = math.sqrt((i - R) ** 2 + (j - R) ** 2)
            expd[i, j] = math.exp(s * dist[i, j])
    rad = np.empty((h, w))
    area = np.empty((h, w))
    pre = np.empty((h, w))
    # 1/2 (1 - tanh(c2 (d_y - d_x + c3))) == 1 / (1 + ey * ex), factored per pixel
    ey = np.empty((h, w))
    for yy in range(h):
        for yx in range(w):
            rho = gamma * abs(drel[yy, yx])
            rad[yy, yx] = min(rho, R)
            area[yy, yx] = K.area_s(rad[yy, yx])
            pre[yy, yx] = g * math.exp(-s * (rho + m))
            e = 2.0 * c2 * (drel[yy, yx] + c3)
            ey[yy, yx] = math.exp(e) if abs(e) < _EXP_SAFE else -1.0
    for xy in prange(h):
        for xx in range(w):
            d_x = drel[xy, xx]
            gx = math.exp(-c1 * d_x * d_x)
            e = -2.0 * c2 * d_x
            ex = math.exp(e) if abs(e) < _EXP_SAFE else -1.0
            n0 = 0.0
            n1 = 0.0
            n2 = 0.0
            wsum = 0.0
            for oy in range(-R, R + 1):
                yy = xy + oy
                if yy < 0 or yy >= h:
                    continue
                for ox in range(-R, R + 1):
                    yx = xx + ox
                    if yx < 0 or yx >= w:
                        continue
                    a = alpha[yy, yx]
                    if a == 0.0:
                        continue
                    r_y = rad[yy, yx]
                    if soft:
                        S = 1.0 / (1.0 + pre[yy, yx] * expd[oy + R, ox + R])
                    else:
                        S = K.scatter_hard_s(dist[oy + R, ox + R], r_y, R, oy == 0 and ox == 0)
                        if S == 0.0:
                            continue
                    kv = K.kernel_sample_s(ktab, -ox, -oy, r_y)
                    wt = S * kv * a / area[yy, yx]
                    if not occlusion:
                        o = 1.0
                    elif soft:
                        if gx == 0.0:
                            o = 1.0
                        elif ex > 0.0 and ey[yy, yx] > 0.0:
                            o = 1.0 - gx / (1.0 + ey[yy, yx] * ex)
                        else:
                            o = 1.0 - gx * (0.5 * (1.0 - math.tanh(c2 * (drel[yy, yx] - d_x + c3))))
                    else:
                        o = K.occlusion_hard_s(d_x, drel[yy, yx], K.EPS_FOCAL, K.EPS_ORDER)
                    t = wt * o
                    n0 += color[yy, yx, 0] * t
                    n1 += color[yy, yx, 1] * t
                    n2 += color[yy, yx, 2] * t
                    wsum += t
            num[xy, xx, 0] = n0
            num[xy, xx, 1] = n1
            num[xy, xx, 2] = n2
            den[xy, xx] = wsum
    return num, den


@_pjit
def _visibility(alpha, drel, R, gamma):
    h, w = alpha.shape
    vis = np.empty((h, w))
    cnt = np.empty((h, w))
    for xy in prange(h):
        for xx in range(w):
            rho = max(min(gamma * abs(drel[xy, xx]), R), K.R_MIN)
            rr = rho * rho
            acc = 0.0
            c = 0.0
            for oy in range(-R, R + 1):
                yy = xy + oy
                if yy < 0 or yy >= h:
                    continue
                for ox in range(-R, R + 1):
                    yx = xx + ox
                    if yx < 0 or yx >= w:
                        continue
                    if oy * oy + ox * ox < rr:
                        acc += alpha[yy, yx]
                        c += 1.0
            vis[xy, xx] = acc / c
            cnt[xy, xx] = c
    return vis, cnt


@_pjit
def _backward_layer(color, alpha, drel, P, Q, R, gamma, occlusion, c1, c2, c3, s, g, m,
                    leak, ktab):
    """Gradients of ``sum_x P(x).N(x) - Q(x) W(x)`` w.r.t. I, d, a of one layer."""
    h, w = alpha.shape
    dI = np.zeros((h, w, 3))
    dd = np.zeros((h, w))
    da = np.zeros((h, w))
    for zy in prange(h):
        for zx in range(w):
            d_z = drel[zy, zx]
            a_z = alpha[zy, zx]
            c0 = color[zy, zx, 0]
            c1_ = color[zy, zx, 1]
            c2_ = color[zy, zx, 2]
            gI0 = 0.0
            gI1 = 0.0
            gI2 = 0.0
            gd = 0.0
            ga = 0.0
            r_z = min(gamma * abs(d_z), R)
            for oy in range(-R, R + 1):
                py = zy + oy
                if py < 0 or py >= h:
                    continue
                for ox in range(-R, R + 1):
                    px = zx + ox
                    if px < 0 or px >= w:
                        continue
                    dist = math.sqrt(oy * oy + ox * ox)
                    # z scatters to p
                    kv = K.kernel_sample_s(ktab, ox, oy, r_z)
                    S, wt, dS, dw_dd, dw_da = K.weight_soft_partials_s(
                        dist, d_z, a_z, kv, gamma, R, s, g, m, leak)
                    if occlusion:
                        o, _, do_dy = K.occlusion_soft_partials_s(drel[py, px], d_z, c1, c2, c3, leak)
                    else:
                        o = 1.0
                        do_dy = 0.0
                    dldt = (P[py, px, 0] * c0 + P[py, px, 1] * c1_ + P[py, px, 2] * c2_
                            - Q[py, px])
                    t = wt * o
                    gI0 += P[py, px, 0] * t
                    gI1 += P[py, px, 1] * t
                    gI2 += P[py, px, 2] * t
                    ga += dldt * dw_da * o
                    gd += dldt * (dw_dd * o + wt * do_dy)
                    # p scatters to z: only O depends on d_z as receiver
                    a_p = alpha[py, px]
                    if occlusion and a_p != 0.0:
                        d_p = drel[py, px]
                        r_p = min(gamma * abs(d_p), R)
                        kv = K.kernel_sample_s(ktab, -ox, -oy, r_p)
                        S = K.scatter_soft_s(dist, gamma * abs(d_p), s, g, m)
                        wt = K.energy_weight_s(S, kv, a_p, r_p)
                        o, do_dx, _ = K.occlusion_soft_partials_s(d_z, d_p, c1, c2, c3, leak)
                        dldt = (P[zy, zx, 0] * color[py, px, 0] + P[zy, zx, 1] * color[py, px, 1]
                                + P[zy, zx, 2] * color[py, px, 2] - Q[zy, zx])
                        gd += dldt * wt * do_dx
            dI[zy, zx, 0] = gI0
            dI[zy, zx, 1] = gI1
            dI[zy, zx, 2] = gI2
            dd[zy, zx] = gd
            da[zy, zx] = ga
    return dI, dd, da


@_pjit
def _visibility_adjoint(gV, drel, cnt, R, gamma):
    """Scatter ``dL/dV`` back to alpha: ``dV(x)/da(y) = [y in disk(x)] / |disk(x)|``."""
    h, w = gV.shape
    out = np.zeros((h, w))
    for yy in prange(h):
        for yx in range(w):
            acc = 0.0
            for oy in range(-R, R + 1):
                xy = yy + oy
                if xy < 0 or xy >= h:
                    continue
                for ox in range(-R, R + 1):
                    xx = yx + ox
                    if xx < 0 or xx >= w:
                        continue
                    rho = max(min(gamma * abs(drel[xy, xx]), R), K.R_MIN)
                    if oy * oy + ox * ox < rho * rho:
                        acc += gV[xy, xx] / cnt[xy, xx]
            out[yy, yx] = acc
    return out


@dataclass(frozen=True)
class RenderOutput:
    """Rendered image plus the per-layer caches the backward pass reuses.

    Arrays are stacked over layers (front first): ``numerator (L,H,W,3)``,
    ``denominator``, ``visibility``, ``weights`` and ``disk_count`` ``(L,H,W)``.
    """

    bokeh: np.ndarray
    numerator: np.ndarray
    denominator: np.ndarray
    visibility: np.ndarray
    weights: np.ndarray
    disk_count: np.ndarray
    lens: LensConfig

    @property
    def layer_colors(self) -> np.ndarray:
        """Normalised per-layer scatter color ``N / max(W, eps)``."""
        return self.numerator / np.maximum(self.denominator, EPS_W)[..., None]


@dataclass(frozen=True)
class GradientSet:
    """Per-layer partials of a scalar loss (front first)."""

    color: np.ndarray      # (L, H, W, 3)
    disparity: np.ndarray  # (L, H, W)
    alpha: np.ndarray      # (L, H, W)


def _prep(scene: LayeredScene, lens: LensConfig):
    color, alpha, disp = scene.stacked()
    drel = disp - lens.focus_disparity
    return (np.ascontiguousarray(color), np.ascontiguousarray(alpha),
            np.ascontiguousarray(drel))


def render_layer(color, alpha, drel, lens: LensConfig):
    """Numerator ``(H,W,3)`` and denominator ``W`` ``(H,W)`` of one layer's scatter.

    ``drel`` is relative disparity; ``lens.max_radius`` must be set.
    """
    if lens.max_radius is None:
        raise BokehError("INVALID_PARAM", "render_layer needs a resolved max_radius")
    p = _Params.of(lens)
    return _forward_layer(np.ascontiguousarray(color, dtype=np.float64),
                          np.ascontiguousarray(alpha, dtype=np.float64),
                          np.ascontiguousarray(drel, dtype=np.float64),
                          p.R, p.gamma, p.soft, p.occlusion, p.c1, p.c2, p.c3,
                          p.s, p.g, p.m, p.ktab)


def composite_weights(vis: np.ndarray) -> np.ndarray:
    """Front-to-back blend weights ``V_l * prod_{k<l} (1 - V_k)``."""
    out = np.empty_like(vis)
    trans = np.ones(vis.shape[1:])
    for l in range(vis.shape[0]):
        out[l] = vis[l] * trans
        trans = trans * (1.0 - vis[l])
    return out


def render(scene: LayeredScene, lens: LensConfig, validate: bool = True) -> RenderOutput:
    """Render a layered scene; ``validate=False`` skips the scene checks."""
    if validate:
        try:
            validate_scene(scene)
        except BokehError as exc:
            raise BokehError("SCENE_INVALID", str(exc)) from exc
    lens = resolve_lens(scene, lens)
    p = _Params.of(lens)
    color, alpha, drel = _prep(scene, lens)
    nl, h, w = alpha.shape
    num = np.empty((nl, h, w, 3))
    den = np.empty((nl, h, w))
    vis = np.empty((nl, h, w))
    cnt = np.empty((nl, h, w))
    for l in range(nl):
        num[l], den[l] = _forward_layer(color[l], alpha[l], drel[l], p.R, p.gamma, p.soft,
                                        p.occlusion, p.c1, p.c2, p.c3, p.s, p.g, p.m, p.ktab)
        vis[l], cnt[l] = _visibility(alpha[l], drel[l], p.R, p.gamma)
    cw = composite_weights(vis)
    bokeh = np.zeros((h, w, 3))
    for l in range(nl):
        bokeh += cw[l][..., None] * (num[l] / np.maximum(den[l], EPS_W)[..., None])
    return RenderOutput(bokeh, num, den, vis, cw, cnt, lens)


def _visibility_grad(vis: np.ndarray, hc: np.ndarray) -> np.ndarray:
    """``dL/dV_m`` from ``dL/dc_l`` through the composite weights."""
    nl = vis.shape[0]
    gv = np.zeros_like(vis)
    for m in range(nl):
        for l in range(m, nl):
            term = np.ones(vis.shape[1:])
            for k in range(l):
                if k != m:
                    term = term * (1.0 - vis[k])
            if l == m:
                gv[m] += hc[l] * term
            else:
                gv[m] -= hc[l] * vis[l] * term
    return gv


def backward(scene: LayeredScene, lens: LensConfig, output: RenderOutput,
             grad_bokeh: np.ndarray) -> GradientSet:
    """Gradients of a scalar loss given ``dL/dB`` for a SOFT render ``output``."""
    lens = output.lens
    if lens.mode != Mode.SOFT:
        raise BokehError("MODE_MISMATCH", "backward needs a SOFT-mode render")
    grad_bokeh = np.asarray(grad_bokeh, dtype=np.float64)
    if grad_bokeh.shape != output.bokeh.shape:
        raise BokehError("SHAPE_MISMATCH", "upstream gradient shape")
    p = _Params.of(lens)
    color, alpha, drel = _prep(scene, lens)
    nl = alpha.shape[0]
    den = output.denominator
    ok = den >= EPS_W
    F = output.layer_colors
    gI = np.empty_like(color)
    gd = np.empty_like(drel)
    ga = np.empty_like(alpha)
    hc = np.einsum("hwc,lhwc->lhw", grad_bokeh, F)
    gvis = _visibility_grad(output.visibility, hc)
    for l in range(nl):
        gl = grad_bokeh * output.weights[l][..., None]
        P = gl / np.maximum(den[l], EPS_W)[..., None]
        Q = np.where(ok[l], np.sum(gl * F[l], axis=-1) / np.maximum(den[l], EPS_W), 0.0)
        gI[l], gd[l], ga[l] = _backward_layer(
            color[l], alpha[l], drel[l], np.ascontiguousarray(P), np.ascontiguousarray(Q),
            p.R, p.gamma, p.occlusion, p.c1, p.c2, p.c3, p.s, p.g, p.m, p.leak, p.ktab)
        ga[l] += _visibility_adjoint(np.ascontiguousarray(gvis[l]), drel[l], output.disk_count[l],
                                     p.R, p.gamma)
    return GradientSet(gI, gd, ga)
