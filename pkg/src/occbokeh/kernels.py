"""Pointwise scatter, occlusion and energy terms with their partials.

Every term is written once as a scalar ``numba`` function (``*_s``) that the
render kernels call in their inner loops; the public functions are
numpy-broadcasting wrappers around the same code.

Conventions: ``d_x`` is the relative disparity of the receiving pixel,
``d_y`` that of the scattering pixel.  Larger disparity means closer to the
camera.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numba
import numpy as np

from .scene import SoftParams

EPS_FOCAL = 1e-3
EPS_ORDER = 0.0
R_MIN = 0.5

_jit = numba.njit(cache=True, nogil=True)


@_jit
def sign_s(v):
    if v > 0.0:
        return 1.0
    if v < 0.0:
        return -1.0
    return 0.0


@_jit
def occlusion_hard_s(d_x, d_y, eps_focal, eps_order):
    if abs(d_x) < eps_focal and d_x - d_y > eps_order:
        return 0.0
    return 1.0


@_jit
def occlusion_soft_s(d_x, d_y, c1, c2, c3):
    g = math.exp(-c1 * d_x * d_x)
    h = 0.5 * (1.0 - math.tanh(c2 * (d_y - d_x + c3)))
    return 1.0 - g * h


@_jit
def scatter_hard_s(dist, r_y, max_radius, same):
    if same or dist < min(r_y, max_radius):
        return 1.0
    return 0.0


@_jit
def scatter_soft_s(dist, rho_y, s, g, m):
    # rho_y = blur_scale * |d_y|, deliberately unclamped
    return 1.0 / (1.0 + g * math.exp(-s * (rho_y + m - dist)))


@_jit
def area_s(r_y):
    r = max(r_y, R_MIN)
    return math.pi * r * r


@_jit
def energy_weight_s(S, k_val, a_y, r_y):
    return S * k_val * a_y / area_s(r_y)


@_jit
def kernel_sample_s(ktab, ox, oy, r_y):
    """Aperture mask value at offset ``(ox, oy)`` from a source of radius ``r_y``.

    Nearest-neighbour lookup; the mask side spans the CoC diameter.  A 1x1
    table is the perfect circle (always 1).
    """
    m = ktab.shape[0]
    if m == 1:
        return ktab[0, 0]
    c = 0.5 * (m - 1)
    scale = c / max(r_y, R_MIN)
    i = int(math.floor(c + oy * scale + 0.5))
    j = int(math.floor(c + ox * scale + 0.5))
    if i < 0 or j < 0 or i >= m or j >= m:
        return 0.0
    return ktab[i, j]


@_jit
def leaky(deriv, leak):
    if deriv < leak:
        return leak
    return deriv


@_jit
def occlusion_soft_partials_s(d_x, d_y, c1, c2, c3, leak):
    """Return ``(O, dO/dd_x, dO/dd_y)``; the tanh slope is floored at ``leak``."""
    g = math.exp(-c1 * d_x * d_x)
    th = math.tanh(c2 * (d_y - d_x + c3))
    h = 0.5 * (1.0 - th)
    sech2 = leaky(1.0 - th * th, leak)
    o = 1.0 - g * h
    do_dy = 0.5 * c2 * g * sech2
    do_dx = 2.0 * c1 * d_x * g * h - do_dy
    return o, do_dx, do_dy


@_jit
def weight_soft_partials_s(dist, d_y, a_y, k_val, gamma, max_radius, s, g, m, leak):
    """Return ``(S, w, dS/dd_y, dw/dd_y, dw/da_y)`` for the soft scatter weight."""
    rho = gamma * abs(d_y)
    S = 1.0 / (1.0 + g * math.exp(-s * (rho + m - dist)))
    sig = leaky(S * (1.0 - S), leak)
    sgn = sign_s(d_y)
    dS = s * sig * gamma * sgn
    r = min(rho, max_radius)
    A = area_s(r)
    dA = 0.0
    if rho < max_radius and r > R_MIN:
        dA = 2.0 * math.pi * r * gamma * sgn
    w = S * k_val * a_y / A
    dw_dd = k_val * a_y * (dS * A - S * dA) / (A * A)
    dw_da = S * k_val / A
    return S, w, dS, dw_dd, dw_da


# ---------------------------------------------------------------------------
# array-level API

@numba.vectorize(cache=True)
def _occ_hard_u(d_x, d_y, eps_focal, eps_order):
    return occlusion_hard_s(d_x, d_y, eps_focal, eps_order)


@numba.vectorize(cache=True)
def _occ_soft_u(d_x, d_y, c1, c2, c3):
    return occlusion_soft_s(d_x, d_y, c1, c2, c3)


@numba.vectorize(cache=True)
def _scat_soft_u(dist, rho, s, g, m):
    return scatter_soft_s(dist, rho, s, g, m)


def _f(x):
    return np.asarray(x, dtype=np.float64)


def _dist(p_x, p_y):
    p_x, p_y = _f(p_x), _f(p_y)
    return np.sqrt(np.sum((p_y - p_x) ** 2, axis=-1))


def occlusion_hard(d_x, d_y, eps_focal=EPS_FOCAL, eps_order=EPS_ORDER):
    """On-focal occlusion: 0 when ``x`` is in focus and in front of ``y``."""
    return _occ_hard_u(_f(d_x), _f(d_y), eps_focal, eps_order)


def occlusion_soft(d_x, d_y, soft: SoftParams = SoftParams()):
    """Smooth on-focal occlusion in ``[0, 1]``.

    ``1 - exp(-c1 d_x^2) * (1 - tanh(c2 (d_y - d_x + c3))) / 2``
    """
    return _occ_soft_u(_f(d_x), _f(d_y), soft.occ_focal_sharpness,
                       soft.occ_step_sharpness, soft.occ_step_offset)


def scatter_hard(p_x, p_y, r_y, max_radius=np.inf):
    """1 when ``x`` lies strictly inside the clamped CoC of ``y`` (or ``x == y``)."""
    dist = _dist(p_x, p_y)
    inside = dist < np.minimum(_f(r_y), max_radius)
    return np.where(inside | (dist == 0), 1.0, 0.0)


def scatter_soft(p_x, p_y, d_y, gamma, soft: SoftParams = SoftParams()):
    """Logistic CoC membership ``1 / (1 + g exp(-s (gamma|d_y| + m - dist)))``."""
    return _scat_soft_u(_dist(p_x, p_y), gamma * np.abs(_f(d_y)), soft.scat_sharpness,
                        soft.scat_gain, soft.scat_margin)


def area(r_y):
    r = np.maximum(_f(r_y), R_MIN)
    return np.pi * r * r


def energy_weight(S, k_val, a_y, r_y):
    """Energy fraction ``S K a / (pi max(r, r_min)^2)``."""
    return _f(S) * _f(k_val) * _f(a_y) / area(r_y)


def kernel_value(kernel, offset, r_y):
    """Sample an :class:`~occbokeh.scene.ApertureKernel` at pixel ``offset = p_x - p_y``."""
    ox, oy = offset
    return kernel_sample_s(kernel.table(), float(ox), float(oy), float(r_y))


def visibility(alpha, p_x, r_x):
    """Mean alpha over the CoC disk of ``p_x`` (radius ``max(r_x, 0.5)``), clipped to the image.

    ``p_x`` is ``(row, col)``.
    """
    alpha = _f(alpha)
    h, w = alpha.shape
    rho = max(float(r_x), R_MIN)
    rows, cols = np.mgrid[0:h, 0:w]
    inside = (rows - p_x[0]) ** 2 + (cols - p_x[1]) ** 2 < rho * rho
    return float(alpha[inside].mean())


class KernelPartials(NamedTuple):
    S: float
    O: float
    w: float
    dS_ddy: float
    dO_ddx: float
    dO_ddy: float
    dw_ddy: float
    dw_day: float


def kernel_partials(d_x, d_y, p_x, p_y, a_y, gamma, soft: SoftParams = SoftParams(),
                    k_val=1.0, max_radius=np.inf, leak=None) -> KernelPartials:
    """Soft-mode kernel values and closed-form partials at one pixel pair.

    ``leak`` overrides ``soft.leak_slope``; pass ``0`` for exact derivatives.
    """
    if leak is None:
        leak = soft.leak_slope
    dist = float(_dist(p_x, p_y))
    o, do_dx, do_dy = occlusion_soft_partials_s(
        float(d_x), float(d_y), soft.occ_focal_sharpness, soft.occ_step_sharpness,
        soft.occ_step_offset, float(leak))
    S, w, dS, dw_dd, dw_da = weight_soft_partials_s(
        dist, float(d_y), float(a_y), float(k_val), float(gamma), float(max_radius),
        soft.scat_sharpness, soft.scat_gain, soft.scat_margin, float(leak))
    return KernelPartials(S, o, w, dS, do_dx, do_dy, dw_dd, dw_da)
