"""Image quality metrics: RMSE, scale-invariant RMSE, PSNR, SSIM, ZNCC."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy import ndimage

from .scene import BokehError

PSNR_IDENTICAL = 99.0
C1 = 0.01 ** 2
C2 = 0.03 ** 2
METRIC_NAMES = ("rmse", "rmse_s", "ssim", "psnr", "zncc")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise BokehError("SHAPE_MISMATCH", f"{a.shape} vs {b.shape}")
    return a, b


def rmse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_s(pred, ref) -> float:
    """RMSE after the least-squares scale ``s* = <pred, ref> / <pred, pred>`` of ``pred``."""
    a, b = _pair(pred, ref)
    aa = float(np.sum(a * a))
    if aa == 0.0:
        raise BokehError("ZERO_VARIANCE", "rmse_s of an all-zero prediction")
    return rmse(a * (float(np.sum(a * b)) / aa), b)


def psnr(pred, ref) -> float:
    """PSNR in dB for unit peak; identical images give ``PSNR_IDENTICAL``."""
    e = rmse(pred, ref)
    if e == 0.0:
        return PSNR_IDENTICAL
    return 20.0 * math.log10(1.0 / e)


def zncc(a, b) -> float:
    a, b = _pair(a, b)
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        raise BokehError("ZERO_VARIANCE", "zncc of a constant image")
    return float(a @ b) / (na * nb)


def gaussian_window(win: int) -> np.ndarray:
    """1-D normalised Gaussian of odd length ``win``; sigma scales as ``1.5 * win / 11``."""
    if win < 3 or win % 2 == 0:
        raise BokehError("INVALID_PARAM", f"SSIM window must be odd and >= 3, got {win}")
    sigma = 1.5 * win / 11.0
    x = np.arange(win) - (win - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _as_stack(img):
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def _filt_valid(img, k):
    r = (len(k) - 1) // 2
    out = ndimage.correlate1d(img, k, axis=0, mode="constant")
    out = ndimage.correlate1d(out, k, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def _filt_valid_adjoint(g, k, shape):
    r = (len(k) - 1) // 2
    full = np.zeros(shape)
    full[r:shape[0] - r, r:shape[1] - r] = g
    out = ndimage.correlate1d(full, k[::-1], axis=0, mode="constant")
    return ndimage.correlate1d(out, k[::-1], axis=1, mode="constant")


def ssim_and_grad(x, y, win: int = 11, need_grad: bool = True):
    """Mean SSIM over the valid region (and channels) and its gradient w.r.t. ``y``.

    Gaussian-weighted local statistics with population covariance and
    constants ``C1 = 0.01^2``, ``C2 = 0.03^2`` for unit dynamic range.
    """
    x, y = _pair(x, y)
    shape = x.shape
    x = _as_stack(x)
    y = _as_stack(y)
    h, w, nc = x.shape
    if win > min(h, w):
        raise BokehError("WINDOW_TOO_LARGE", f"window {win} exceeds image {h}x{w}")
    k = gaussian_window(win)
    total = 0.0
    grad = np.zeros_like(y) if need_grad else None
    n_map = None
    for c in range(nc):
        xc, yc = x[..., c], y[..., c]
        mx = _filt_valid(xc, k)
        my = _filt_valid(yc, k)
        sxx = _filt_valid(xc * xc, k) - mx * mx
        syy = _filt_valid(yc * yc, k) - my * my
        sxy = _filt_valid(xc * yc, k) - mx * my
        a1 = 2.0 * mx * my + C1
        a2 = 2.0 * sxy + C2
        b1 = mx * mx + my * my + C1
        b2 = sxx + syy + C2
        smap = (a1 * a2) / (b1 * b2)
        n_map = smap.size
        total += smap.sum()
        if need_grad:
            # partials of the map w.r.t. the local statistics of y
            d_my = (2.0 * mx * a2) / (b1 * b2) - smap * 2.0 * my / b1
            d_syy = -smap / b2
            d_sxy = 2.0 * a1 / (b1 * b2)
            # sigma_yy = E[y^2] - my^2, sigma_xy = E[xy] - mx my
            g_mean = d_my - 2.0 * my * d_syy - mx * d_sxy
            g = _filt_valid_adjoint(g_mean, k, (h, w))
            g += 2.0 * yc * _filt_valid_adjoint(d_syy, k, (h, w))
            g += xc * _filt_valid_adjoint(d_sxy, k, (h, w))
            grad[..., c] = g
    denom = n_map * nc
    value = total / denom
    if need_grad:
        grad = (grad / denom).reshape(shape)
    return value, grad


def ssim(a, b, win: int = 11) -> float:
    return ssim_and_grad(a, b, win, need_grad=False)[0]


def evaluate(pred, ref) -> Dict[str, float]:
    """All five metrics with ``pred`` as the first argument."""
    return {"rmse": rmse(pred, ref), "rmse_s": rmse_s(pred, ref), "ssim": ssim(pred, ref),
            "psnr": psnr(pred, ref), "zncc": zncc(pred, ref)}


@dataclass
class MetricReport:
    """Per-image metric rows plus mean and std aggregates."""

    rows: List[dict] = field(default_factory=list)

    def add(self, name: str, pred, ref) -> dict:
        row = {"name": name, **evaluate(pred, ref)}
        self.rows.append(row)
        return row

    def aggregate(self) -> Dict[str, tuple]:
        out = {}
        for m in METRIC_NAMES:
            vals = np.array([r[m] for r in self.rows], dtype=np.float64)
            out[m] = (float(vals.mean()), float(vals.std()))
        return out

    def to_text(self) -> str:
        """Tab-separated table: header, one row per image, then ``mean`` and ``std`` rows."""
        lines = ["\t".join(("name",) + METRIC_NAMES)]
        for r in self.rows:
            lines.append("\t".join([r["name"]] + [f"{r[m]:.6f}" for m in METRIC_NAMES]))
        agg = self.aggregate()
        lines.append("\t".join(["mean"] + [f"{agg[m][0]:.6f}" for m in METRIC_NAMES]))
        lines.append("\t".join(["std"] + [f"{agg[m][1]:.6f}" for m in METRIC_NAMES]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        lines = [l for l in text.splitlines() if l.strip()]
        header = lines[0].split("\t")
        rows = []
        for line in lines[1:]:
            parts = line.split("\t")
            if parts[0] in ("mean", "std"):
                continue
            rows.append({"name": parts[0], **{k: float(v) for k, v in zip(header[1:], parts[1:])}})
        return cls(rows)
