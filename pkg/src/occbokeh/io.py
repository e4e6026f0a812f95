"""PNG / PFM readers and writers, scene manifests.

Color PNGs are 8-bit sRGB, decoded to linear light with a 2.2 power law.
Alpha PNGs are 8-bit grayscale and stored linearly.  Disparity maps are PFM.

A scene manifest is JSON::

    {
      "lens": {"focus_disparity": 0.5, "blur_scale": 12.0, "mode": "soft",
               "kernel": "circle", "max_radius": null, "occlusion": true,
               "soft": {"leak_slope": 0.01}},
      "layers": [
        {"color": "l0_color.png", "alpha": "l0_alpha.png", "disparity": "l0_disp.pfm"},
        {"color": "l1_color.png", "alpha": "l1_alpha.png", "disparity": "l1_disp.pfm"}
      ]
    }

Layers are listed front to back; relative paths resolve against the
manifest's directory.  ``kernel`` is ``"circle"`` or a path to a grayscale
PNG mask.  Unknown keys are rejected.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import (ApertureKernel, BokehError, Layer, LayeredScene, LensConfig, Mode,
                    SoftParams, validate_scene)

GAMMA = 2.2

_LENS_KEYS = {"focus_disparity", "blur_scale", "max_radius", "mode", "kernel", "soft",
              "occlusion", "radius_cap"}
_LAYER_KEYS = ("color", "alpha", "disparity")
_SOFT_KEYS = {f.name for f in fields(SoftParams)}


def srgb_to_linear(x):
    return np.power(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0), GAMMA)


def linear_to_srgb(x):
    return np.power(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0), 1.0 / GAMMA)


def _quantize(x):
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


# -- PNG ---------------------------------------------------------------------

def load_png(path, kind: str = "color") -> np.ndarray:
    """Read an 8-bit PNG.

    ``kind="color"`` expects RGB and returns linear ``(H, W, 3)``;
    ``kind="alpha"`` / ``"gray"`` expects single-channel and returns
    ``(H, W)`` in ``[0, 1]`` without gamma.
    """
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise BokehError("DECODE_ERROR", f"{path}: {exc}") from exc
    if arr.dtype != np.uint8:
        raise BokehError("DECODE_ERROR", f"{path}: expected 8-bit samples, got {mode}")
    if kind == "color":
        if mode != "RGB":
            raise BokehError("DECODE_ERROR", f"{path}: expected RGB, got {mode}")
        return srgb_to_linear(arr / 255.0)
    if kind in ("alpha", "gray"):
        if mode != "L":
            raise BokehError("DECODE_ERROR", f"{path}: expected grayscale, got {mode}")
        return arr / 255.0
    raise ValueError(f"unknown PNG kind {kind!r}")


def save_png(path, data, kind: str = "color") -> None:
    """Write ``data`` as an 8-bit PNG (sRGB-encoded for ``kind="color"``)."""
    data = np.asarray(data, dtype=np.float64)
    if kind == "color":
        if data.ndim != 3 or data.shape[2] != 3:
            raise BokehError("SHAPE_MISMATCH", "color PNG needs (H, W, 3)")
        Image.fromarray(_quantize(linear_to_srgb(data)), "RGB").save(path, optimize=False)
    elif kind in ("alpha", "gray"):
        if data.ndim != 2:
            raise BokehError("SHAPE_MISMATCH", "grayscale PNG needs (H, W)")
        Image.fromarray(_quantize(data), "L").save(path, optimize=False)
    else:
        raise ValueError(f"unknown PNG kind {kind!r}")


# -- PFM ---------------------------------------------------------------------

def load_pfm(path) -> np.ndarray:
    """Read a PFM file; returns float64 ``(H, W)`` or ``(H, W, 3)`` top row first."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise BokehError("DECODE_ERROR", f"{path}: {exc}") from exc
    m = re.match(rb"(PF|Pf)\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", raw)
    if m is None:
        raise BokehError("DECODE_ERROR", f"{path}: bad PFM header")
    channels = 3 if m.group(1) == b"PF" else 1
    width, height = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    if scale == 0:
        raise BokehError("DECODE_ERROR", f"{path}: zero PFM scale")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    body = raw[m.end():]
    if len(body) < 4 * count:
        raise BokehError("DECODE_ERROR", f"{path}: truncated PFM data")
    data = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.ascontiguousarray(data.reshape(shape)[::-1])


def save_pfm(path, data) -> None:
    """Write a little-endian PFM (scale -1) with bottom-to-top rows."""
    data = np.asarray(data)
    if data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    elif data.ndim == 2:
        tag = b"Pf"
    else:
        raise BokehError("SHAPE_MISMATCH", "PFM needs (H, W) or (H, W, 3)")
    h, w = data.shape[:2]
    header = tag + b"\n%d %d\n-1.0\n" % (w, h)
    body = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def load_image(path, kind: str = "color") -> np.ndarray:
    """Dispatch on extension: ``.pfm`` as float map, anything else as PNG."""
    if str(path).lower().endswith(".pfm"):
        return load_pfm(path)
    return load_png(path, kind)


def save_image(path, data, kind: str = "color") -> None:
    if str(path).lower().endswith(".pfm"):
        save_pfm(path, data)
    else:
        save_png(path, data, kind)


# -- manifests -----------------------------------------------------------------

def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise BokehError("PARSE_ERROR", f"{where}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise BokehError("PARSE_ERROR", f"{where}: unknown keys {sorted(unknown)}")


def lens_from_dict(d: dict, base: Path = Path(".")) -> LensConfig:
    _check_keys(d, _LENS_KEYS, "lens")
    for key in ("focus_disparity", "blur_scale"):
        if key not in d:
            raise BokehError("PARSE_ERROR", f"lens: missing {key!r}")
    soft = d.get("soft", {}) or {}
    _check_keys(soft, _SOFT_KEYS, "lens.soft")
    kern = d.get("kernel", "circle")
    if kern == "circle":
        kernel = ApertureKernel.circle()
    else:
        kernel = ApertureKernel.from_mask(load_png(base / kern, "gray"))
    try:
        return LensConfig(
            focus_disparity=float(d["focus_disparity"]),
            blur_scale=float(d["blur_scale"]),
            max_radius=None if d.get("max_radius") is None else int(d["max_radius"]),
            kernel=kernel,
            soft=SoftParams(**{k: float(v) for k, v in soft.items()}),
            mode=Mode(d.get("mode", "soft")),
            occlusion=bool(d.get("occlusion", True)),
            radius_cap=int(d.get("radius_cap", LensConfig.radius_cap)),
        )
    except (TypeError, ValueError) as exc:
        raise BokehError("PARSE_ERROR", f"lens: {exc}") from exc


def lens_to_dict(lens: LensConfig, kernel_path: str = "circle") -> dict:
    defaults = SoftParams()
    soft = {k: v for k, v in asdict(lens.soft).items() if v != getattr(defaults, k)}
    return {
        "focus_disparity": lens.focus_disparity,
        "blur_scale": lens.blur_scale,
        "max_radius": lens.max_radius,
        "mode": lens.mode.value,
        "kernel": kernel_path,
        "occlusion": lens.occlusion,
        "radius_cap": lens.radius_cap,
        "soft": soft,
    }


def read_manifest(path) -> dict:
    try:
        with open(path) as fh:
            man = json.load(fh)
    except OSError as exc:
        raise BokehError("PARSE_ERROR", f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BokehError("PARSE_ERROR", f"{path}: {exc}") from exc
    _check_keys(man, {"lens", "layers"}, "manifest")
    if "lens" not in man:
        raise BokehError("PARSE_ERROR", "manifest: missing 'lens'")
    layers = man.get("layers")
    if not isinstance(layers, list) or not layers:
        raise BokehError("PARSE_ERROR", "manifest: 'layers' must be a non-empty list")
    for i, entry in enumerate(layers):
        _check_keys(entry, _LAYER_KEYS, f"layers[{i}]")
        for key in _LAYER_KEYS:
            if key not in entry:
                raise BokehError("PARSE_ERROR", f"layers[{i}]: missing {key!r}")
    return man


def load_scene(path, validate: bool = True):
    """Load ``(LayeredScene, LensConfig)`` from a manifest file."""
    path = Path(path)
    man = read_manifest(path)
    base = path.parent
    lens = lens_from_dict(man["lens"], base)
    layers = []
    for entry in man["layers"]:
        color = load_png(base / entry["color"], "color")
        alpha = load_png(base / entry["alpha"], "alpha")
        disp = load_pfm(base / entry["disparity"])
        if disp.ndim != 2:
            raise BokehError("DECODE_ERROR", f"{entry['disparity']}: expected 1-channel PFM")
        layers.append(Layer(color, alpha, disp))
    scene = LayeredScene(layers)
    if validate:
        try:
            validate_scene(scene)
        except BokehError as exc:
            raise BokehError("SCENE_INVALID", str(exc)) from exc
    return scene, lens


def save_scene(scene: LayeredScene, lens: LensConfig, directory, name: str = "scene.json") -> Path:
    """Write layer assets plus a manifest into ``directory``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, layer in enumerate(scene.layers):
        entry = {"color": f"layer{i}_color.png", "alpha": f"layer{i}_alpha.png",
                 "disparity": f"layer{i}_disparity.pfm"}
        save_png(directory / entry["color"], layer.color, "color")
        save_png(directory / entry["alpha"], layer.alpha, "alpha")
        save_pfm(directory / entry["disparity"], layer.disparity)
        entries.append(entry)
    kernel_path = "circle"
    if lens.kernel.kind == "mask":
        kernel_path = "kernel.png"
        save_png(directory / kernel_path, lens.kernel.mask, "gray")
    man = {"lens": lens_to_dict(lens, kernel_path), "layers": entries}
    out = directory / name
    out.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return out


def write_csv(path, header, rows) -> None:
    """Plain comma-separated text with ``repr``-exact floats."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
