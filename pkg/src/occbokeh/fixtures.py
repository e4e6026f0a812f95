"""Small deterministic fixtures shipped with the package.

``two_plane``: a textured image split into a near half (disparity 0.5) and an
in-focus half (0), plus its HARD-rendered defocus target.  The solver lens
is the same lens in SOFT mode.  ``gradcheck12``:
a random 12x12 single-layer SOFT scene.  Both are regenerated bit-for-bit by
:func:`write_two_plane` and :func:`write_gradcheck12`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import io as bio
from .render import render
from .scene import LayeredScene, LensConfig, Mode, make_layer

DATA_DIR = Path(__file__).resolve().parent / "data"
TWO_PLANE_DIR = DATA_DIR / "two_plane"
GRADCHECK_DIR = DATA_DIR / "gradcheck12"

TWO_PLANE = {"size": 64, "texture_sigma": 2.0, "seed": 0, "near": 0.5, "far": 0.0,
             "focus_disparity": 0.0, "blur_scale": 16.0, "max_radius": 10, "init": 0.25}


@dataclass
class TwoPlane:
    image: np.ndarray
    target: np.ndarray
    disparity: np.ndarray
    lens: LensConfig
    init: float


def _roundtrip_color(x):
    return bio.srgb_to_linear(np.round(bio.linear_to_srgb(x) * 255.0) / 255.0)


def two_plane_arrays() -> TwoPlane:
    cfg = TWO_PLANE
    n = cfg["size"]
    rng = np.random.default_rng(cfg["seed"])
    tex = np.stack([ndimage.gaussian_filter(rng.random((n, n)), cfg["texture_sigma"], mode="wrap")
                    for _ in range(3)], axis=-1)
    tex = _roundtrip_color((tex - tex.min()) / (tex.max() - tex.min()))
    disp = np.full((n, n), cfg["far"])
    disp[:, : n // 2] = cfg["near"]
    lens = LensConfig(cfg["focus_disparity"], cfg["blur_scale"], max_radius=cfg["max_radius"],
                      mode=Mode.SOFT)
    target = render(LayeredScene([make_layer(tex, 1.0, disp)]), lens.with_(mode=Mode.HARD)).bokeh
    target = target.astype(np.float32).astype(np.float64)
    return TwoPlane(tex, target, disp, lens, cfg["init"])


def write_two_plane(directory=TWO_PLANE_DIR) -> Path:
    directory = bio.ensure_dir(directory)
    fx = two_plane_arrays()
    bio.save_png(directory / "image.png", fx.image, "color")
    bio.save_pfm(directory / "target.pfm", fx.target)
    bio.save_pfm(directory / "disparity_gt.pfm", fx.disparity)
    conf = {"lens": bio.lens_to_dict(fx.lens), "init_disparity": fx.init}
    (directory / "dfd.json").write_text(json.dumps(conf, indent=2, sort_keys=True) + "\n")
    return directory


def load_two_plane(directory=TWO_PLANE_DIR) -> TwoPlane:
    directory = Path(directory)
    conf = json.loads((directory / "dfd.json").read_text())
    return TwoPlane(bio.load_png(directory / "image.png", "color"),
                    bio.load_pfm(directory / "target.pfm"),
                    bio.load_pfm(directory / "disparity_gt.pfm"),
                    bio.lens_from_dict(conf["lens"], directory),
                    float(conf["init_disparity"]))


def gradcheck12_scene():
    rng = np.random.default_rng(12)
    color = _roundtrip_color(rng.random((12, 12, 3)))
    disp = rng.uniform(-1.0, 1.0, (12, 12))
    disp = np.where(np.abs(disp) < 0.05, 0.05, disp).astype(np.float32).astype(np.float64)
    scene = LayeredScene([make_layer(color, 1.0, disp)])
    return scene, LensConfig(0.0, 4.0, mode=Mode.SOFT)


def write_gradcheck12(directory=GRADCHECK_DIR) -> Path:
    scene, lens = gradcheck12_scene()
    return bio.save_scene(scene, lens, directory)
