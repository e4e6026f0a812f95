import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occbokeh.scene import (ApertureKernel, BokehError, Layer, LayeredScene, LensConfig,
                            SoftParams, coc_radius, make_layer, relative_disparity,
                            resolve_lens, validate_scene)


def _two_layer(size=8):
    rng = np.random.default_rng(0)
    front = make_layer(rng.random((size, size, 3)), rng.random((size, size)), 0.5)
    back = make_layer(rng.random((size, size, 3)), 1.0, 0.1)
    return LayeredScene([front, back])


def _code(fn):
    with pytest.raises(BokehError) as info:
        fn()
    return info.value.code


def test_valid_two_layer_scene():
    validate_scene(_two_layer())


def test_partially_transparent_back_layer_rejected():
    scene = _two_layer()
    back = scene.layers[1]
    alpha = back.alpha.copy()
    alpha[3, 3] = 0.5
    bad = LayeredScene([scene.layers[0], Layer(back.color, alpha, back.disparity)])
    assert _code(lambda: validate_scene(bad)) == "BACK_LAYER_NOT_OPAQUE"


def test_mismatched_disparity_size_rejected():
    layer = Layer(np.zeros((64, 64, 3)), np.ones((64, 64)), np.zeros((32, 32)))
    assert _code(lambda: validate_scene(LayeredScene([layer]))) == "DIMENSION_MISMATCH"


def test_empty_scene_rejected():
    assert _code(lambda: validate_scene(LayeredScene([]))) == "DIMENSION_MISMATCH"


# A scene is generated from a few independent switches; the expected verdict
# is computed from the switches alone, never from the validator.
@settings(max_examples=200, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2 ** 31), st.booleans(), st.booleans(), st.booleans(),
       st.booleans(), st.booleans())
def test_validate_accepts_iff_invariants_hold(n, seed, bad_size, bad_alpha, nan_disp,
                                              translucent_back, bad_color):
    rng = np.random.default_rng(seed)
    h = w = 6
    layers = []
    broken_layer = rng.integers(0, n)
    for l in range(n):
        color = rng.random((h, w, 3))
        alpha = np.ones((h, w)) if l == n - 1 else rng.random((h, w))
        disp = rng.normal(size=(h, w))
        if l == broken_layer:
            if bad_size:
                disp = disp[:, :-1]
            if bad_alpha:
                alpha = alpha.copy()
                alpha[0, 0] = 1.5
            if nan_disp:
                disp = disp.copy()
                disp[-1, -1] = np.nan
            if bad_color:
                color[1, 1, 0] = -0.2
        if l == n - 1 and translucent_back:
            alpha = alpha.copy()
            alpha[2, 2] = 0.25
        layers.append(Layer(color, alpha, disp))
    scene = LayeredScene(layers)
    expect_ok = not (bad_size or bad_alpha or nan_disp or translucent_back or bad_color)
    try:
        validate_scene(scene)
        ok = True
    except BokehError:
        ok = False
    assert ok == expect_ok


@pytest.mark.parametrize("d, d_f, expected", [(1.0, 1.0, 0.0), (0.5, 1.0, -0.5), (2.0, 0.5, 1.5)])
def test_relative_disparity(d, d_f, expected):
    assert relative_disparity(d, LensConfig(focus_disparity=d_f)) == expected


@pytest.mark.parametrize("gamma, d_rel, R, expected", [(10, 0.0, 100, 0.0), (10, 0.5, 100, 5.0),
                                                         (10, 50.0, 21, 21.0)])
def test_coc_radius(gamma, d_rel, R, expected):
    assert coc_radius(d_rel, LensConfig(blur_scale=gamma, max_radius=R)) == expected


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 30), st.integers(1, 64))
def test_coc_radius_even_and_monotone(a, b, gamma, R):
    lens = LensConfig(blur_scale=gamma, max_radius=R)
    assert coc_radius(a, lens) == coc_radius(-a, lens)
    lo, hi = sorted((abs(a), abs(b)))
    assert coc_radius(lo, lens) <= coc_radius(hi, lens)
    r = coc_radius(a, lens)
    assert (r == 0) == (a == 0 or gamma == 0 or gamma * abs(a) == 0)


def test_resolve_lens_default_radius():
    scene = LayeredScene([make_layer(np.zeros((4, 4, 3)), 1.0, 1.25)])
    lens = LensConfig(focus_disparity=0.0, blur_scale=10.0)
    assert resolve_lens(scene, lens).max_radius == 14
    assert resolve_lens(scene, lens.with_(blur_scale=1000.0)).max_radius == 64
    assert resolve_lens(scene, lens.with_(max_radius=3)).max_radius == 3


def test_lens_parameter_validation():
    with pytest.raises(BokehError):
        LensConfig(blur_scale=-1.0)
    with pytest.raises(BokehError):
        LensConfig(max_radius=0)
    with pytest.raises(BokehError):
        LensConfig(focus_disparity=float("nan"))
    with pytest.raises(BokehError):
        SoftParams(scat_gain=0.0)
    with pytest.raises(BokehError):
        SoftParams(leak_slope=-0.1)
    SoftParams(leak_slope=0.0)


def test_aperture_kernel_validation():
    with pytest.raises(BokehError):
        ApertureKernel("circle", np.ones((3, 3)))
    with pytest.raises(BokehError):
        ApertureKernel.from_mask(np.ones((3, 4)))
    with pytest.raises(BokehError):
        ApertureKernel.from_mask(np.full((3, 3), 2.0))
    assert ApertureKernel.from_mask(np.eye(3)).table().shape == (3, 3)


def test_make_layer_broadcasts_scalars():
    layer = make_layer(np.zeros((3, 5, 3)), 0.5, 2.0)
    assert layer.alpha.shape == (3, 5) and np.all(layer.alpha == 0.5)
    assert np.all(layer.disparity == 2.0)
