import math

import numpy as np
import pytest

from occbokeh import io as bio
from occbokeh import oracle as O
from occbokeh.metrics import rmse
from occbokeh.scene import BokehError, validate_scene

N = 32


def _cfg(**kw):
    base = dict(sensor_resolution=(N, N), samples_per_pixel=64)
    base.update(kw)
    return O.OracleLensConfig(**base)


def _focused(cfg, distance):
    return cfg.with_(image_plane_distance=O.image_distance_for_focus(cfg, distance))


def _two_boards(near=900.0, far=3000.0, seed=3):
    fc, fa = O.texture_shape((N, N), seed)
    bc, ba = O.texture_background((N, N), seed + 1)
    return O.BillboardScene([O.Billboard(fc, fa, near), O.Billboard(bc, ba, far)])


# -- closed forms ---------------------------------------------------------------

@pytest.mark.parametrize("rc, ra, expected", [(1.0, 0.0, 2.0), (5.0, 3.0, 8.0)])
def test_lens_thickness_exact(rc, ra, expected):
    assert O.lens_thickness(_cfg(sphere_radius=rc, aperture_radius=ra)) == expected


def test_lens_thickness_and_focal_length_unit_sphere():
    cfg = _cfg(sphere_radius=1.0, aperture_radius=0.3)
    d = O.lens_thickness(cfg)
    assert d == pytest.approx(1.9079, abs=1e-4)
    assert O.focal_length(cfg) == pytest.approx(1 / (0.5 * (2 + 0.5 * d / 1.5)), rel=1e-14)
    assert O.focal_length(cfg) == pytest.approx(0.7587, abs=1e-4)


def test_focal_length_limits_and_scaling():
    assert O.focal_length(_cfg(refractive_index=1 + 1e-9)) > 1e10
    for fn in (O.focal_length, O.effective_focal_length):
        a = fn(_cfg(sphere_radius=3.0, aperture_radius=1.0))
        b = fn(_cfg(sphere_radius=6.0, aperture_radius=2.0))
        assert b == pytest.approx(2 * a, rel=1e-12)


def test_effective_focal_length_thin_limit():
    # with a vanishing cap the thick-lens focal length tends to R / (2 (n - 1))
    cfg = _cfg(sphere_radius=400.0, aperture_radius=1e-3)
    assert O.effective_focal_length(cfg) == pytest.approx(400.0, rel=1e-9)


def test_geometry_validation():
    for kw in [dict(aperture_radius=500.0), dict(refractive_index=1.0), dict(fov=0.0),
               dict(samples_per_pixel=0), dict(aperture_radius=-1.0)]:
        with pytest.raises(BokehError) as info:
            _cfg(**kw)
        assert info.value.code == "GEOMETRY_INVALID"


def test_conjugate_examples():
    assert O.conjugate(1.0, 1.5) == pytest.approx(3.0)
    assert O.conjugate(2.5, 5.0) == pytest.approx(5.0)
    assert O.conjugate(1.0, 1.0 + 1e-9) > 1e8
    with pytest.raises(BokehError) as info:
        O.conjugate(1.0, 0.9)
    assert info.value.code == "NOT_FOCUSABLE"


def test_focus_distance_unit_magnification():
    cfg = _cfg()
    f = O.effective_focal_length(cfg)
    dp = O.principal_offset(cfg)
    unit = cfg.with_(image_plane_distance=2 * f + dp)
    assert O.focus_distance(unit) == pytest.approx(2 * f + dp, rel=1e-12)
    with pytest.raises(BokehError) as info:
        O.focus_distance(cfg.with_(image_plane_distance=f * 0.5))
    assert info.value.code == "NOT_FOCUSABLE"


def test_coc_radius_substitution():
    f = 1.0
    obj = 1.0 / (1.0 / f - 1.0 / 2.5)
    assert O.coc_radius(f, 0.5, 2.0, obj) == pytest.approx(0.1, rel=1e-12)


def test_physical_coc_zero_at_focus_and_monotone():
    cfg = _focused(_cfg(), 1500.0)
    assert O.coc_radius_physical(cfg, O.focus_distance(cfg)) == pytest.approx(0.0, abs=1e-9)
    nearer = [O.coc_radius_physical(cfg, d) for d in (1400, 1200, 1000, 800)]
    farther = [O.coc_radius_physical(cfg, d) for d in (1600, 2000, 4000, 9000)]
    assert np.all(np.diff(nearer) > 0) and np.all(np.diff(farther) > 0)


def test_engine_blur_scale_matches_physical_coc():
    # engine radius gamma * |1/D - 1/D_f| equals the sensor CoC in pixels
    cfg = _focused(_cfg(), 1500.0)
    lens = O.engine_lens(cfg)
    pixel = 2 * (cfg.image_plane_distance - O.principal_offset(cfg)) * math.tan(
        math.radians(cfg.fov / 2)) / cfg.width
    for d in (900.0, 2500.0):
        engine_px = lens.blur_scale * abs(O.disparity_of(cfg, d) - lens.focus_disparity)
        assert engine_px == pytest.approx(O.coc_radius_physical(cfg, d) / pixel, rel=1e-9)


# -- tracer ----------------------------------------------------------------------

def test_constant_billboard_gives_constant_image():
    c = np.array([0.3, 0.6, 0.1])
    board = O.Billboard(np.tile(c, (N, N, 1)), np.ones((N, N)), 2000.0)
    img = O.trace_image(_focused(_cfg(samples_per_pixel=16), 1000.0), O.BillboardScene([board]))
    np.testing.assert_allclose(img, np.broadcast_to(c, img.shape), atol=1e-12)


def test_in_focus_billboard_is_sharp_in_central_field():
    col, a = O.texture_background((N, N), 5)
    scene = O.BillboardScene([O.Billboard(col, a, 1200.0)])
    cfg = _focused(_cfg(samples_per_pixel=256), 1200.0)
    diff = np.abs(O.trace_image(cfg, scene) - O.pinhole_image(scene))
    q = N // 4
    assert diff[q:N - q, q:N - q].max() < 2 / 255


def test_in_focus_billboard_is_sharp_at_slow_aperture():
    col, a = O.texture_background((N, N), 5)
    scene = O.BillboardScene([O.Billboard(col, a, 1200.0)])
    cfg = _focused(_cfg(samples_per_pixel=256, aperture_radius=15.0), 1200.0)
    assert np.abs(O.trace_image(cfg, scene) - O.pinhole_image(scene)).max() < 2 / 255


def test_vanishing_aperture_is_pinhole():
    scene = _two_boards()
    cfg = _focused(_cfg(samples_per_pixel=4, aperture_radius=1e-4), 1500.0)
    assert np.abs(O.trace_image(cfg, scene) - O.pinhole_image(scene)).max() < 1e-5


def test_mirror_symmetry():
    scene = _two_boards()
    mirrored = O.BillboardScene([O.Billboard(b.color[:, ::-1], b.alpha[:, ::-1], b.distance)
                                 for b in scene.billboards])
    cfg = _focused(_cfg(samples_per_pixel=512), 1500.0)
    a = O.trace_image(cfg, scene)
    b = O.trace_image(cfg, mirrored)
    assert rmse(a[:, ::-1], b) < 1 / 255


@pytest.mark.parametrize("distance", [700.0, 900.0, 2000.0, 5000.0])
def test_paraxial_blur_radius(distance):
    cfg = _focused(_cfg(), 1200.0)
    assert cfg.aperture_radius / cfg.sphere_radius <= 0.1
    pts = O.trace_point_spread(cfg, distance, 4096)
    assert len(pts) > 4000
    traced = float(np.sqrt((pts ** 2).sum(axis=1)).max())
    assert traced == pytest.approx(O.coc_radius_physical(cfg, distance), rel=0.10)


def test_noise_at_least_halves_when_samples_quadruple():
    scene = _two_boards()
    noise = []
    for spp in (16, 64, 256):
        cfg = _focused(_cfg(samples_per_pixel=spp), 1500.0)
        a = O.trace_image(cfg.with_(rng_seed=1), scene)
        b = O.trace_image(cfg.with_(rng_seed=2), scene)
        noise.append(rmse(a, b) / math.sqrt(2))
    assert noise[0] >= 2 * noise[1] and noise[1] >= 2 * noise[2]


def test_trace_pixel_matches_image_and_is_deterministic():
    scene = _two_boards()
    cfg = _focused(_cfg(samples_per_pixel=32), 1500.0)
    img = O.trace_image(cfg, scene)
    assert img.tobytes() == O.trace_image(cfg, scene).tobytes()
    for px in [(0, 0), (5, 17), (N - 1, N - 1)]:
        assert np.array_equal(O.trace_pixel(cfg, scene, px), img[px])
    assert not np.array_equal(O.trace_image(cfg.with_(rng_seed=9), scene), img)


def test_billboard_scene_validation():
    scene = _two_boards()
    cfg = _cfg()
    boards = scene.billboards
    with pytest.raises(BokehError):
        O.BillboardScene([boards[1], boards[0]]).validate(cfg)
    translucent = O.Billboard(boards[1].color, boards[1].alpha * 0.5, 3000.0)
    with pytest.raises(BokehError) as info:
        O.BillboardScene([boards[0], translucent]).validate(cfg)
    assert info.value.code == "BACK_LAYER_NOT_OPAQUE"
    with pytest.raises(BokehError):
        O.BillboardScene([O.Billboard(boards[1].color, boards[1].alpha, 1.0)]).validate(cfg)
    with pytest.raises(BokehError) as info:
        scene.validate(_cfg(sensor_resolution=(16, 16)))
    assert info.value.code == "DIMENSION_MISMATCH"


# -- datasets ----------------------------------------------------------------------

def test_flat_scene_takes_front_disparity_where_opaque():
    scene = O.engine_scene(_cfg(), _two_boards())
    flat = O.flat_scene(scene)
    assert flat.n == 1
    front = scene.layers[0]
    expect = np.where(front.alpha > 0.5, front.disparity, scene.layers[1].disparity)
    np.testing.assert_array_equal(flat.layers[0].disparity, expect)
    validate_scene(flat)


def test_three_scene_benchmark_is_complete_and_reproducible(tmp_path):
    recipe = O.default_recipe(n_scenes=3, resolution=N, spp=16)
    a = O.generate_benchmark(recipe, tmp_path / "a")
    b = O.generate_benchmark(recipe, tmp_path / "b")
    assert [d.name for d in a] == ["scene000", "scene001", "scene002"]
    for da, db in zip(a, b):
        names = sorted(p.name for p in da.iterdir())
        assert {"scene.json", "all_in_focus.png", "bokeh_gt.png", "bokeh_gt.pfm",
                "provenance.json"} <= set(names)
        for name in names:
            assert (da / name).read_bytes() == (db / name).read_bytes(), name
        scene, lens = bio.load_scene(da / "scene.json")
        assert scene.n == 2
        assert O.load_ground_truth(da).shape == (N, N, 3)


def test_recipe_rejects_unknown_keys():
    recipe = O.default_recipe(n_scenes=1, resolution=N, spp=4)
    recipe["scenes"][0]["billboards"][0]["depth"] = 3
    with pytest.raises(BokehError) as info:
        O.generate_benchmark(recipe, "/nonexistent-unused")
    assert info.value.code == "PARSE_ERROR"
