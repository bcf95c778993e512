import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssnlos import scenes
from ssnlos.scenes import NoiseSpec, SceneError, SurfelScene, apply_noise
from ssnlos.volume import ScanGrid, TransientVolume

GRID32 = ScanGrid(0.6, 32, 0.04, 32)


def test_t_plane_surfel_count_by_hand():
    # bar: 20 columns x 7 rows, stem: 6 columns x 13 rows on a 32 x 32 wall
    sc = scenes.t_plane(GRID32, 0.5)
    assert len(sc) == 20 * 7 + 6 * 13
    assert np.all(sc.positions[:, 2] == 0.5)
    assert np.all(sc.normals == [0.0, 0.0, 1.0])


def test_t_plane_rasterizes_into_one_depth_slice():
    vol = scenes.rasterize_scene(scenes.t_plane(GRID32, 0.5), GRID32)
    k = GRID32.voxel_index((0.0, 0.0, 0.5))[2]
    alb = vol.albedo()
    assert alb.sum() == pytest.approx(218)
    assert alb[:, :, k].sum() == pytest.approx(218)
    assert not np.any(vol.data[:2])
    # the bar sits above the stem
    assert alb[:, 22, k].sum() == 20 and alb[:, 10, k].sum() == 6


def test_t_mask_edges():
    w = 1.0
    assert scenes.t_mask(0.3, 0.2, w) and not scenes.t_mask(0.31, 0.2, w)
    assert scenes.t_mask(0.0, -0.3, w) and not scenes.t_mask(0.0, -0.31, w)
    assert not scenes.t_mask(0.2, 0.0, w)


def test_inclined_plane_geometry():
    sc = scenes.inclined_plane(GRID32, 0.45, 30.0)
    phi = np.deg2rad(30)
    np.testing.assert_allclose(sc.normals, np.tile([np.sin(phi), 0, np.cos(phi)], (len(sc), 1)))
    np.testing.assert_allclose(sc.positions[:, 2], 0.45 + sc.positions[:, 0] * np.tan(phi))
    assert np.max(np.abs(sc.positions[:, :2])) <= 0.18
    with pytest.raises(SceneError):
        scenes.inclined_plane(GRID32, 0.45, 90.0)


def test_sphere_cap_normals_point_to_wall():
    sc = scenes.sphere_cap(GRID32, 0.4, 0.2)
    assert np.all(sc.normals[:, 2] > 0)
    centre = np.array([0.0, 0.0, 0.6])
    # normals point from the surface toward the wall side, away from the centre
    radial = centre - sc.positions
    radial[:, :2] *= -1
    np.testing.assert_allclose(radial / 0.2, sc.normals * [1, 1, 1], atol=1e-12)
    with pytest.raises(SceneError):
        scenes.sphere_cap(GRID32, 0.4, 0.2, cap_radius=0.3)


def test_build_scene_names():
    for name in scenes.BUILDERS:
        assert len(scenes.build_scene(name, GRID32, 0.4)) > 0
    with pytest.raises(SceneError, match="unknown scene"):
        scenes.build_scene("teapot", GRID32)


def test_surfel_validation():
    with pytest.raises(SceneError, match="unit"):
        SurfelScene([[0, 0, 0.5]], [[0, 0, 2.0]], [1.0])
    with pytest.raises(SceneError):
        SurfelScene([[0, 0, 0.5]], [[0, 0, 1.0]], [-1.0])
    with pytest.raises(SceneError):
        SurfelScene([[0, 0, np.nan]], [[0, 0, 1.0]], [1.0])
    with pytest.raises(SceneError):
        SurfelScene([[0, 0, 0.5]], [[0, 0, 1.0]], [1.0, 2.0])


def test_frustum_error_names_offenders():
    sc = scenes.single_surfel((0.0, 0.0, 5.0))
    with pytest.raises(SceneError, match=r"#0 at \(0.0, 0.0, 5.0\)"):
        scenes.rasterize_scene(sc, GRID32)


def test_coincident_surfels_accumulate():
    sc = SurfelScene([[0.01, 0.01, 0.3]] * 2, [[0, 0, 1.0], [1.0, 0, 0]], [1.0, 2.0])
    vol = scenes.rasterize_scene(sc, GRID32)
    i, j, k = GRID32.voxel_index((0.01, 0.01, 0.3))
    np.testing.assert_allclose(vol.data[:, i, j, k], [2.0, 0.0, 1.0])


def test_scene_csv_round_trip(tmp_path):
    sc = scenes.sphere_cap(GRID32, 0.4, 0.2)
    sc.to_csv(tmp_path / "s.csv")
    back = SurfelScene.from_csv(tmp_path / "s.csv")
    assert back.positions.tobytes() == sc.positions.tobytes()
    assert back.normals.tobytes() == sc.normals.tobytes()
    assert (tmp_path / "s.csv").read_bytes().startswith(b"x,y,z,nx,ny,nz,albedo\n")
    scenes.empty_scene().to_csv(tmp_path / "e.csv")
    assert len(SurfelScene.from_csv(tmp_path / "e.csv")) == 0


def test_empty_scene_renders_zero():
    tau = scenes.render_transients(scenes.empty_scene(), GRID32)
    assert not np.any(tau.data)


def test_render_is_linear_in_albedo():
    sc = scenes.t_plane(GRID32, 0.5)
    a = scenes.render_transients(sc, GRID32).data
    b = scenes.render_transients(sc.scaled(2.5), GRID32).data
    np.testing.assert_allclose(b, 2.5 * a, rtol=1e-12)


def test_render_peak_at_round_trip_bin():
    g = ScanGrid(0.6, 8, 0.02, 64)
    lat = g.lateral_positions()
    sc = scenes.single_surfel((lat[3], lat[4], 0.4))
    tau = scenes.render_transients(sc, g).data
    assert np.argmax(tau[3, 4]) == 40
    assert tau[3, 4, 40] == pytest.approx(1 / 0.4**4)


# -- noise -------------------------------------------------------------------

def _flat(value=10.0, shape=(8, 8, 64)):
    g = ScanGrid(0.6, shape[0], 0.02, shape[2])
    return TransientVolume(g, np.full(g.transient_shape, value))


def test_noise_is_reproducible_and_seeded():
    tau = _flat()
    a = apply_noise(tau, NoiseSpec(50, 1.0, 7)).data
    b = apply_noise(tau, NoiseSpec(50, 1.0, 7)).data
    c = apply_noise(tau, NoiseSpec(50, 1.0, 8)).data
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_noise_matches_philox_stream():
    tau = _flat(2.0)
    out = apply_noise(tau, NoiseSpec(20, 0.5, 11)).data
    rng = np.random.Generator(np.random.Philox(11))
    counts = rng.poisson(np.full(tau.data.shape, 20.0)) + rng.normal(0, 0.5, tau.data.shape)
    np.testing.assert_array_equal(out, counts / 10.0)


def test_noise_moments():
    tau = _flat(4.0, (16, 16, 64))
    out = apply_noise(tau, NoiseSpec(100, 0.0, 3)).data
    # counts are Poisson(100) and s = 25: mean 4, variance 100 / 25**2
    assert out.mean() == pytest.approx(4.0, rel=0.01)
    assert out.var() == pytest.approx(100 / 25**2, rel=0.05)
    assert np.allclose(out * 25, np.round(out * 25))


def test_zero_input_gives_unit_scale_gaussian():
    out = apply_noise(_flat(0.0, (16, 16, 64)), NoiseSpec(50, 2.0, 5)).data
    assert out.mean() == pytest.approx(0.0, abs=0.1)
    assert out.std() == pytest.approx(2.0, rel=0.05)


def test_noise_rejects_negative_histograms():
    g = ScanGrid(0.6, 2, 0.02, 4)
    data = np.zeros(g.transient_shape)
    data[0, 0, 0] = -1.0
    with pytest.raises(ValueError):
        apply_noise(TransientVolume(g, data), NoiseSpec())


@pytest.mark.parametrize("kwargs", [dict(peak_photons=0), dict(gaussian_sigma=-1), dict(seed=-1)])
def test_noise_spec_validation(kwargs):
    with pytest.raises(ValueError):
        NoiseSpec(**kwargs)


@settings(max_examples=20, deadline=None)
@given(eta=st.floats(1.0, 1e4), seed=st.integers(0, 2**63))
def test_poisson_noise_is_unbiased(eta, seed):
    # the expected value of the noisy measurement is the clean one
    tau = _flat(1.0, (4, 4, 16))
    out = apply_noise(tau, NoiseSpec(eta, 0.0, seed)).data
    assert np.all(out >= 0)
    assert abs(out.mean() - 1.0) <= 6 / np.sqrt(eta * out.size)


def test_huge_photon_count_recovers_clean_histograms():
    g = ScanGrid(0.6, 8, 0.04, 16)
    clean = scenes.render_transients(scenes.t_plane(g, 0.3), g)
    out = apply_noise(clean, NoiseSpec(1e9, 0.0, 1)).data
    assert np.linalg.norm(out - clean.data) / np.linalg.norm(clean.data) < 1e-3


def test_noise_mean_over_seeds():
    g = ScanGrid(0.6, 4, 0.02, 32)
    t = np.arange(32)
    smooth = 1.0 + np.sin(t / 5.0) ** 2
    clean = TransientVolume(g, np.broadcast_to(smooth, g.transient_shape))
    mean = np.mean([apply_noise(clean, NoiseSpec(100, 1.0, s)).data for s in range(200)], axis=0)
    assert np.linalg.norm(mean - clean.data) / np.linalg.norm(clean.data) < 0.05
