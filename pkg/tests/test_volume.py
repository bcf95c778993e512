import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssnlos.volume import (
    DecodeError,
    DimensionMismatchError,
    DirectionalAlbedoVolume,
    ScanGrid,
    TransientVolume,
    VolumeError,
    VolumeMeta,
    decode_volume,
    downsample_transient,
    encode_volume,
    meta_path,
    read_volume,
    write_volume,
)


@pytest.fixture
def grid():
    return ScanGrid(0.6, 4, 0.05, 8)


def test_grid_derived_quantities():
    g = ScanGrid(0.6, 64, 0.0025, 512, light_speed=3e8)
    assert g.depth_res == 512
    assert g.max_depth == pytest.approx(0.64)
    assert g.depth_pitch == pytest.approx(0.00125)
    assert g.lateral_pitch == pytest.approx(0.6 / 64)
    assert g.bin_seconds == pytest.approx(0.0025 / 3e8)


def test_lateral_positions_are_cell_centred():
    g = ScanGrid(1.0, 4, 0.1, 4)
    np.testing.assert_allclose(g.lateral_positions(), [-0.375, -0.125, 0.125, 0.375])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(wall_width_m=0.0, scan_res=4, bin_width=0.1, num_bins=8),
        dict(wall_width_m=1.0, scan_res=1, bin_width=0.1, num_bins=8),
        dict(wall_width_m=1.0, scan_res=4, bin_width=-0.1, num_bins=8),
        dict(wall_width_m=1.0, scan_res=4, bin_width=0.1, num_bins=1),
        dict(wall_width_m=1.0, scan_res=4, bin_width=0.1, num_bins=8, depth_res=1),
        dict(wall_width_m=1.0, scan_res=4, bin_width=0.1, num_bins=8, light_speed=0.0),
        dict(wall_width_m=float("nan"), scan_res=4, bin_width=0.1, num_bins=8),
    ],
)
def test_grid_rejects_invalid_fields(kwargs):
    with pytest.raises(VolumeError):
        ScanGrid(**kwargs)


def test_voxel_index_and_contains(grid):
    # lateral pitch 0.15, depth pitch 0.025
    assert grid.voxel_index((-0.3, 0.29, 0.1)) == (0, 3, 4)
    assert grid.contains((0, 3, 4))
    assert not grid.contains((4, 0, 0))
    assert not grid.contains((0, 0, 8))


def test_containers_check_shape_and_finiteness(grid):
    with pytest.raises(DimensionMismatchError):
        TransientVolume(grid, np.zeros((4, 4, 7)))
    with pytest.raises(DimensionMismatchError):
        DirectionalAlbedoVolume(grid, np.zeros((4, 4, 8)))
    bad = np.zeros(grid.transient_shape)
    bad[0, 0, 0] = np.nan
    with pytest.raises(VolumeError):
        TransientVolume(grid, bad)
    bad = np.zeros(grid.volume_shape)
    bad[1, 0, 0, 0] = np.inf
    with pytest.raises(VolumeError):
        DirectionalAlbedoVolume(grid, bad)


def test_containers_are_immutable_copies(grid):
    src = np.ones(grid.transient_shape)
    vol = TransientVolume(grid, src)
    src[0, 0, 0] = 7.0
    assert vol.data[0, 0, 0] == 1.0
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 2.0


def test_albedo_and_normals(grid):
    data = np.zeros(grid.volume_shape)
    data[:, 1, 2, 3] = [1.0, 2.0, 2.0]
    vol = DirectionalAlbedoVolume(grid, data)
    assert vol.albedo()[1, 2, 3] == pytest.approx(3.0)
    normals, defined = vol.normals()
    np.testing.assert_allclose(normals[:, 1, 2, 3], [1 / 3, 2 / 3, 2 / 3])
    assert defined.sum() == 1
    assert np.all(normals[:, 0, 0, 0] == 0)


def test_downsample_constant():
    g = ScanGrid(0.6, 8, 0.01, 16)
    out = downsample_transient(TransientVolume(g, np.full(g.transient_shape, 5.0)), 2, 2)
    assert out.data.shape == (4, 4, 8)
    assert np.all(out.data == 5.0)
    assert out.grid.bin_width == pytest.approx(0.02)
    assert out.grid.scan_res == 4
    assert out.grid.num_bins == 8


def test_downsample_identity():
    g = ScanGrid(0.6, 4, 0.01, 6)
    data = np.random.default_rng(0).random(g.transient_shape)
    out = downsample_transient(TransientVolume(g, data), 1, 1)
    assert out.grid == g
    assert np.array_equal(out.data, data)


def test_downsample_block_mean_by_hand():
    g = ScanGrid(0.6, 4, 0.01, 4)
    data = np.arange(64, dtype=float).reshape(4, 4, 4)
    out = downsample_transient(TransientVolume(g, data), 2, 2)
    assert out.data.shape == (2, 2, 2)
    # block (0,0,0) holds indices x,y,t in {0,1}: 16x + 4y + t averages to 0 + 2 + 0.5 + 8
    assert out.data[0, 0, 0] == pytest.approx((0 + 1 + 4 + 5 + 16 + 17 + 20 + 21) / 8)
    assert out.data[1, 1, 1] == pytest.approx(data[2:, 2:, 2:].mean())


def test_downsample_dragon_style_grid():
    g = ScanGrid(2.0, 512, 0.0096, 8, light_speed=1.0)
    tau = TransientVolume(g, np.zeros(g.transient_shape))
    out = downsample_transient(tau, 4, 2)
    assert out.grid.scan_res == 128
    assert out.grid.bin_width == pytest.approx(2 * 0.0096)


@pytest.mark.parametrize("factors", [(3, 1), (1, 3), (0, 1)])
def test_downsample_rejects_bad_factors(factors):
    g = ScanGrid(0.6, 4, 0.01, 8)
    with pytest.raises(DimensionMismatchError):
        downsample_transient(TransientVolume(g, np.zeros(g.transient_shape)), *factors)


@settings(max_examples=25, deadline=None)
@given(s=st.sampled_from([1, 2, 4]), t=st.sampled_from([1, 2, 4]), seed=st.integers(0, 2**32 - 1))
def test_downsample_preserves_mass(s, t, seed):
    g = ScanGrid(0.6, 8, 0.01, 8)
    data = np.random.default_rng(seed).random(g.transient_shape)
    out = downsample_transient(TransientVolume(g, data), s, t)
    assert out.data.sum() * s * s * t == pytest.approx(data.sum(), rel=1e-9)


def test_encode_layout_by_hand():
    arr = np.arange(6, dtype=float).reshape(1, 2, 3)
    buf = encode_volume(arr, 0x01)
    assert buf[:4] == b"NLV1"
    assert buf[4:8] == bytes([1, 8, 0, 0])
    assert struct.unpack_from("<4I", buf, 8) == (3, 1, 2, 3)
    assert np.array_equal(np.frombuffer(buf[24:], "<f8"), np.arange(6.0))


def test_round_trip_bit_exact(tmp_path, grid):
    data = np.random.default_rng(1).standard_normal(grid.volume_shape)
    vol = DirectionalAlbedoVolume(grid, data)
    path = tmp_path / "rho.nlv"
    write_volume(path, vol, VolumeMeta(provenance="test", seed=3))
    back, meta = read_volume(path)
    assert isinstance(back, DirectionalAlbedoVolume)
    assert back.grid == grid
    assert back.data.tobytes() == vol.data.tobytes()
    assert meta["provenance"] == "test" and meta["seed"] == "3" and meta["kind"] == "directional"
    # component order survives
    assert np.array_equal(back.data[2], data[2])


def test_random_4x4x4_transient_round_trip(tmp_path):
    g = ScanGrid(0.4, 4, 0.1, 4)
    vol = TransientVolume(g, np.random.default_rng(2).random(g.transient_shape))
    write_volume(tmp_path / "t.nlv", vol)
    back, _ = read_volume(tmp_path / "t.nlv")
    assert back.data.tobytes() == vol.data.tobytes()
    assert meta_path(tmp_path / "t.nlv").name == "t.meta"


def test_rewrite_is_byte_identical(tmp_path, grid):
    vol = TransientVolume(grid, np.random.default_rng(3).random(grid.transient_shape))
    write_volume(tmp_path / "a.nlv", vol)
    back, meta = read_volume(tmp_path / "a.nlv")
    write_volume(tmp_path / "b.nlv", back, meta)
    assert (tmp_path / "a.nlv").read_bytes() == (tmp_path / "b.nlv").read_bytes()
    assert (tmp_path / "a.meta").read_text() == (tmp_path / "b.meta").read_text()


def _valid_buffer():
    return encode_volume(np.zeros((2, 2, 2)), 0x01)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda b: b"NLV2" + b[4:], "magic"),
        (lambda b: b[:4] + bytes([3]) + b[5:], "kind"),
        (lambda b: b[:5] + bytes([4]) + b[6:], "width"),
        (lambda b: b[:6] + bytes([1]) + b[7:], "reserved"),
        (lambda b: b[:8] + struct.pack("<I", 4) + b[12:], "rank"),
        (lambda b: b[:-8], "truncated"),
        (lambda b: b + b"\0", "trailing"),
        (lambda b: b[:10], "truncated"),
        (lambda b: b[:12] + struct.pack("<3I", 2**31, 2**31, 2**31) + b[24:], "overflow"),
    ],
)
def test_decode_errors(mutate, message):
    with pytest.raises(DecodeError, match=message):
        decode_volume(mutate(_valid_buffer()))


def test_read_requires_metadata(tmp_path, grid):
    vol = TransientVolume(grid, np.zeros(grid.transient_shape))
    write_volume(tmp_path / "x.nlv", vol)
    (tmp_path / "x.meta").unlink()
    with pytest.raises(DecodeError):
        read_volume(tmp_path / "x.nlv")


def test_meta_text_rules():
    meta = VolumeMeta.from_text("a=1\nb=x=y\n")
    assert meta == {"a": "1", "b": "x=y"}
    with pytest.raises(DecodeError):
        VolumeMeta.from_text("a=1\na=2\n")
    with pytest.raises(DecodeError):
        VolumeMeta.from_text("novalue\n")
    with pytest.raises(VolumeError):
        VolumeMeta({"bad\nkey": "1"}).to_text()
