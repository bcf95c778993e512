"""Grid geometry, volume containers, preprocessing and the NLV1 file format.

Coordinates: the relay wall is the plane ``z = 0`` and the hidden scene
lives at depths ``z > 0``.  Directional albedos and normals measure their
third component toward the wall, so a surface facing the wall has normal
``(0, 0, 1)``.  Scan points and voxel columns share the same lateral
cell-centred positions; depth voxel ``k`` sits at ``z = k * depth_pitch``.
The time axis is stored as optical path length, so bin ``j`` of a histogram
collects photons whose round trip path is ``j * bin_width`` (nearest bin).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NLV1"
KIND_TRANSIENT = 0x01
KIND_DIRECTIONAL = 0x02
SCALAR_F64 = 0x08

_GRID_KEYS = ("wall_width_m", "scan_res", "bin_width", "num_bins", "depth_res", "light_speed")


class VolumeError(ValueError):
    """Base class for container and format errors."""


class DimensionMismatchError(VolumeError):
    pass


class GridMismatchError(VolumeError):
    pass


class DecodeError(VolumeError):
    pass


@dataclass(frozen=True)
class ScanGrid:
    """Confocal scan and reconstruction discretization.

    Parameters
    ----------
    wall_width_m : float
        Side of the square scanned wall area (meters).
    scan_res : int
        Scan points per side; also the lateral voxel count.
    bin_width : float
        Time-bin extent as optical path length ``c * dt`` (meters).
    num_bins : int
        Number of time bins.
    depth_res : int, optional
        Depth voxels. Defaults to ``num_bins``.
    light_speed : float
        Speed of light used to convert path length to seconds.
    """

    wall_width_m: float
    scan_res: int
    bin_width: float
    num_bins: int
    depth_res: int = 0
    light_speed: float = 1.0

    def __post_init__(self):
        if self.depth_res == 0:
            object.__setattr__(self, "depth_res", int(self.num_bins))
        for name in ("scan_res", "num_bins", "depth_res"):
            value = getattr(self, name)
            if int(value) != value:
                raise VolumeError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("wall_width_m", "bin_width", "light_speed"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (np.isfinite(self.wall_width_m) and self.wall_width_m > 0):
            raise VolumeError("wall_width_m must be > 0")
        if not (np.isfinite(self.bin_width) and self.bin_width > 0):
            raise VolumeError("bin_width must be > 0")
        if not (np.isfinite(self.light_speed) and self.light_speed > 0):
            raise VolumeError("light_speed must be > 0")
        if self.scan_res < 2 or self.num_bins < 2 or self.depth_res < 2:
            raise VolumeError("scan_res, num_bins and depth_res must all be >= 2")

    @property
    def max_depth(self) -> float:
        """Largest reconstructable depth: half the longest path length."""
        return self.num_bins * self.bin_width / 2.0

    @property
    def depth_pitch(self) -> float:
        return self.max_depth / self.depth_res

    @property
    def lateral_pitch(self) -> float:
        return self.wall_width_m / self.scan_res

    @property
    def bin_seconds(self) -> float:
        return self.bin_width / self.light_speed

    @property
    def transient_shape(self) -> tuple[int, int, int]:
        return (self.scan_res, self.scan_res, self.num_bins)

    @property
    def volume_shape(self) -> tuple[int, int, int, int]:
        return (3, self.scan_res, self.scan_res, self.depth_res)

    def lateral_positions(self) -> np.ndarray:
        """Cell-centred positions of scan points (and voxel columns)."""
        i = np.arange(self.scan_res)
        return (i + 0.5) * self.lateral_pitch - self.wall_width_m / 2.0

    def depths(self) -> np.ndarray:
        return np.arange(self.depth_res) * self.depth_pitch

    def path_lengths(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.bin_width

    def voxel_index(self, position) -> tuple[int, int, int]:
        """Nearest voxel of a point; may fall outside the volume."""
        x, y, z = (float(c) for c in position)
        half = self.wall_width_m / 2.0
        i = int(np.floor((x + half) / self.lateral_pitch))
        j = int(np.floor((y + half) / self.lateral_pitch))
        k = int(np.floor(z / self.depth_pitch + 0.5))
        return i, j, k

    def contains(self, index) -> bool:
        i, j, k = index
        n = self.scan_res
        return 0 <= i < n and 0 <= j < n and 0 <= k < self.depth_res

    def as_dict(self) -> dict[str, str]:
        return {key: repr(getattr(self, key)) for key in _GRID_KEYS}

    @classmethod
    def from_mapping(cls, mapping) -> "ScanGrid":
        missing = [k for k in _GRID_KEYS if k not in mapping]
        if missing:
            raise VolumeError(f"missing grid keys: {', '.join(missing)}")
        return cls(
            wall_width_m=float(mapping["wall_width_m"]),
            scan_res=int(mapping["scan_res"]),
            bin_width=float(mapping["bin_width"]),
            num_bins=int(mapping["num_bins"]),
            depth_res=int(mapping["depth_res"]),
            light_speed=float(mapping["light_speed"]),
        )


def _frozen_copy(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, order="C", copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TransientVolume:
    """Photon histogram cube of shape ``(scan_res, scan_res, num_bins)``."""

    grid: ScanGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _frozen_copy(self.data)
        if arr.shape != self.grid.transient_shape:
            raise DimensionMismatchError(
                f"transient shape {arr.shape} does not match grid {self.grid.transient_shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise VolumeError("transient volume contains NaN or Inf")
        object.__setattr__(self, "data", arr)


@dataclass(frozen=True)
class DirectionalAlbedoVolume:
    """Directional albedo field ``rho * n`` of shape ``(3, N, N, Nz)``.

    Component order is ``(rho_x, rho_y, rho_z)``.
    """

    grid: ScanGrid
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _frozen_copy(self.data)
        if arr.shape != self.grid.volume_shape:
            raise DimensionMismatchError(
                f"directional shape {arr.shape} does not match grid {self.grid.volume_shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise VolumeError("directional volume contains NaN or Inf")
        object.__setattr__(self, "data", arr)

    def albedo(self) -> np.ndarray:
        return np.sqrt(np.sum(self.data**2, axis=0))

    def normals(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit normals and a mask flagging voxels where they are defined."""
        mag = self.albedo()
        defined = mag > 0
        out = np.zeros_like(self.data)
        np.divide(self.data, mag, out=out, where=defined)
        return out, defined


class VolumeMeta(dict):
    """``key=value`` metadata stored next to a binary volume."""

    def to_text(self) -> str:
        lines = []
        for key, value in self.items():
            key = str(key)
            value = str(value)
            if not key or "=" in key or "\n" in key or "\n" in value:
                raise VolumeError(f"invalid metadata entry {key!r}")
            lines.append(f"{key}={value}\n")
        return "".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "VolumeMeta":
        meta = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if "=" not in line:
                raise DecodeError(f"metadata line {lineno} is not key=value: {line!r}")
            key, value = line.split("=", 1)
            if key in meta:
                raise DecodeError(f"duplicate metadata key {key!r}")
            meta[key] = value
        return meta

    @classmethod
    def for_grid(cls, grid: ScanGrid, **extra) -> "VolumeMeta":
        meta = cls(grid.as_dict())
        for key, value in extra.items():
            meta[key] = str(value)
        return meta


def downsample_transient(
    tau: TransientVolume, spatial_factor: int, temporal_factor: int
) -> TransientVolume:
    """Block-average a transient volume spatially and temporally.

    Each output bin is the mean over a ``spatial_factor**2 * temporal_factor``
    input block, so per-bin intensities keep their meaning.
    """
    grid = tau.grid
    s, t = int(spatial_factor), int(temporal_factor)
    if s < 1 or t < 1:
        raise DimensionMismatchError("downsampling factors must be positive")
    if grid.scan_res % s or grid.num_bins % t:
        raise DimensionMismatchError(
            f"factors ({s}, {t}) do not divide grid dimensions "
            f"({grid.scan_res}, {grid.num_bins})"
        )
    n, nt = grid.scan_res // s, grid.num_bins // t
    blocks = tau.data.reshape(n, s, n, s, nt, t)
    data = blocks.mean(axis=(1, 3, 5))
    depth_res = grid.depth_res // t if grid.depth_res % t == 0 else nt
    new_grid = ScanGrid(
        wall_width_m=grid.wall_width_m,
        scan_res=n,
        bin_width=grid.bin_width * t,
        num_bins=nt,
        depth_res=max(depth_res, 2),
        light_speed=grid.light_speed,
    )
    return TransientVolume(new_grid, data)


def meta_path(path) -> Path:
    return Path(path).with_suffix(".meta")


def encode_volume(data: np.ndarray, kind: int) -> bytes:
    arr = np.ascontiguousarray(data, dtype="<f8")
    header = MAGIC + bytes([kind, SCALAR_F64, 0, 0])
    dims = struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return header + dims + arr.tobytes(order="C")


def decode_volume(buf: bytes) -> tuple[int, np.ndarray]:
    """Parse an NLV1 byte string into ``(kind, array)``."""
    if len(buf) < 12:
        raise DecodeError("truncated header")
    if buf[:4] != MAGIC:
        raise DecodeError(f"bad magic {buf[:4]!r}")
    kind, width, r0, r1 = buf[4], buf[5], buf[6], buf[7]
    if kind not in (KIND_TRANSIENT, KIND_DIRECTIONAL):
        raise DecodeError(f"unknown payload kind 0x{kind:02x}")
    if width != SCALAR_F64:
        raise DecodeError(f"unsupported scalar width 0x{width:02x}")
    if r0 or r1:
        raise DecodeError("reserved header bytes must be zero")
    (rank,) = struct.unpack_from("<I", buf, 8)
    expected_rank = 3 if kind == KIND_TRANSIENT else 4
    if rank != expected_rank:
        raise DecodeError(f"rank {rank} invalid for payload kind 0x{kind:02x}")
    offset = 12 + 4 * rank
    if len(buf) < offset:
        raise DecodeError("truncated dimension table")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    count = 1
    for d in dims:
        count *= d
    nbytes = count * 8
    if count == 0 or nbytes > len(buf) - offset:
        if nbytes > 2**48:
            raise DecodeError(f"dimension overflow {dims}")
        raise DecodeError(f"truncated payload: need {nbytes} bytes for dims {dims}")
    if nbytes != len(buf) - offset:
        raise DecodeError("trailing bytes after payload")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(dims)
    return kind, arr.astype(np.float64)


def write_volume(path, data, meta: VolumeMeta | None = None) -> None:
    """Write a transient or directional volume plus its ``.meta`` sibling."""
    if isinstance(data, TransientVolume):
        kind = KIND_TRANSIENT
    elif isinstance(data, DirectionalAlbedoVolume):
        kind = KIND_DIRECTIONAL
    else:
        raise TypeError(f"cannot write {type(data).__name__}")
    full = VolumeMeta.for_grid(data.grid)
    if meta:
        for key, value in meta.items():
            if key in _GRID_KEYS and key in full and str(value) != full[key]:
                raise GridMismatchError(f"metadata {key}={value} disagrees with grid")
            full[key] = str(value)
    full["kind"] = "transient" if kind == KIND_TRANSIENT else "directional"
    path = Path(path)
    path.write_bytes(encode_volume(data.data, kind))
    meta_path(path).write_text(full.to_text(), encoding="utf-8", newline="\n")


def read_volume(path):
    """Inverse of :func:`write_volume`; returns ``(volume, meta)``."""
    path = Path(path)
    kind, arr = decode_volume(path.read_bytes())
    mpath = meta_path(path)
    if not mpath.exists():
        raise DecodeError(f"missing metadata file {mpath}")
    meta = VolumeMeta.from_text(mpath.read_text(encoding="utf-8"))
    try:
        grid = ScanGrid.from_mapping(meta)
    except (VolumeError, ValueError) as exc:
        raise DecodeError(f"bad grid metadata: {exc}") from exc
    if kind == KIND_TRANSIENT:
        return TransientVolume(grid, arr), meta
    return DirectionalAlbedoVolume(grid, arr), meta
