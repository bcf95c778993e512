"""Parametric surfel scenes, transient rendering and the photon noise model.

A surfel is an oriented point with a position (meters), a unit normal whose
third component points toward the wall, and a nonnegative albedo.  Builders
place one surfel at the centre of every lateral cell covered by the shape,
so ground truth and rendering share the scan grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lct import brute_force_forward
from .volume import DirectionalAlbedoVolume, ScanGrid, TransientVolume


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SurfelScene:
    """Collection of surfels stored as ``(M, 3)``, ``(M, 3)`` and ``(M,)`` arrays."""

    positions: np.ndarray
    normals: np.ndarray
    albedo: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64).reshape(-1, 3)
        nrm = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
        alb = np.array(self.albedo, dtype=np.float64).reshape(-1)
        if not (len(pos) == len(nrm) == len(alb)):
            raise SceneError("positions, normals and albedo must have the same length")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(nrm)) and np.all(np.isfinite(alb))):
            raise SceneError("scene contains NaN or Inf")
        if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-9):
            raise SceneError("surfel normals must be unit vectors")
        if np.any(alb < 0):
            raise SceneError("surfel albedo must be >= 0")
        for name, arr in (("positions", pos), ("normals", nrm), ("albedo", alb)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.albedo)

    def directional(self) -> np.ndarray:
        """Directional albedos ``albedo * normal`` of shape ``(M, 3)``."""
        return self.albedo[:, None] * self.normals

    def scaled(self, factor: float) -> "SurfelScene":
        return SurfelScene(self.positions, self.normals, self.albedo * factor)

    def to_csv(self, path) -> None:
        """Write ``x,y,z,nx,ny,nz,albedo`` rows with LF endings."""
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y", "z", "nx", "ny", "nz", "albedo"])
            for p, n, a in zip(self.positions, self.normals, self.albedo):
                writer.writerow([repr(float(v)) for v in (*p, *n, a)])

    @classmethod
    def from_csv(cls, path) -> "SurfelScene":
        lines = Path(path).read_text().splitlines()[1:]
        if not any(line.strip() for line in lines):
            return empty_scene()
        data = np.loadtxt(lines, delimiter=",", ndmin=2)
        return cls(data[:, :3], data[:, 3:6], data[:, 6])


def empty_scene() -> SurfelScene:
    return SurfelScene(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))


def _cell_centres(grid: ScanGrid):
    lat = grid.lateral_positions()
    x, y = np.meshgrid(lat, lat, indexing="ij")
    return x.ravel(), y.ravel()


def t_mask(x: np.ndarray, y: np.ndarray, wall_width: float) -> np.ndarray:
    """Letter T in wall-width units: a top bar and a centred stem."""
    u, v = np.asarray(x) / wall_width, np.asarray(y) / wall_width
    bar = (np.abs(u) <= 0.3) & (v >= 0.1) & (v <= 0.3)
    stem = (np.abs(u) <= 0.08) & (v >= -0.3) & (v < 0.1)
    return bar | stem


def t_plane(grid: ScanGrid, depth: float = 0.5, albedo: float = 1.0) -> SurfelScene:
    """Wall-facing letter T at a fixed depth."""
    x, y = _cell_centres(grid)
    keep = t_mask(x, y, grid.wall_width_m)
    m = int(keep.sum())
    pos = np.stack([x[keep], y[keep], np.full(m, float(depth))], axis=1)
    nrm = np.tile([0.0, 0.0, 1.0], (m, 1))
    return SurfelScene(pos, nrm, np.full(m, float(albedo)))


def inclined_plane(grid: ScanGrid, depth: float = 0.5, angle_deg: float = 30.0,
                   extent: float = 0.6, albedo: float = 1.0) -> SurfelScene:
    """Square plane through ``(0, 0, depth)`` tilted about the y axis.

    The plane deepens toward ``+x`` as ``z = depth + x * tan(angle)``; its
    wall-facing normal is ``(sin(angle), 0, cos(angle))``.  ``extent`` is the
    lateral half-size as a fraction of half the wall width.
    """
    phi = np.deg2rad(angle_deg)
    if not abs(phi) < np.pi / 2:
        raise SceneError("angle must lie strictly between -90 and 90 degrees")
    x, y = _cell_centres(grid)
    half = extent * grid.wall_width_m / 2.0
    keep = (np.abs(x) <= half) & (np.abs(y) <= half)
    m = int(keep.sum())
    z = depth + x[keep] * np.tan(phi)
    pos = np.stack([x[keep], y[keep], z], axis=1)
    nrm = np.tile([np.sin(phi), 0.0, np.cos(phi)], (m, 1))
    return SurfelScene(pos, nrm, np.full(m, float(albedo)))


def sphere_cap(grid: ScanGrid, depth: float = 0.5, radius: float = 0.3,
               cap_radius: float | None = None, albedo: float = 1.0) -> SurfelScene:
    """Wall-facing cap of a sphere whose apex sits at ``(0, 0, depth)``.

    ``cap_radius`` bounds the lateral footprint (default ``0.8 * radius``).
    """
    if radius <= 0:
        raise SceneError("radius must be > 0")
    cap = 0.8 * radius if cap_radius is None else float(cap_radius)
    if not 0 < cap <= radius:
        raise SceneError("cap_radius must lie in (0, radius]")
    x, y = _cell_centres(grid)
    rr = x * x + y * y
    keep = rr <= cap * cap
    h = np.sqrt(radius * radius - rr[keep])
    pos = np.stack([x[keep], y[keep], depth + radius - h], axis=1)
    nrm = np.stack([x[keep], y[keep], h], axis=1) / radius
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    return SurfelScene(pos, nrm, np.full(int(keep.sum()), float(albedo)))


def single_surfel(position=(0.0, 0.0, 0.5), normal=(0.0, 0.0, 1.0), albedo: float = 1.0) -> SurfelScene:
    nrm = np.asarray(normal, dtype=np.float64)
    nrm = nrm / np.linalg.norm(nrm)
    return SurfelScene([position], [nrm], [albedo])


BUILDERS = {
    "t-plane": "t_plane",
    "inclined-plane": "inclined_plane",
    "sphere-cap": "sphere_cap",
    "single-surfel": "single_surfel",
}


def build_scene(name: str, grid: ScanGrid, depth: float = 0.5, angle_deg: float = 30.0,
                radius: float = 0.3, albedo: float = 1.0) -> SurfelScene:
    """Construct a scene by its CLI name."""
    if name == "t-plane":
        return t_plane(grid, depth, albedo)
    if name == "inclined-plane":
        return inclined_plane(grid, depth, angle_deg, albedo=albedo)
    if name == "sphere-cap":
        return sphere_cap(grid, depth, radius, albedo=albedo)
    if name == "single-surfel":
        return single_surfel((0.0, 0.0, depth), albedo=albedo)
    raise SceneError(f"unknown scene {name!r}; expected one of {', '.join(BUILDERS)}")


def surfel_voxels(scene: SurfelScene, grid: ScanGrid) -> np.ndarray:
    """Nearest voxel index of every surfel as an ``(M, 3)`` integer array."""
    return np.array([grid.voxel_index(p) for p in scene.positions], dtype=np.int64).reshape(-1, 3)


def check_frustum(scene: SurfelScene, grid: ScanGrid) -> None:
    idx = surfel_voxels(scene, grid)
    bad = [m for m, ijk in enumerate(idx) if not grid.contains(ijk)]
    if bad:
        shown = ", ".join(f"#{m} at {tuple(float(c) for c in scene.positions[m])}" for m in bad[:5])
        more = f" and {len(bad) - 5} more" if len(bad) > 5 else ""
        raise SceneError(f"surfels outside the reconstruction frustum: {shown}{more}")


def rasterize_scene(scene: SurfelScene, grid: ScanGrid) -> DirectionalAlbedoVolume:
    """Accumulate ``albedo * normal`` of every surfel into its nearest voxel."""
    check_frustum(scene, grid)
    out = np.zeros(grid.volume_shape)
    idx = surfel_voxels(scene, grid)
    vec = scene.directional()
    for c in range(3):
        np.add.at(out[c], (idx[:, 0], idx[:, 1], idx[:, 2]), vec[:, c])
    return DirectionalAlbedoVolume(grid, out)


def render_transients(scene: SurfelScene, grid: ScanGrid, clamp_cosine: bool = True) -> TransientVolume:
    """Single-bounce confocal histograms of a surfel scene."""
    return brute_force_forward(scene, grid, clamp_cosine=clamp_cosine)


@dataclass(frozen=True)
class NoiseSpec:
    """Photon-count noise: peak-scaled Poisson plus additive Gaussian.

    Parameters
    ----------
    peak_photons : float
        Expected photon count at the brightest bin.
    gaussian_sigma : float
        Standard deviation of the additive read noise, in counts.
    seed : int
        Seed of the counter-based generator.
    """

    peak_photons: float = 100.0
    gaussian_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.peak_photons) and self.peak_photons > 0):
            raise ValueError("peak_photons must be > 0")
        if not (np.isfinite(self.gaussian_sigma) and self.gaussian_sigma >= 0):
            raise ValueError("gaussian_sigma must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def apply_noise(tau: TransientVolume, spec: NoiseSpec) -> TransientVolume:
    """Sample a noisy measurement in the clean volume's units.

    Every bin becomes ``(Poisson(s * tau) + Normal(0, sigma**2)) / s`` with
    ``s = peak_photons / max(tau)``.  Samples come from numpy's Philox
    generator, whose Poisson sampler uses inversion for small means and
    transformed rejection otherwise.  An all-zero input yields Gaussian
    noise at unit scale.
    """
    data = tau.data
    if np.any(data < 0):
        raise ValueError("noise model needs nonnegative histograms")
    rng = np.random.Generator(np.random.Philox(int(spec.seed)))
    peak = float(data.max())
    scale = spec.peak_photons / peak if peak > 0 else 1.0
    counts = rng.poisson(scale * data).astype(np.float64)
    if spec.gaussian_sigma > 0:
        counts += rng.normal(0.0, spec.gaussian_sigma, size=data.shape)
    return TransientVolume(tau.grid, counts / scale)
