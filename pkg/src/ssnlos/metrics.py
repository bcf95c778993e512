"""Map extraction and image-quality statistics for directional reconstructions."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .volume import DirectionalAlbedoVolume

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
REPORT_FIELDS = ("scene", "method", "lambda", "psnr", "ssim",
                 "normal_median_deg", "depth_rmse_m", "runtime_s")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ReconMaps:
    """Per-pixel projections of a directional volume.

    Attributes
    ----------
    albedo_map : ndarray (N, N)
        Depthwise maximum of ``|rho|`` scaled by its global maximum.
    depth_map : ndarray (N, N)
        Depth (meters) of the brightest voxel of each column.
    normal_map : ndarray (N, N, 3)
        Unit direction at the brightest voxel; zero where undefined.
    mask : ndarray (N, N) of bool
        Pixels whose albedo reaches the threshold.
    """

    albedo_map: np.ndarray
    depth_map: np.ndarray
    normal_map: np.ndarray
    mask: np.ndarray


def extract_maps(rho: DirectionalAlbedoVolume, mask_threshold: float = 0.1) -> ReconMaps:
    data = rho.data
    mag = np.sqrt(np.sum(data**2, axis=0))
    kstar = np.argmax(mag, axis=2)
    peak = np.take_along_axis(mag, kstar[..., None], axis=2)[..., 0]
    top = float(peak.max())
    albedo = peak / top if top > 0 else np.zeros_like(peak)
    depth = kstar * rho.grid.depth_pitch
    vec = np.take_along_axis(data, kstar[None, ..., None], axis=3)[..., 0]
    vec = np.moveaxis(vec, 0, -1)
    normal = np.zeros_like(vec)
    np.divide(vec, peak[..., None], out=normal, where=peak[..., None] > 0)
    mask = (albedo >= mask_threshold) & (peak > 0) if top > 0 else np.zeros(peak.shape, bool)
    return ReconMaps(albedo, depth.astype(np.float64), normal, mask)


def _same_shape(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for unit dynamic range; ``inf`` if identical."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def volume_psnr(recon: DirectionalAlbedoVolume, truth: DirectionalAlbedoVolume) -> float:
    """PSNR between albedo volumes, each scaled to a unit maximum."""
    def unit(v):
        m = v.albedo()
        top = m.max()
        return m / top if top > 0 else m
    return psnr(unit(recon), unit(truth))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b) -> float:
    """Mean structural similarity over all valid 11x11 Gaussian windows."""
    a, b = _same_shape(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise MetricError(f"ssim needs 2-D maps with sides >= {SSIM_WINDOW}, got {a.shape}")
    w = _gaussian_window()

    def filt(x):
        return convolve2d(x, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class AngleStats:
    median_deg: float
    mean_deg: float
    count: int


def _joint_mask(recon: ReconMaps, truth: ReconMaps) -> np.ndarray:
    if recon.mask.shape != truth.mask.shape:
        raise MetricError(f"shape mismatch: {recon.mask.shape} vs {truth.mask.shape}")
    mask = recon.mask & truth.mask
    if not mask.any():
        raise MetricError("intersection of the reconstruction and truth masks is empty")
    return mask


def normal_angle_error(recon: ReconMaps, truth: ReconMaps) -> AngleStats:
    """Angle between normals over the pixels both maps consider foreground."""
    mask = _joint_mask(recon, truth)
    dots = np.sum(recon.normal_map[mask] * truth.normal_map[mask], axis=1)
    ang = np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))
    return AngleStats(float(np.median(ang)), float(np.mean(ang)), int(mask.sum()))


def depth_rmse(recon: ReconMaps, truth: ReconMaps) -> float:
    mask = _joint_mask(recon, truth)
    diff = recon.depth_map[mask] - truth.depth_map[mask]
    return float(np.sqrt(np.mean(diff**2)))


def format_value(value) -> str:
    """CSV text of a metric: ``inf``/``nan`` spelled out, floats by ``repr``."""
    if isinstance(value, (float, np.floating)):
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        if np.isnan(value):
            return "nan"
        return repr(float(value))
    return str(value)


def evaluate_maps(recon: DirectionalAlbedoVolume, truth: DirectionalAlbedoVolume,
                  mask_threshold: float = 0.1) -> dict:
    """PSNR, SSIM, median normal error and depth RMSE of a reconstruction."""
    if recon.grid.volume_shape != truth.grid.volume_shape:
        raise MetricError(
            f"shape mismatch: recon {recon.grid.volume_shape} vs truth {truth.grid.volume_shape}")
    rm = extract_maps(recon, mask_threshold)
    tm = extract_maps(truth, mask_threshold)
    out = {"psnr": psnr(rm.albedo_map, tm.albedo_map), "ssim": ssim(rm.albedo_map, tm.albedo_map)}
    try:
        out["normal_median_deg"] = normal_angle_error(rm, tm).median_deg
        out["depth_rmse_m"] = depth_rmse(rm, tm)
    except MetricError:
        out["normal_median_deg"] = float("nan")
        out["depth_rmse_m"] = float("nan")
    return out


def write_report(path, rows) -> None:
    """Write metric rows (dicts keyed by :data:`REPORT_FIELDS`) as CSV."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for row in rows:
            writer.writerow([format_value(row[k]) for k in REPORT_FIELDS])
