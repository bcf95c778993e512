"""Directional light-cone transform operator for confocal scans.

The confocal directional model maps a directional albedo field ``v`` to
photon histograms.  A scene point ``p`` seen from scan point ``q`` at
distance ``r`` contributes ``<v, w> / r**4`` to bin ``round(2 r / bin_width)``
where ``w`` is the unit vector from ``p`` to ``q``.  Directional z components
are measured toward the wall (see :mod:`ssnlos.volume`), so for lateral
offsets ``(a, b) = q - p`` and depth ``z``, ``w = (a, b, z) / r``.

Writing ``u = z**2`` and ``v = r**2`` makes the geometry shift invariant:
``v - u = a**2 + b**2``.  The directional numerator ``a v_x + b v_y + z v_z``
splits into three convolutions with paraboloid-shell kernels, the ``z``
weight of the depth channel being applied while resampling ``z -> u``.

The operator is::

    H(rho) = gain * T( sum_d h_d * R_d(rho_d) )

* ``R_d``  linear splat of voxel depths ``z_k`` onto the uniform ``u`` grid
  (the depth channel is also weighted by ``z_k``);
* ``h_d``  shell kernels, convolved by zero-padded FFT;
* ``T``    deposit of each ``v`` sample into the histogram, i.e. the
  transpose of linear interpolation ``t -> v``, weighted by the
  bin Jacobian and the attenuation ``v ** (-p / 2)``.

All three stages are explicit linear maps, so :meth:`LCTOperator.adjoint`
is exact to rounding.  The attenuation power ``p`` defaults to 4, the value
at which the operator best matches :func:`brute_force_forward` (see
:func:`calibrate_attenuation`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse as sp

from ssnlos.volume import (
    DirectionalAlbedoVolume,
    GridMismatchError,
    ScanGrid,
    TransientVolume,
)

DEFAULT_POWER = 4
ORACLE_MAX_VOXELS = 16**3


class OracleCapError(ValueError):
    pass


@dataclass
class ConeKernelSet:
    """Shell kernels on the (lateral-x, lateral-y, squared-depth) grid.

    Arrays have shape ``(2N-1, 2N-1, Nu)``; index ``N-1`` on the lateral axes
    is the zero offset.  Lateral offsets are ``scan point - scene point``.
    """

    hs: np.ndarray
    hx: np.ndarray
    hy: np.ndarray
    hz: np.ndarray
    scan_res: int
    u_pitch: float
    raw_sum: float
    _spectra: dict = field(default_factory=dict, repr=False)

    def stacked(self) -> np.ndarray:
        return np.stack([self.hx, self.hy, self.hz])

    def spectra(self, fft_shape) -> np.ndarray:
        """Real FFTs of the directional kernels embedded in ``fft_shape``."""
        key = tuple(fft_shape)
        if key not in self._spectra:
            n = self.scan_res
            px, py, pu = key
            emb = np.zeros((3,) + key)
            lat = np.arange(-(n - 1), n)
            ix = lat % px
            iy = lat % py
            nu = self.hs.shape[2]
            emb[:, ix[:, None], iy[None, :], :nu] = self.stacked()
            self._spectra[key] = scipy.fft.rfftn(emb, axes=(1, 2, 3))
        return self._spectra[key]


def transform_pitch(grid: ScanGrid, transform_res: int | None = None) -> tuple[int, float]:
    nu = int(transform_res or grid.depth_res)
    return nu, grid.max_depth**2 / nu


def build_cone_kernels(
    grid: ScanGrid, transform_res: int | None = None, shell_width: float = 0.0
) -> ConeKernelSet:
    """Build the scalar and directional shell kernels for ``grid``.

    With ``shell_width == 0`` every lateral offset ``(a, b)`` places a single
    unit entry at the u-bin nearest ``a**2 + b**2``.  A positive width
    spreads the entry with a triangular profile of that half-width (in bins)
    for anti-aliasing.  ``hs`` is normalized to unit absolute sum.
    """
    nu, du = transform_pitch(grid, transform_res)
    n = grid.scan_res
    lat = np.arange(-(n - 1), n) * grid.lateral_pitch
    a, b = np.meshgrid(lat, lat, indexing="ij")
    pos = (a**2 + b**2) / du
    hs = np.zeros((2 * n - 1, 2 * n - 1, nu))
    if shell_width <= 0:
        idx = np.floor(pos + 0.5).astype(np.int64)
        inside = idx < nu
        ia, ib = np.nonzero(inside)
        hs[ia, ib, idx[inside]] = 1.0
    else:
        span = int(np.ceil(shell_width))
        base = np.floor(pos).astype(np.int64)
        weights = np.zeros(pos.shape + (2 * span + 2,))
        for s, off in enumerate(range(-span, span + 2)):
            weights[..., s] = np.maximum(0.0, 1.0 - np.abs(base + off - pos) / shell_width)
        weights /= weights.sum(axis=-1, keepdims=True)
        for s, off in enumerate(range(-span, span + 2)):
            tgt = base + off
            ok = (tgt >= 0) & (tgt < nu) & (weights[..., s] > 0)
            ia, ib = np.nonzero(ok)
            hs[ia, ib, tgt[ok]] += weights[..., s][ok]
    raw_sum = float(np.abs(hs).sum())
    if raw_sum == 0:
        raise ValueError("no shell entry falls inside the transform grid")
    hs /= raw_sum
    hx = hs * a[:, :, None]
    hy = hs * b[:, :, None]
    hz = hs.copy()
    return ConeKernelSet(hs, hx, hy, hz, n, du, raw_sum)


def _linear_weights(pos: np.ndarray, size: int, mode: str = "linear"):
    """Rows/cols/weights of a sparse map sampling ``pos`` on ``0..size-1``.

    ``mode`` is ``"linear"`` (2-tap) or ``"nearest"`` (round half up).
    Linear samples less than one step past the last point take its value;
    samples further out get no weight.
    """
    src = np.arange(pos.size)
    if mode == "nearest":
        idx = np.floor(pos + 0.5).astype(np.int64)
        ok = (idx >= 0) & (idx < size)
        return src[ok], idx[ok], np.ones(int(ok.sum()))
    if mode != "linear":
        raise ValueError(f"unknown interpolation mode {mode!r}")
    pos = np.where((pos > size - 1) & (pos < size), size - 1, pos)
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    rows, cols, vals = [], [], []
    for tap, w in ((lo, 1.0 - frac), (lo + 1, frac)):
        ok = (tap >= 0) & (tap < size) & (w > 0)
        rows.append(src[ok])
        cols.append(tap[ok])
        vals.append(w[ok])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def time_to_v_matrix(num_bins: int, bin_width: float, transform_res: int, v_pitch: float,
                     mode: str = "linear"):
    """Sparse ``(Nv, Nt)`` interpolation of a histogram at ``t(v_m)``.

    Sample ``m`` sits at ``v_m = m * v_pitch``; its fractional bin index is
    ``2 sqrt(v_m) / bin_width``.
    """
    v = np.arange(transform_res) * v_pitch
    pos = 2.0 * np.sqrt(v) / bin_width
    r, c, w = _linear_weights(pos, num_bins, mode)
    return sp.csr_matrix((w, (r, c)), shape=(transform_res, num_bins))


def v_to_time_matrix(num_bins: int, bin_width: float, transform_res: int, v_pitch: float):
    """Sparse ``(Nt, Nv)`` linear interpolation of a v-profile at ``v(t_j)``."""
    t = np.arange(num_bins) * bin_width
    pos = (t / 2.0) ** 2 / v_pitch
    r, c, w = _linear_weights(pos, transform_res)
    return sp.csr_matrix((w, (r, c)), shape=(num_bins, transform_res))


def depth_to_u_matrix(grid: ScanGrid, transform_res: int, u_pitch: float):
    """Sparse ``(Nu, Nz)`` splat of voxel depths onto the ``u = z**2`` grid."""
    z = grid.depths()
    pos = z**2 / u_pitch
    r, c, w = _linear_weights(pos, transform_res)
    # rows index voxels here; transpose to (Nu, Nz)
    return sp.csr_matrix((w, (c, r)), shape=(transform_res, grid.depth_res))


def attenuation(v: np.ndarray, power: float) -> np.ndarray:
    return v ** (power / 2.0)


@dataclass
class TransformedVolume:
    """Field over ``(x, y, v)`` with ``v = (c t / 2) ** 2`` sampled at ``m * v_pitch``."""

    data: np.ndarray
    v_pitch: float
    power: float


def resample_to_v(hist: np.ndarray, bin_width: float, max_depth: float,
                  transform_res: int, power: float = DEFAULT_POWER) -> np.ndarray:
    """Attenuation-compensated resampling of histograms (last axis) onto v."""
    dv = max_depth**2 / transform_res
    smat = time_to_v_matrix(hist.shape[-1], bin_width, transform_res, dv)
    flat = hist.reshape(-1, hist.shape[-1])
    out = (smat @ flat.T).T
    v = np.arange(transform_res) * dv
    return (out * attenuation(v, power)).reshape(hist.shape[:-1] + (transform_res,))


def resample_from_v(prof: np.ndarray, bin_width: float, num_bins: int,
                    max_depth: float, power: float = DEFAULT_POWER) -> np.ndarray:
    """Inverse of :func:`resample_to_v`; the compensation is undone with a
    reciprocal factor that is taken as zero at ``v = 0``."""
    nv = prof.shape[-1]
    dv = max_depth**2 / nv
    v = np.arange(nv) * dv
    inv = np.zeros(nv)
    np.divide(1.0, attenuation(v, power), out=inv, where=v > 0)
    if power == 0:
        inv[0] = 1.0
    tmat = v_to_time_matrix(num_bins, bin_width, nv, dv)
    flat = prof.reshape(-1, nv) * inv
    out = (tmat @ flat.T).T
    return out.reshape(prof.shape[:-1] + (num_bins,))


def transform_measurement(tau: TransientVolume, transform_res: int | None = None,
                          power: float = DEFAULT_POWER) -> TransformedVolume:
    grid = tau.grid
    nv, dv = transform_pitch(grid, transform_res)
    data = resample_to_v(tau.data, grid.bin_width, grid.max_depth, nv, power)
    return TransformedVolume(data, dv, power)


def inverse_transform_measurement(tv: TransformedVolume, grid: ScanGrid) -> TransientVolume:
    data = resample_from_v(tv.data, grid.bin_width, grid.num_bins, grid.max_depth, tv.power)
    return TransientVolume(grid, data)


class LCTOperator:
    """Forward/adjoint pair of the discrete directional light-cone model.

    Parameters
    ----------
    grid : ScanGrid
    power : float
        Attenuation power ``p``; the forward map divides by ``v ** (p/2)``.
    transform_res : int, optional
        Number of samples on the ``u``/``v`` axis, default ``grid.depth_res``.
    shell_width : float
        Kernel shell half-width in bins (0 = nearest bin).
    time_binning : {"nearest", "linear"}
        How each ``v`` sample is deposited into the histogram.
    workers : int
        Threads handed to ``scipy.fft``; results do not depend on it.
    """

    def __init__(self, grid: ScanGrid, power: float = DEFAULT_POWER,
                 transform_res: int | None = None, shell_width: float = 0.0,
                 time_binning: str = "nearest", workers: int = 1):
        self.grid = grid
        self.power = float(power)
        self.workers = int(workers)
        self.time_binning = time_binning
        self.shell_width = float(shell_width)
        self.nu, self.du = transform_pitch(grid, transform_res)
        self.kernels = build_cone_kernels(grid, self.nu, shell_width)
        n = grid.scan_res
        self.fft_shape = (2 * n, 2 * n, 2 * self.nu)
        self.spectra = self.kernels.spectra(self.fft_shape)

        self.depth_map = depth_to_u_matrix(grid, self.nu, self.du)
        self.z_weight = grid.depths()

        v = np.arange(self.nu) * self.du
        col = np.zeros(self.nu)
        # bin Jacobian (t-bins per v-sample) times attenuation
        col[1:] = self.du / (grid.bin_width * np.sqrt(v[1:])) / attenuation(v[1:], self.power)
        smat = time_to_v_matrix(grid.num_bins, grid.bin_width, self.nu, self.du, time_binning)
        self.time_map = (smat.T @ sp.diags(col)).tocsr()
        self.time_map_t = self.time_map.T.tocsr()
        self.gain = grid.bin_width * self.kernels.raw_sum / self.du
        self._transformed = None

    @property
    def domain_shape(self):
        return self.grid.volume_shape

    @property
    def range_shape(self):
        return self.grid.transient_shape

    def settings(self) -> dict:
        return {
            "power": self.power,
            "transform_res": self.nu,
            "shell_width": self.shell_width,
            "time_binning": self.time_binning,
        }

    # -- stages ---------------------------------------------------------
    def to_u(self, rho: np.ndarray) -> np.ndarray:
        """Per-channel depth resampling ``(3, N, N, Nz) -> (3, N, N, Nu)``."""
        n = self.grid.scan_res
        weighted = rho.copy()
        weighted[2] *= self.z_weight
        flat = weighted.reshape(-1, self.grid.depth_res)
        out = (self.depth_map @ flat.T).T
        return out.reshape(3, n, n, self.nu)

    def from_u_adjoint(self, rho_u: np.ndarray) -> np.ndarray:
        n = self.grid.scan_res
        flat = rho_u.reshape(-1, self.nu)
        out = (self.depth_map.T @ flat.T).T.reshape(3, n, n, self.grid.depth_res)
        out[2] *= self.z_weight
        return out

    def to_time(self, y: np.ndarray) -> np.ndarray:
        n = self.grid.scan_res
        out = (self.time_map @ y.reshape(-1, self.nu).T).T
        return self.gain * out.reshape(n, n, self.grid.num_bins)

    def to_time_adjoint(self, tau: np.ndarray) -> np.ndarray:
        n = self.grid.scan_res
        flat = tau.reshape(-1, self.grid.num_bins)
        out = (self.time_map_t @ flat.T).T
        return self.gain * out.reshape(n, n, self.nu)

    # The zero padding is pruned axis by axis: transforms are taken over the
    # nonzero block only and inverse transforms keep only the cropped window.
    def convolve(self, rho_u: np.ndarray) -> np.ndarray:
        n, w = self.grid.scan_res, self.workers
        px, py, pu = self.fft_shape
        f = scipy.fft.rfft(rho_u, n=pu, axis=3, workers=w)
        f = scipy.fft.fft(f, n=py, axis=2, workers=w)
        f = scipy.fft.fft(f, n=px, axis=1, workers=w)
        acc = np.einsum("dxyu,dxyu->xyu", f, self.spectra)
        acc = scipy.fft.ifft(acc, axis=0, workers=w)[:n]
        acc = scipy.fft.ifft(acc, axis=1, workers=w)[:, :n]
        return scipy.fft.irfft(acc, n=pu, axis=2, workers=w)[:, :, : self.nu]

    def correlate(self, y: np.ndarray) -> np.ndarray:
        n, w = self.grid.scan_res, self.workers
        px, py, pu = self.fft_shape
        f = scipy.fft.rfft(y, n=pu, axis=2, workers=w)
        f = scipy.fft.fft(f, n=py, axis=1, workers=w)
        f = scipy.fft.fft(f, n=px, axis=0, workers=w)
        prod = np.conj(self.spectra) * f[None]
        prod = scipy.fft.ifft(prod, axis=1, workers=w)[:, :n]
        prod = scipy.fft.ifft(prod, axis=2, workers=w)[:, :, :n]
        return scipy.fft.irfft(prod, n=pu, axis=3, workers=w)[..., : self.nu]

    # -- public maps ----------------------------------------------------
    def forward(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=np.float64)
        if rho.shape != self.domain_shape:
            raise GridMismatchError(f"volume shape {rho.shape} != {self.domain_shape}")
        return self.to_time(self.convolve(self.to_u(rho)))

    def adjoint(self, tau: np.ndarray) -> np.ndarray:
        tau = np.asarray(tau, dtype=np.float64)
        if tau.shape != self.range_shape:
            raise GridMismatchError(f"transient shape {tau.shape} != {self.range_shape}")
        return self.from_u_adjoint(self.correlate(self.to_time_adjoint(tau)))

    def normal(self, rho: np.ndarray) -> np.ndarray:
        return self.adjoint(self.forward(rho))

    # -- light-cone domain ----------------------------------------------
    def transform_data(self, tau: np.ndarray) -> np.ndarray:
        """Histograms mapped onto the ``v`` grid, attenuation compensated and
        divided by the gain, so that ``transformed().forward(rho)`` models them."""
        g = self.grid
        prof = resample_to_v(np.asarray(tau, dtype=np.float64), g.bin_width,
                             g.max_depth, self.nu, self.power)
        return prof / self.gain

    def transformed(self) -> "TransformedOperator":
        if self._transformed is None:
            self._transformed = TransformedOperator(self)
        return self._transformed

    def from_u_pinv(self, rho_u: np.ndarray) -> np.ndarray:
        """Approximate inverse of :meth:`to_u`.

        Each ``u`` sample is shared among the voxels splatted onto it (or
        interpolated where voxels are sparser than samples), then the depth
        weight of the z channel is divided out; ``z = 0`` maps to zero.
        """
        n = self.grid.scan_res
        share = np.asarray(self.depth_map.sum(axis=1)).ravel()
        share = 1.0 / np.maximum(share, 1.0)
        flat = rho_u.reshape(-1, self.nu) * share
        out = (self.depth_map.T @ flat.T).T.reshape(3, n, n, self.grid.depth_res)
        z = self.z_weight
        inv = np.zeros_like(z)
        np.divide(1.0, z, out=inv, where=z > 0)
        out[2] *= inv
        return out


class TransformedOperator:
    """The convolutional part ``rho -> sum_d h_d * R_d(rho_d)`` of an operator.

    Its range is the light-cone grid ``(N, N, Nu)``; measurements are mapped
    there by :meth:`LCTOperator.transform_data`.
    """

    def __init__(self, op: LCTOperator):
        self.op = op
        self.grid = op.grid

    @property
    def domain_shape(self):
        return self.op.domain_shape

    @property
    def range_shape(self):
        n = self.grid.scan_res
        return (n, n, self.op.nu)

    def forward(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=np.float64)
        if rho.shape != self.domain_shape:
            raise GridMismatchError(f"volume shape {rho.shape} != {self.domain_shape}")
        return self.op.convolve(self.op.to_u(rho))

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.range_shape:
            raise GridMismatchError(f"light-cone shape {y.shape} != {self.range_shape}")
        return self.op.from_u_adjoint(self.op.correlate(y))


def _check_grid(vol, grid: ScanGrid):
    if vol.grid != grid:
        raise GridMismatchError(f"volume grid {vol.grid} does not match operator grid {grid}")


def dlct_forward(rho: DirectionalAlbedoVolume, op: LCTOperator | None = None) -> TransientVolume:
    op = op or LCTOperator(rho.grid)
    _check_grid(rho, op.grid)
    return TransientVolume(op.grid, op.forward(rho.data))


def dlct_adjoint(tau: TransientVolume, op: LCTOperator | None = None) -> DirectionalAlbedoVolume:
    op = op or LCTOperator(tau.grid)
    _check_grid(tau, op.grid)
    return DirectionalAlbedoVolume(op.grid, op.adjoint(tau.data))


def direct_convolve(rho_u: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Linear convolution by explicit accumulation over kernel taps.

    ``rho_u`` has shape ``(..., 3, N, N, Nu)`` and ``kernels`` ``(3, 2N-1,
    2N-1, Nu)``; the output keeps only the ``(N, N, Nu)`` window.
    """
    n, nu = rho_u.shape[-3], rho_u.shape[-1]
    out = np.zeros(rho_u.shape[:-4] + (n, n, nu))
    for d in range(3):
        for ia, ib, w in zip(*np.nonzero(kernels[d])):
            a, b = ia - (n - 1), ib - (n - 1)
            h = kernels[d, ia, ib, w]
            # out[x', y', m] += h * rho[x'-a, y'-b, m-w]
            xs = slice(max(a, 0), min(n, n + a))
            ys = slice(max(b, 0), min(n, n + b))
            xr = slice(max(-a, 0), min(n, n - a))
            yr = slice(max(-b, 0), min(n, n - b))
            out[..., xs, ys, w:] += h * rho_u[..., d, xr, yr, : nu - w]
    return out


def discrete_conv_oracle(rho: DirectionalAlbedoVolume | np.ndarray, op: LCTOperator) -> np.ndarray:
    """``op.forward`` recomputed with direct (non-FFT) convolution.

    Accepts a batch of volumes with leading axes; capped at
    ``ORACLE_MAX_VOXELS`` voxels per volume.
    """
    arr = rho.data if isinstance(rho, DirectionalAlbedoVolume) else np.asarray(rho, float)
    g = op.grid
    if g.scan_res * g.scan_res * g.depth_res > ORACLE_MAX_VOXELS:
        raise OracleCapError(
            f"grid {g.scan_res}x{g.scan_res}x{g.depth_res} exceeds oracle cap of "
            f"{ORACLE_MAX_VOXELS} voxels"
        )
    lead = arr.shape[:-4]
    batch = arr.reshape((-1,) + arr.shape[-4:])
    rho_u = np.stack([op.to_u(x) for x in batch])
    y = direct_convolve(rho_u, op.kernels.stacked())
    tau = np.stack([op.to_time(yy) for yy in y])
    return tau.reshape(lead + g.transient_shape)


def _scene_points(scene, grid: ScanGrid):
    """Positions ``(M, 3)`` and directional albedos ``(M, 3)`` of a scene."""
    if isinstance(scene, DirectionalAlbedoVolume):
        _check_grid(scene, grid)
        data = scene.data
        mask = np.any(data != 0, axis=0)
        i, j, k = np.nonzero(mask)
        lat = grid.lateral_positions()
        pos = np.stack([lat[i], lat[j], grid.depths()[k]], axis=1)
        return pos, data[:, i, j, k].T
    if hasattr(scene, "positions"):
        return (np.asarray(scene.positions, float).reshape(-1, 3),
                np.asarray(scene.directional(), float).reshape(-1, 3))
    pos, vec = scene
    return np.asarray(pos, float).reshape(-1, 3), np.asarray(vec, float).reshape(-1, 3)


def brute_force_forward(scene, grid: ScanGrid, clamp_cosine: bool = False) -> TransientVolume:
    """Direct summation of the confocal single-bounce transient.

    ``scene`` is a :class:`DirectionalAlbedoVolume`, a surfel scene, or a
    ``(positions, directional_albedos)`` pair.  Each scene point ``p`` with
    directional albedo ``v`` adds ``<v, w> / r**4`` (or the clamped
    ``max(0, <v, w>) / r**4``) to bin ``round(2 r / bin_width)`` of every scan
    point, where ``w`` is the unit vector from ``p`` to the scan point, its z
    component measured toward the wall.
    Contributions beyond the last bin are dropped.
    """
    pos, vec = _scene_points(scene, grid)
    n, nt = grid.scan_res, grid.num_bins
    out = np.zeros(n * n * nt)
    if len(pos) == 0:
        return TransientVolume(grid, out.reshape(grid.transient_shape))
    lat = grid.lateral_positions()
    qx, qy = np.meshgrid(lat, lat, indexing="ij")
    qx, qy = qx.ravel(), qy.ravel()
    scan_idx = np.arange(n * n)
    for p, v in zip(pos, vec):
        dx, dy, dz = qx - p[0], qy - p[1], p[2]
        r = np.sqrt(dx * dx + dy * dy + dz * dz)
        ok = r > 0
        rr = np.where(ok, r, 1.0)
        shade = (v[0] * dx + v[1] * dy + v[2] * dz) / rr
        if clamp_cosine:
            shade = np.maximum(shade, 0.0)
        contrib = shade / rr**4
        bins = np.floor(2.0 * r / grid.bin_width + 0.5).astype(np.int64)
        ok &= bins < nt
        np.add.at(out, scan_idx[ok] * nt + bins[ok], contrib[ok])
    return TransientVolume(grid, out.reshape(grid.transient_shape))


def relative_l2(a: np.ndarray, b: np.ndarray) -> float:
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den > 0 else float(np.linalg.norm(a))


def calibrate_attenuation(rho: DirectionalAlbedoVolume, powers=(2, 3, 4, 5),
                          clamp_cosine: bool = True, **op_kwargs) -> tuple[int, dict]:
    """Pick the attenuation power whose operator best matches direct summation.

    Returns the minimizing power and the relative L2 error for every
    candidate.
    """
    ref = brute_force_forward(rho, rho.grid, clamp_cosine=clamp_cosine).data
    errors = {}
    for p in powers:
        op = LCTOperator(rho.grid, power=p, **op_kwargs)
        errors[p] = relative_l2(op.forward(rho.data), ref)
    best = min(errors, key=errors.get)
    return best, errors
