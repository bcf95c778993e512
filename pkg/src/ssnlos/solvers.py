"""FISTA with pluggable proximal maps, spectral step estimation and a Wiener baseline.

The reconstruction problem is

    minimize  1/2 ||H rho - tau||^2 + lambda * R(rho)

with ``H`` the directional light-cone operator and ``R`` one of the
structure-sparsity penalty, its voxelwise (local) variant or the l1 norm.
The data term can be measured on the histograms themselves or on the
light-cone grid, where the measurement is resampled to ``v = r**2`` and
compensated for attenuation so that ``H`` reduces to its convolutional
part.  The histogram domain weights shallow voxels by ``1 / r**4``, which
makes ``H^T H`` so badly conditioned that a fixed-step method barely moves
deep voxels; the light-cone domain is therefore the default.

The solvers work on plain arrays through any object exposing ``forward``
and ``adjoint`` so that tests can plug in small linear maps.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import regularizers as reg
from .lct import LCTOperator
from .volume import DirectionalAlbedoVolume, GridMismatchError, ScanGrid, TransientVolume

METHODS = ("ss", "local-ss", "l1", "wiener")
DOMAINS = ("light-cone", "histogram")
LAMBDA_MODES = ("relative", "absolute")
SAFETY_FACTOR = 1.05
LIPSCHITZ_SEED = 20240601


class SolverError(RuntimeError):
    pass


class DivergedError(SolverError):
    """Raised when the objective becomes NaN or infinite."""

    def __init__(self, iteration: int, value: float):
        super().__init__(f"objective became non-finite ({value}) at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolverConfig:
    """Settings of one reconstruction.

    Parameters
    ----------
    method : {"ss", "local-ss", "l1", "wiener"}
    lam : float
        Weight of the penalty term; see ``lambda_mode``.
    max_iters : int
    rel_tol : float
        Stop once ``||x_k - x_{k-1}|| <= rel_tol * ||x_k||``.
    window : WindowSpec
        Neighbourhood used by the structure-sparsity penalty.
    wiener_alpha : float
        Signal-to-noise parameter of the Wiener baseline.
    lipschitz_iters : int
        Power iterations used to estimate the step size.
    monotone_restart : bool
        Reject steps that increase the objective and reset the momentum.
    nonneg_z : bool
        Clamp the wall-facing component to be nonnegative after every prox.
    warm_start : bool
        Start from the Wiener reconstruction instead of zero.
    domain : {"light-cone", "histogram"}
        Space in which the data term is measured.
    lambda_mode : {"relative", "absolute"}
        ``relative`` multiplies ``lam`` by ``||H^T tau||_inf`` of the data at
        hand, the smallest l1 weight whose solution is zero, so that one
        value suits any photon count or geometry.
    """

    method: str = "ss"
    lam: float = 1e-2
    max_iters: int = 100
    rel_tol: float = 1e-4
    window: reg.WindowSpec = field(default_factory=reg.WindowSpec)
    wiener_alpha: float = 0.1
    lipschitz_iters: int = 30
    monotone_restart: bool = True
    nonneg_z: bool = False
    warm_start: bool = False
    domain: str = "light-cone"
    lambda_mode: str = "relative"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be a finite value >= 0")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be an integer >= 1")
        if not self.rel_tol >= 0:
            raise ValueError("rel_tol must be >= 0")
        if not (np.isfinite(self.wiener_alpha) and self.wiener_alpha > 0):
            raise ValueError("wiener_alpha must be > 0")
        if int(self.lipschitz_iters) != self.lipschitz_iters or self.lipschitz_iters < 1:
            raise ValueError("lipschitz_iters must be an integer >= 1")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}; expected one of {', '.join(DOMAINS)}")


@dataclass
class SolveReport:
    """Per-iteration objective history of a solve."""

    fidelity: list = field(default_factory=list)
    penalty: list = field(default_factory=list)
    total: list = field(default_factory=list)
    iterations: int = 0
    stop_reason: str = ""
    wall_time: float = 0.0
    lipschitz: float = 0.0
    lam: float = 0.0
    restarts: int = 0

    def record(self, fid: float, pen: float):
        self.fidelity.append(float(fid))
        self.penalty.append(float(pen))
        self.total.append(float(fid + pen))

    def rows(self):
        for k, (f, p, t) in enumerate(zip(self.fidelity, self.penalty, self.total), start=1):
            yield k, f, p, t

    def to_csv(self, path) -> None:
        """Write ``iteration,fidelity,penalty,total`` rows with LF endings."""
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["iteration", "fidelity", "penalty", "total"])
            for k, f, p, t in self.rows():
                writer.writerow([k, repr(f), repr(p), repr(t)])


def _domain_shape(operator, grid):
    if isinstance(grid, ScanGrid):
        return grid.volume_shape
    if grid is None:
        return tuple(operator.domain_shape)
    return tuple(grid)


def estimate_lipschitz(operator, grid=None, iters: int = 30, seed: int = LIPSCHITZ_SEED) -> float:
    """Largest eigenvalue of ``H^T H`` by power iteration.

    The estimate is the Rayleigh quotient of the last iterate, which never
    decreases with ``iters`` for a positive semidefinite map.  The solver
    multiplies it by :data:`SAFETY_FACTOR` before using it as a step size.

    Parameters
    ----------
    operator
        Object with ``forward`` and ``adjoint`` methods.
    grid : ScanGrid or tuple, optional
        Domain grid or shape; defaults to ``operator.domain_shape``.
    iters : int
        Number of power iterations (>= 1).
    seed : int
        Seed of the random start vector.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    shape = _domain_shape(operator, grid)
    x = np.random.Generator(np.random.Philox(seed)).standard_normal(shape)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(int(iters)):
        y = operator.adjoint(operator.forward(x))
        estimate = float(np.vdot(x, y))
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0
        x = y / norm
    return max(estimate, 0.0)


def lambda_scale(operator, data: np.ndarray, config: SolverConfig) -> float:
    """Factor turning ``config.lam`` into the penalty weight for ``data``."""
    if config.lambda_mode == "absolute":
        return 1.0
    return float(np.max(np.abs(operator.adjoint(data)), initial=0.0))


def penalty_value(rho: np.ndarray, config: SolverConfig, lam: float | None = None) -> float:
    """``lam * R(rho)``; ``lam`` defaults to ``config.lam``."""
    lam = config.lam if lam is None else lam
    if lam == 0:
        return 0.0
    if config.method == "ss":
        value = reg.ss_value(rho, config.window)
    elif config.method == "local-ss":
        value = reg.local_ss_value(rho)
    elif config.method == "l1":
        value = reg.l1_value(rho)
    else:
        return 0.0
    return lam * value


def proximal_map(rho: np.ndarray, theta: float, config: SolverConfig) -> np.ndarray:
    if config.method == "ss":
        return reg.prox_ss(rho, theta, config.window)
    if config.method == "local-ss":
        return reg.prox_local_ss(rho, theta)
    if config.method == "l1":
        return reg.prox_l1(rho, theta)
    raise SolverError(f"method {config.method!r} has no proximal map")


def fidelity_gradient(operator, rho: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Gradient ``H^T (H rho - tau)`` of the data term."""
    return operator.adjoint(operator.forward(rho) - tau)


def _operator_for(grid: ScanGrid, op):
    if op is None:
        return LCTOperator(grid)
    if getattr(op, "grid", grid) != grid:
        raise GridMismatchError(f"operator grid {op.grid} does not match volume grid {grid}")
    return op


def data_problem(tau: TransientVolume, config: SolverConfig, op: LCTOperator | None = None):
    """Operator and data array of the data term selected by ``config.domain``."""
    op = _operator_for(tau.grid, op)
    if config.domain == "histogram":
        return op, tau.data
    return op.transformed(), op.transform_data(tau.data)


def objective(rho, tau, config: SolverConfig, op=None) -> tuple[float, float, float]:
    """Return ``(fidelity, penalty, total)`` of a reconstruction.

    ``rho`` and ``tau`` may be volumes (their grids must agree; the data
    term then follows ``config.domain``) or arrays together with an explicit
    operator, in which case ``tau`` must already live in its range.
    """
    if isinstance(rho, DirectionalAlbedoVolume) or isinstance(tau, TransientVolume):
        if not (isinstance(rho, DirectionalAlbedoVolume) and isinstance(tau, TransientVolume)):
            raise GridMismatchError("objective needs a directional volume and a transient volume")
        if rho.grid != tau.grid:
            raise GridMismatchError(f"grids differ: {rho.grid} vs {tau.grid}")
        op, tau = data_problem(tau, config, op)
        rho = rho.data
    elif op is None:
        raise ValueError("an operator is required for array inputs")
    lam = config.lam * lambda_scale(op, tau, config)
    resid = op.forward(rho) - tau
    fid = 0.5 * float(np.vdot(resid, resid))
    pen = penalty_value(rho, config, lam)
    total = fid + pen
    if not np.isfinite(total):
        raise DivergedError(0, total)
    return fid, pen, total


def _lipschitz(op, config: SolverConfig) -> float:
    cache = getattr(op, "_lipschitz_cache", None)
    if cache is None:
        cache = {}
        try:
            op._lipschitz_cache = cache
        except AttributeError:
            pass
    key = int(config.lipschitz_iters)
    if key not in cache:
        cache[key] = estimate_lipschitz(op, None, key)
    return cache[key]


def fista(op, tau: np.ndarray, config: SolverConfig, x0: np.ndarray | None = None):
    """Array-level FISTA; returns ``(rho, report)``.

    Each iteration costs one forward and one adjoint application: the image
    of the extrapolated point is formed from the images of the iterates by
    linearity.
    """
    if config.method == "wiener":
        raise SolverError("the Wiener baseline is not iterative; use wiener_reconstruct")
    start = time.perf_counter()
    report = SolveReport()
    lip = SAFETY_FACTOR * _lipschitz(op, config)
    report.lipschitz = lip
    tau = np.asarray(tau, dtype=np.float64)
    shape = _domain_shape(op, None)

    x = np.zeros(shape) if x0 is None else np.array(x0, dtype=np.float64)
    hx = op.forward(x)
    resid = hx - tau
    fid = 0.5 * float(np.vdot(resid, resid))
    lam = config.lam * lambda_scale(op, tau, config)
    report.lam = lam
    current = fid + penalty_value(x, config, lam)
    if lip == 0:
        report.record(fid, current - fid)
        report.iterations, report.stop_reason = 1, "zero operator"
        report.wall_time = time.perf_counter() - start
        return x, report

    x_prev, hx_prev = x, hx
    y, hy = x, hx
    t = 1.0
    theta = lam / lip
    for k in range(1, int(config.max_iters) + 1):
        grad = op.adjoint(hy - tau)
        z = proximal_map(y - grad / lip, theta, config)
        if config.nonneg_z:
            np.maximum(z[2], 0.0, out=z[2])
        hz = op.forward(z)
        resid = hz - tau
        fid_z = 0.5 * float(np.vdot(resid, resid))
        pen_z = penalty_value(z, config, lam)
        total_z = fid_z + pen_z
        if not np.isfinite(total_z):
            raise DivergedError(k, total_z)

        if config.monotone_restart and total_z > current:
            report.restarts += 1
            report.record(fid, current - fid)
            report.iterations = k
            if y is x:
                report.stop_reason = "no descent"
                break
            # drop the momentum and retry from the last accepted iterate
            y, hy, t = x, hx, 1.0
            continue

        x_prev, hx_prev = x, hx
        x, hx = z, hz
        fid, current = fid_z, total_z
        report.record(fid, pen_z)
        report.iterations = k

        step = np.linalg.norm(x - x_prev)
        size = np.linalg.norm(x)
        if step == 0 or step <= config.rel_tol * size:
            report.stop_reason = "converged"
            break
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_next
        t = t_next
        if beta == 0:
            y, hy = x, hx
        else:
            y = x + beta * (x - x_prev)
            hy = hx + beta * (hx - hx_prev)
    else:
        report.stop_reason = "max_iters"
    report.wall_time = time.perf_counter() - start
    return x, report


def momentum_sequence(count: int) -> np.ndarray:
    """The FISTA momentum values ``t_1 = 1, t_2, ...``."""
    t = [1.0]
    while len(t) < count:
        t.append(0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t[-1] ** 2)))
    return np.array(t[:count])


def fista_reconstruct(tau: TransientVolume, config: SolverConfig, op: LCTOperator | None = None):
    """Reconstruct a directional albedo volume with FISTA.

    Returns
    -------
    (DirectionalAlbedoVolume, SolveReport)
    """
    op = _operator_for(tau.grid, op)
    x0 = None
    if config.warm_start:
        x0 = wiener_reconstruct(op, tau.data, config.wiener_alpha)
    problem, data = data_problem(tau, config, op)
    rho, report = fista(problem, data, config, x0)
    return DirectionalAlbedoVolume(tau.grid, rho), report


def wiener_filter(spectra: np.ndarray, data_spectrum: np.ndarray, alpha: float) -> np.ndarray:
    """Joint Wiener deconvolution of a one-to-many convolution block.

    ``out_d = conj(h_d) * Y / (sum_d |h_d|^2 + 1 / alpha)`` for kernel spectra
    ``h`` of shape ``(D, ...)`` and data spectrum ``Y``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    power = np.sum(np.abs(spectra) ** 2, axis=0)
    return np.conj(spectra) * (data_spectrum / (power + 1.0 / alpha))[None]


def wiener_reconstruct(op: LCTOperator, tau: np.ndarray, alpha: float) -> np.ndarray:
    """Array-level Wiener baseline on the operator's transformed grid.

    The kernel spectra are scaled to unit peak response before filtering so
    that ``alpha`` does not depend on the grid geometry.
    """
    grid = op.grid
    n, nu = grid.scan_res, op.nu
    px, py, pu = op.fft_shape
    peak = float(np.max(np.sum(np.abs(op.spectra) ** 2, axis=0)))
    if peak == 0:
        return np.zeros(grid.volume_shape)
    scale = np.sqrt(peak)
    prof = op.transform_data(tau) / scale
    spec = np.fft.rfftn(prof, s=(px, py, pu), axes=(0, 1, 2))
    est = wiener_filter(op.spectra / scale, spec, alpha)
    rho_u = np.fft.irfftn(est, s=(px, py, pu), axes=(1, 2, 3))[:, :n, :n, :nu]
    return op.from_u_pinv(rho_u)


def wiener_dlct_reconstruct(tau: TransientVolume, config: SolverConfig,
                            op: LCTOperator | None = None) -> DirectionalAlbedoVolume:
    """Closed-form Wiener-filtered directional light-cone reconstruction."""
    op = _operator_for(tau.grid, op)
    return DirectionalAlbedoVolume(tau.grid, wiener_reconstruct(op, tau.data, config.wiener_alpha))


def reconstruct(tau: TransientVolume, config: SolverConfig, op: LCTOperator | None = None):
    """Dispatch on ``config.method``; Wiener returns an empty report."""
    if config.method == "wiener":
        start = time.perf_counter()
        rho = wiener_dlct_reconstruct(tau, config, op)
        report = SolveReport(stop_reason="closed form", wall_time=time.perf_counter() - start)
        return rho, report
    return fista_reconstruct(tau, config, op)
