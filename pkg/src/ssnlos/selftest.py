"""Oracle checks run by ``ssnlos selftest``.

Each check returns ``(name, measured_error, tolerance, passed)``.  Grids are
small so the whole suite finishes in a few seconds.
"""

from __future__ import annotations

import numpy as np

from . import regularizers as reg
from . import scenes, solvers
from .lct import LCTOperator, brute_force_forward, discrete_conv_oracle, relative_l2
from .volume import ScanGrid

SEED = 1234
FIDELITY_RES_FACTOR = 8


def _rng():
    return np.random.Generator(np.random.Philox(SEED))


def check_adjoint(workers=1):
    grid = ScanGrid(0.6, 8, 0.04, 16)
    op = LCTOperator(grid, workers=workers)
    rng = _rng()
    worst = 0.0
    for _ in range(5):
        x = rng.standard_normal(grid.volume_shape)
        y = rng.standard_normal(grid.transient_shape)
        hx, hty = op.forward(x), op.adjoint(y)
        scale = np.linalg.norm(hx) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(hty)
        worst = max(worst, abs(np.vdot(hx, y) - np.vdot(x, hty)) / scale)
    return "adjoint dot-product", worst, 1e-6


def check_fft_oracle(workers=1):
    grid = ScanGrid(0.6, 8, 0.04, 16)
    op = LCTOperator(grid, workers=workers)
    x = _rng().standard_normal(grid.volume_shape)
    return "fft vs direct convolution", relative_l2(op.forward(x), discrete_conv_oracle(x, op)), 1e-10


def check_svt():
    rng = _rng()
    worst = 0.0
    for _ in range(50):
        p = rng.standard_normal((3, 27))
        theta = float(rng.uniform(0, 3))
        s_in = np.linalg.svd(p, compute_uv=False)
        s_out = np.linalg.svd(reg.svt_patch(p, theta), compute_uv=False)
        worst = max(worst, float(np.max(np.abs(s_out - np.maximum(s_in - theta, 0)))))
    return "svt vs dense svd", worst, 1e-8


def check_prox_identities():
    rho = _rng().standard_normal((3, 6, 6, 6))
    spec = reg.WindowSpec(27, 0.5)
    ident = float(np.max(np.abs(reg.prox_ss(rho, 0.0, spec) - rho)))
    local = float(np.max(np.abs(reg.prox_ss(rho, 0.3, reg.WindowSpec(1, 0.5)) - reg.prox_local_ss(rho, 0.3))))
    return [("prox_ss theta=0 identity", ident, 1e-12), ("prox_ss L=1 equals local", local, 1e-12)]


def check_jacobi():
    a = _rng().standard_normal((200, 3, 3))
    a = a + np.swapaxes(a, 1, 2)
    w, _ = reg.jacobi_eigh(a)
    ref = np.sort(np.linalg.eigvalsh(a), axis=-1)[..., ::-1]
    return "jacobi eigenvalues", float(np.max(np.abs(w - ref))), 1e-10


def check_gradient(workers=1):
    grid = ScanGrid(0.6, 8, 0.04, 16)
    op = LCTOperator(grid, workers=workers)
    rng = _rng()
    rho = rng.standard_normal(grid.volume_shape)
    tau = rng.standard_normal(grid.transient_shape)
    grad = solvers.fidelity_gradient(op, rho, tau)

    def fid(x):
        r = op.forward(x) - tau
        return 0.5 * np.vdot(r, r)

    worst = 0.0
    h = 1e-5 * np.linalg.norm(rho)
    for _ in range(3):
        d = rng.standard_normal(grid.volume_shape)
        d /= np.linalg.norm(d)
        fd = (fid(rho + h * d) - fid(rho - h * d)) / (2 * h)
        an = np.vdot(grad, d)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-300))
    return "gradient vs finite differences", worst, 1e-5


def check_brute_force(workers=1):
    grid = ScanGrid(0.6, 16, 0.02, 64)
    truth = scenes.rasterize_scene(scenes.t_plane(grid, 0.4), grid)
    op = LCTOperator(grid, transform_res=FIDELITY_RES_FACTOR * grid.num_bins, workers=workers)
    ref = brute_force_forward(truth, grid, clamp_cosine=True).data
    return "operator vs direct summation", relative_l2(op.forward(truth.data), ref), 0.15


def run_checks(workers: int = 1):
    checks = [
        check_adjoint(workers),
        check_fft_oracle(workers),
        check_svt(),
        *check_prox_identities(),
        check_jacobi(),
        check_gradient(workers),
        check_brute_force(workers),
    ]
    return [(name, float(err), tol, bool(err <= tol)) for name, err, tol in checks]
