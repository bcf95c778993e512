import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssnlos import regularizers as reg
from ssnlos import scenes, solvers
from ssnlos.lct import LCTOperator
from ssnlos.solvers import (
    DivergedError,
    SolveReport,
    SolverConfig,
    SolverError,
    estimate_lipschitz,
    fista,
    fista_reconstruct,
    momentum_sequence,
    objective,
    reconstruct,
    wiener_filter,
)
from ssnlos.volume import (
    DirectionalAlbedoVolume,
    GridMismatchError,
    ScanGrid,
    TransientVolume,
)

SHAPE = (3, 3, 3, 3)


class Scaled:
    """``H = c * I`` on a small volume shape."""

    def __init__(self, c=1.0, shape=SHAPE):
        self.c = c
        self.domain_shape = shape

    def forward(self, x):
        return self.c * x

    def adjoint(self, y):
        return self.c * y


class Diagonal:
    def __init__(self, d):
        self.d = np.asarray(d, float)
        self.domain_shape = self.d.shape

    def forward(self, x):
        return self.d * x

    def adjoint(self, y):
        return self.d * y


def _rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


GRID = ScanGrid(0.6, 8, 0.04, 16)


@pytest.fixture(scope="module")
def op():
    return LCTOperator(GRID)


@pytest.fixture(scope="module")
def noisy_tau():
    g = ScanGrid(0.6, 8, 0.04, 16)
    sc = scenes.t_plane(g, 0.3)
    clean = scenes.render_transients(sc, g)
    return scenes.apply_noise(clean, scenes.NoiseSpec(50, 1.0, 3))


@pytest.mark.parametrize("c, expected", [(1.0, 1.0), (2.0, 4.0), (0.5, 0.25)])
def test_lipschitz_of_scaled_identity(c, expected):
    assert estimate_lipschitz(Scaled(c), iters=3) == pytest.approx(expected, rel=1e-12)


def test_lipschitz_of_diagonal_and_monotone_in_iters():
    d = np.ones(SHAPE)
    d[0, 0, 0, 0] = 3.0
    d[1, 1, 1, 1] = 2.9
    op = Diagonal(d)
    values = [estimate_lipschitz(op, iters=k) for k in (1, 5, 20, 200)]
    assert all(a <= b + 1e-15 for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(9.0, rel=1e-6)
    assert values[-1] <= 9.0 * (1 + 1e-12)


def test_lipschitz_accepts_grid_or_shape(op):
    a = estimate_lipschitz(op, GRID, iters=5)
    b = estimate_lipschitz(op, GRID.volume_shape, iters=5)
    assert a == b > 0
    with pytest.raises(ValueError):
        estimate_lipschitz(op, iters=0)


def test_lipschitz_of_zero_operator():
    assert estimate_lipschitz(Scaled(0.0), iters=5) == 0.0


def test_momentum_sequence():
    t = momentum_sequence(3)
    assert t[0] == 1.0
    assert t[1] == pytest.approx(1.618034, abs=1e-6)
    assert t[2] == pytest.approx(0.5 * (1 + np.sqrt(1 + 4 * t[1] ** 2)))


@pytest.mark.parametrize(
    "kwargs",
    [dict(method="tv"), dict(lam=-1.0), dict(lam=float("nan")), dict(max_iters=0),
     dict(rel_tol=-1.0), dict(wiener_alpha=0.0), dict(lipschitz_iters=0),
     dict(domain="fourier"), dict(lambda_mode="scaled")],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_l1_on_identity_converges_to_soft_threshold():
    tau = _rng(1).standard_normal(SHAPE)
    cfg = SolverConfig(method="l1", lam=0.3, lambda_mode="absolute", max_iters=500, rel_tol=1e-12)
    x, rep = fista(Scaled(1.0), tau, cfg)
    np.testing.assert_allclose(x, reg.prox_l1(tau, 0.3), atol=1e-9)
    assert rep.lipschitz == pytest.approx(solvers.SAFETY_FACTOR)
    assert rep.lam == 0.3


def test_local_ss_on_identity_converges_to_group_shrink():
    tau = _rng(2).standard_normal(SHAPE)
    cfg = SolverConfig(method="local-ss", lam=0.5, lambda_mode="absolute", max_iters=500, rel_tol=1e-12)
    x, _ = fista(Scaled(1.0), tau, cfg)
    np.testing.assert_allclose(x, reg.prox_local_ss(tau, 0.5), atol=1e-9)


def test_zero_data_gives_zero():
    cfg = SolverConfig(method="ss", lam=0.1, max_iters=5)
    x, rep = fista(Scaled(1.0), np.zeros(SHAPE), cfg)
    assert not np.any(x)
    assert rep.stop_reason == "converged"
    assert rep.total[-1] == 0.0


def test_huge_lambda_gives_zero():
    tau = _rng(3).standard_normal(SHAPE)
    cfg = SolverConfig(method="l1", lam=1.0, max_iters=20)  # relative: the zero threshold
    x, rep = fista(Scaled(1.0), tau, cfg)
    # with the lambda at ||H^T tau||_inf and a step of 1/1.05 no entry survives
    assert not np.any(x)
    assert rep.lam == pytest.approx(np.max(np.abs(tau)))


def test_relative_lambda_scale(op):
    data = _rng(4).standard_normal(GRID.transient_shape)
    cfg = SolverConfig(lam=0.1)
    assert solvers.lambda_scale(op, data, cfg) == pytest.approx(np.max(np.abs(op.adjoint(data))))
    assert solvers.lambda_scale(op, data, SolverConfig(lambda_mode="absolute")) == 1.0


def test_objective_by_hand_on_histogram_domain(op):
    rng = _rng(5)
    rho = rng.standard_normal(GRID.volume_shape)
    tau = rng.standard_normal(GRID.transient_shape)
    cfg = SolverConfig(method="l1", lam=0.2, lambda_mode="absolute", domain="histogram")
    fid, pen, total = objective(DirectionalAlbedoVolume(GRID, rho), TransientVolume(GRID, tau), cfg, op)
    r = op.forward(rho) - tau
    assert fid == pytest.approx(0.5 * np.sum(r * r), rel=1e-12)
    assert pen == pytest.approx(0.2 * np.abs(rho).sum(), rel=1e-12)
    assert total == pytest.approx(fid + pen)


def test_objective_light_cone_domain(op):
    rng = _rng(6)
    rho = rng.standard_normal(GRID.volume_shape)
    tau = rng.standard_normal(GRID.transient_shape)
    cfg = SolverConfig(method="local-ss", lam=0.1, lambda_mode="absolute")
    fid, pen, _ = objective(DirectionalAlbedoVolume(GRID, rho), TransientVolume(GRID, tau), cfg, op)
    r = op.transformed().forward(rho) - op.transform_data(tau)
    assert fid == pytest.approx(0.5 * np.sum(r * r), rel=1e-12)
    assert pen == pytest.approx(0.1 * np.linalg.norm(rho, axis=0).sum(), rel=1e-12)


def test_objective_rejects_mismatched_inputs(op):
    other = ScanGrid(0.6, 8, 0.05, 16)
    rho = DirectionalAlbedoVolume(GRID, np.zeros(GRID.volume_shape))
    with pytest.raises(GridMismatchError):
        objective(rho, TransientVolume(other, np.zeros(other.transient_shape)), SolverConfig())
    with pytest.raises(ValueError):
        objective(np.zeros(SHAPE), np.zeros(SHAPE), SolverConfig())
    with pytest.raises(DivergedError, match="non-finite"):
        objective(np.full(SHAPE, np.inf), np.zeros(SHAPE), SolverConfig(method="l1"), Scaled())


def test_fista_rejects_wrong_grid_operator(op):
    other = ScanGrid(0.6, 8, 0.05, 16)
    tau = TransientVolume(other, np.zeros(other.transient_shape))
    with pytest.raises(GridMismatchError):
        fista_reconstruct(tau, SolverConfig(), op)


def test_fista_refuses_wiener():
    with pytest.raises(SolverError):
        fista(Scaled(), np.zeros(SHAPE), SolverConfig(method="wiener"))


def test_divergence_is_reported():
    class Broken(Scaled):
        def forward(self, x):
            out = super().forward(x)
            if np.any(x):
                out = out * np.nan
            return out

    tau = _rng(7).standard_normal(SHAPE)
    with pytest.raises(DivergedError, match="iteration 1"):
        fista(Broken(), tau, SolverConfig(method="l1", lam=0.01, lipschitz_iters=1))


def test_gradient_matches_finite_differences(op):
    rng = _rng(8)
    rho = rng.standard_normal(GRID.volume_shape)
    tau = rng.standard_normal(GRID.transient_shape)
    grad = solvers.fidelity_gradient(op, rho, tau)

    def fid(x):
        r = op.forward(x) - tau
        return 0.5 * np.vdot(r, r)

    h = 1e-5 * np.linalg.norm(rho)
    for _ in range(5):
        d = rng.standard_normal(GRID.volume_shape)
        d /= np.linalg.norm(d)
        fd = (fid(rho + h * d) - fid(rho - h * d)) / (2 * h)
        assert abs(fd - np.vdot(grad, d)) <= 1e-5 * abs(np.vdot(grad, d))


@pytest.mark.parametrize("method", ["ss", "local-ss", "l1"])
@pytest.mark.parametrize("domain", ["light-cone", "histogram"])
def test_objective_is_monotone_and_report_recomputes(method, domain, op, noisy_tau):
    cfg = SolverConfig(method=method, lam=0.01, max_iters=30, domain=domain)
    rho, rep = fista_reconstruct(noisy_tau, cfg, op)
    assert len(rep.total) == rep.iterations
    assert all(b <= a for a, b in zip(rep.total, rep.total[1:]))
    _, _, total = objective(rho, noisy_tau, cfg, op)
    assert total == pytest.approx(rep.total[-1], rel=1e-9)


def test_nonneg_z_clamps(op, noisy_tau):
    rho, _ = fista_reconstruct(noisy_tau, SolverConfig(method="l1", lam=0.01, max_iters=10, nonneg_z=True), op)
    assert rho.data[2].min() >= 0


def test_warm_start_starts_below_cold_start(op, noisy_tau):
    base = dict(method="l1", lam=0.01, max_iters=1, monotone_restart=False)
    _, cold = fista_reconstruct(noisy_tau, SolverConfig(**base), op)
    _, warm = fista_reconstruct(noisy_tau, SolverConfig(warm_start=True, wiener_alpha=10.0, **base), op)
    assert warm.iterations == cold.iterations == 1
    assert warm.total[0] < cold.total[0]


def test_solve_is_deterministic(op, noisy_tau):
    cfg = SolverConfig(method="ss", lam=0.01, max_iters=5)
    a, ra = fista_reconstruct(noisy_tau, cfg, op)
    b, rb = fista_reconstruct(noisy_tau, cfg, op)
    assert a.data.tobytes() == b.data.tobytes()
    assert ra.total == rb.total


def test_report_csv(tmp_path):
    rep = SolveReport()
    rep.record(1.5, 0.25)
    rep.record(1.0, 0.1)
    path = tmp_path / "r.csv"
    rep.to_csv(path)
    assert path.read_bytes() == b"iteration,fidelity,penalty,total\n1,1.5,0.25,1.75\n2,1.0,0.1,1.1\n"


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(1e-3, 1e3), seed=st.integers(0, 2**32 - 1))
def test_wiener_filter_on_identity_kernel(alpha, seed):
    y = _rng(seed).standard_normal((4, 5)) + 1j * _rng(seed + 1).standard_normal((4, 5))
    out = wiener_filter(np.ones((1, 4, 5)), y, alpha)
    np.testing.assert_allclose(out[0], y * alpha / (1 + alpha), rtol=1e-12)


def test_wiener_filter_rejects_bad_alpha():
    with pytest.raises(ValueError):
        wiener_filter(np.ones((1, 2)), np.ones(2), 0.0)


def test_wiener_dispatch_reports_no_iterations(op, noisy_tau):
    rho, rep = reconstruct(noisy_tau, SolverConfig(method="wiener", wiener_alpha=1.0), op)
    assert rep.iterations == 0 and rep.total == []
    assert rep.stop_reason == "closed form"
    assert rho.data.shape == GRID.volume_shape
    assert np.all(np.isfinite(rho.data))


def test_reconstruct_localizes_single_surfel():
    g = ScanGrid(0.6, 16, 0.02, 32)
    lat = g.lateral_positions()
    pos = (lat[9], lat[6], g.depths()[18])
    sc = scenes.single_surfel(pos)
    tau = scenes.render_transients(sc, g)
    truth = scenes.rasterize_scene(sc, g)
    target = np.unravel_index(np.argmax(truth.albedo()), g.volume_shape[1:])
    op = LCTOperator(g)
    for cfg in (SolverConfig(method="wiener", wiener_alpha=10.0),
                SolverConfig(method="local-ss", lam=1e-3, max_iters=40)):
        rho, _ = reconstruct(tau, cfg, op)
        assert np.unravel_index(np.argmax(rho.albedo()), g.volume_shape[1:]) == target


def test_unregularized_fista_beats_wiener_fidelity():
    g = ScanGrid(0.6, 16, 0.04, 16)
    tau = scenes.render_transients(scenes.t_plane(g, 0.3), g)
    op = LCTOperator(g)
    cfg = SolverConfig(method="l1", lam=0.0, max_iters=200, rel_tol=0.0)
    rho, rep = fista_reconstruct(tau, cfg, op)
    wiener = solvers.wiener_dlct_reconstruct(tau, SolverConfig(method="wiener", wiener_alpha=1e3), op)
    fid_w, _, _ = objective(wiener, tau, cfg, op)
    assert rep.fidelity[-1] <= fid_w
