"""Structure-sparsity, local-SS and l1 penalties with their proximal maps.

For every voxel ``n`` the structure-sparsity penalty gathers the
directional albedos of a cubic window into a ``3 x L`` matrix whose column
``l`` is ``sqrt(w_l) * rho[n + o_l]`` and sums the nuclear norms of these
matrices over the volume.

Everything is computed from the per-voxel ``3 x 3`` Gram matrices
``G_n = sum_l w_l rho[n + o_l] rho[n + o_l]^T``: their eigenvalues are the
squared singular values, and singular-value thresholding of the patch is
``P -> M_n P`` with ``M_n = U diag(max(s - t, 0) / s) U^T``.

The overlapping-window prox has no closed form.  :func:`prox_ss` applies
the patchwise thresholding and averages the estimates every window gives
for a voxel with the window weights, renormalized over in-volume windows.
This is nonexpansive and reduces to the exact prox when windows do not
overlap, but it is an approximation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 30

# packed order of the symmetric Gram entries
_SYM = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class WindowSpec:
    """Cubic neighbourhood window with Gaussian weights.

    ``size`` is the voxel count ``L`` of the window (1, 27, 125, ...);
    ``size == 1`` selects local SS.
    """

    size: int = 27
    sigma: float = 0.5

    def __post_init__(self):
        side = round(self.size ** (1.0 / 3.0))
        if side**3 != self.size or side % 2 == 0:
            raise ValueError(f"window size {self.size} is not the cube of an odd side")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")

    @property
    def side(self) -> int:
        return round(self.size ** (1.0 / 3.0))

    @property
    def radius(self) -> int:
        return self.side // 2

    @cached_property
    def offsets(self) -> np.ndarray:
        """``(L, 3)`` integer offsets in raster order (last axis fastest)."""
        r = np.arange(-self.radius, self.radius + 1)
        grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1)
        return grid.reshape(-1, 3)

    @cached_property
    def weights(self) -> np.ndarray:
        return gaussian_window_weights(self)

    @cached_property
    def axis_weights(self) -> np.ndarray:
        """1-D factor of the weights: ``weights == outer(g, g, g).ravel()``."""
        r = np.arange(-self.radius, self.radius + 1, dtype=float)
        g = np.exp(-(r**2) / (2.0 * self.sigma**2))
        return g / g.sum()


def gaussian_window_weights(spec: WindowSpec) -> np.ndarray:
    """``w_l = exp(-|o_l|^2 / (2 sigma^2))`` normalized to unit sum."""
    if not spec.sigma > 0:
        raise ValueError("sigma must be > 0")
    d2 = np.sum(spec.offsets.astype(float) ** 2, axis=1)
    w = np.exp(-d2 / (2.0 * spec.sigma**2))
    return w / w.sum()


def extract_patch_matrix(rho: np.ndarray, index, spec: WindowSpec) -> np.ndarray:
    """The ``3 x L`` weighted patch matrix of voxel ``index``.

    Neighbours outside the volume give zero columns.
    """
    rho = np.asarray(rho, dtype=float)
    shape = np.array(rho.shape[1:])
    idx = np.asarray(index)[None, :] + spec.offsets
    inside = np.all((idx >= 0) & (idx < shape), axis=1)
    out = np.zeros((3, spec.size))
    cols = idx[inside]
    out[:, inside] = rho[:, cols[:, 0], cols[:, 1], cols[:, 2]]
    return out * np.sqrt(spec.weights)


def patch_nuclear_norm(patch: np.ndarray) -> float:
    s = np.sqrt(np.clip(jacobi_eigh(patch @ patch.T)[0], 0.0, None))
    return float(s.sum())


def _window_sum(field: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """``out[n] = sum_l w_l field[n + o_l]`` over the last three axes, zeros outside.

    The Gaussian weights are separable and symmetric, so this runs as three
    1-D passes and equals the sum with offsets negated.
    """
    g = spec.axis_weights
    r = spec.radius
    out = field
    for axis in (-3, -2, -1):
        n = out.shape[axis]
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        fp = np.pad(out, pad)
        acc = np.zeros_like(out)
        for k, w in enumerate(g):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(k, k + n)
            acc += w * fp[tuple(sl)]
        out = acc
    return out


def gram_packed(rho: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Packed Gram entries ``(6, N, N, Nz)`` in ``_SYM`` order."""
    outer = np.stack([rho[i] * rho[j] for i, j in _SYM])
    return _window_sum(outer, spec)


def gram_field(rho: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Per-voxel Gram matrices ``(N, N, Nz, 3, 3)`` of the patch matrices."""
    packed = gram_packed(rho, spec)
    g = np.empty(rho.shape[1:] + (3, 3))
    for c, (i, j) in enumerate(_SYM):
        g[..., i, j] = packed[c]
        g[..., j, i] = packed[c]
    return g


def _jacobi_packed(comp: list, want_vectors: bool, tol: float, max_sweeps: int):
    """Cyclic Jacobi on packed symmetric entries ``[a00, a11, a22, a01, a02, a12]``.

    Every entry is an array over the batch; the batch is swept as a whole
    until the largest relative off-diagonal norm drops below ``tol``.
    """
    d = [comp[0].copy(), comp[1].copy(), comp[2].copy()]
    off = {(0, 1): comp[3].copy(), (0, 2): comp[4].copy(), (1, 2): comp[5].copy()}
    scale = np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2
                    + 2.0 * (off[0, 1] ** 2 + off[0, 2] ** 2 + off[1, 2] ** 2))
    thresh = tol * scale
    vec = None
    if want_vectors:
        one, zero = np.ones_like(d[0]), np.zeros_like(d[0])
        vec = [[one.copy() if i == j else zero.copy() for j in range(3)] for i in range(3)]
    for _ in range(max_sweeps):
        res = np.sqrt(2.0 * (off[0, 1] ** 2 + off[0, 2] ** 2 + off[1, 2] ** 2))
        if not np.any(res > thresh):
            break
        for p, q, r in ((0, 1, 2), (0, 2, 1), (1, 2, 0)):
            apq = off[p, q]
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                theta = (d[q] - d[p]) / (2.0 * apq)
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where((apq != 0) & np.isfinite(t), t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            d[p] = d[p] - t * apq
            d[q] = d[q] + t * apq
            off[p, q] = np.zeros_like(apq)
            rp = off[min(r, p), max(r, p)]
            rq = off[min(r, q), max(r, q)]
            off[min(r, p), max(r, p)] = c * rp - s * rq
            off[min(r, q), max(r, q)] = s * rp + c * rq
            if want_vectors:
                for k in range(3):
                    vp, vq = vec[k][p], vec[k][q]
                    vec[k][p] = c * vp - s * vq
                    vec[k][q] = s * vp + c * vq
    return d, vec


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL,
                max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a batch of symmetric ``3 x 3`` matrices.

    Cyclic Jacobi rotations until every off-diagonal norm is below
    ``tol`` times the matrix Frobenius norm (at most ``max_sweeps``).
    Returns eigenvalues in descending order ``(..., 3)`` and the matching
    eigenvectors as columns ``(..., 3, 3)``.
    """
    a = np.asarray(a, dtype=float)
    comp = [a[..., i, j] for i, j in _SYM]
    d, vec = _jacobi_packed(comp, True, tol, max_sweeps)
    vals = np.stack(d, axis=-1)
    vecs = np.stack([np.stack(row, axis=-1) for row in vec], axis=-2)
    order = np.argsort(-vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    vecs = np.take_along_axis(vecs, order[..., None, :], axis=-1)
    return vals, vecs


def singular_values_from_gram(g: np.ndarray):
    vals, vecs = jacobi_eigh(g)
    return np.sqrt(np.clip(vals, 0.0, None)), vecs


def shrink_factors(s: np.ndarray, theta: float) -> np.ndarray:
    """``max(s - theta, 0) / s`` with ``0/0 := 0``."""
    out = np.zeros_like(s)
    np.divide(np.maximum(s - theta, 0.0), s, out=out, where=s > 0)
    return out


def svt_operator(g: np.ndarray, theta: float) -> np.ndarray:
    """Left multipliers ``M = U diag(shrink) U^T`` for Gram matrices ``g``."""
    s, u = singular_values_from_gram(g)
    f = shrink_factors(s, theta)
    return np.einsum("...ik,...k,...jk->...ij", u, f, u)


def svt_patch(patch: np.ndarray, theta: float) -> np.ndarray:
    """Singular-value soft-thresholding of a ``3 x L`` matrix."""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    patch = np.asarray(patch, dtype=float)
    if theta == 0:
        return patch.copy()
    return svt_operator(patch @ np.swapaxes(patch, -1, -2), theta) @ patch


def ss_value(rho: np.ndarray, spec: WindowSpec) -> float:
    """Sum over voxels of the nuclear norms of the weighted patch matrices."""
    rho = np.asarray(rho, dtype=float)
    if spec.size == 1:
        return local_ss_value(rho)
    d, _ = _jacobi_packed(list(gram_packed(rho, spec)), False, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    return float(sum(np.sqrt(np.clip(x, 0.0, None)).sum() for x in d))


def prox_ss(rho: np.ndarray, theta: float, spec: WindowSpec) -> np.ndarray:
    """Approximate prox of ``theta * ss_value`` by patch SVT and overlap averaging."""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    rho = np.asarray(rho, dtype=float)
    if theta == 0:
        return rho.copy()
    if spec.size == 1:
        return prox_local_ss(rho, theta)
    return _prox_ss_windows(rho, theta, spec)


def _prox_ss_windows(rho: np.ndarray, theta: float, spec: WindowSpec) -> np.ndarray:
    d, u = _jacobi_packed(list(gram_packed(rho, spec)), True, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    f = [shrink_factors(np.sqrt(np.clip(x, 0.0, None)), theta) for x in d]
    # packed M = U diag(f) U^T
    m = np.stack([sum(u[i][k] * f[k] * u[j][k] for k in range(3)) for i, j in _SYM])
    # voxel x receives M[n] from every window centre n = x - o_l, weight w_l
    m_sum = _window_sum(m, spec)
    norm = _window_sum(np.ones((1,) + rho.shape[1:]), spec)[0]
    m_sum /= norm
    out = np.empty_like(rho)
    for i in range(3):
        out[i] = sum(m_sum[_packed_index(i, j)] * rho[j] for j in range(3))
    return out


def _packed_index(i: int, j: int) -> int:
    return _SYM.index((min(i, j), max(i, j)))


def local_ss_value(rho: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.asarray(rho) ** 2, axis=0)).sum())


def prox_local_ss(rho: np.ndarray, theta: float) -> np.ndarray:
    """Voxelwise group soft-thresholding ``v * max(0, 1 - theta / |v|)``."""
    if theta < 0:
        raise ValueError("theta must be >= 0")
    rho = np.asarray(rho, dtype=float)
    if theta == 0:
        return rho.copy()
    mag = np.sqrt(np.sum(rho**2, axis=0))
    return rho * shrink_factors(mag, theta)


def l1_value(rho: np.ndarray) -> float:
    return float(np.abs(rho).sum())


def prox_l1(rho: np.ndarray, theta: float) -> np.ndarray:
    if theta < 0:
        raise ValueError("theta must be >= 0")
    rho = np.asarray(rho, dtype=float)
    return np.sign(rho) * np.maximum(np.abs(rho) - theta, 0.0)
