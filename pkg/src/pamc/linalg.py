"""SVD kernels and proximal operators used by the completion solver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .tensor_core import as_rng

DEFAULT_OVERSAMPLE = 8
DEFAULT_POWER_ITERS = 2
EXACT_MAX_DIM = 32


@dataclass(frozen=True)
class SvdResult:
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.singular_values)

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def jacobi_svd(matrix, tol: float = 1e-15, max_sweeps: int = 100) -> SvdResult:
    """Full SVD by one-sided (Hestenes) Jacobi rotations.

    Slow, but built only from plane rotations, so it serves as an
    independent reference for the LAPACK and randomized paths.
    """
    a = np.array(matrix, dtype=float)
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T
    n, m = a.shape
    u = a.copy()
    v = np.eye(m)
    for _ in range(max_sweeps):
        rotated = False
        for i in range(m - 1):
            for j in range(i + 1, m):
                alpha = u[:, i] @ u[:, i]
                beta = u[:, j] @ u[:, j]
                gamma = u[:, i] @ u[:, j]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ui, uj = u[:, i].copy(), u[:, j].copy()
                u[:, i], u[:, j] = c * ui - s * uj, s * ui + c * uj
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i], v[:, j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            break
    sv = np.linalg.norm(u, axis=0)
    order = np.argsort(-sv, kind="stable")
    sv, u, v = sv[order], u[:, order], v[:, order]
    left = np.zeros_like(u)
    scale = sv[0] if sv.size and sv[0] > 0 else 1.0
    for k in range(m):
        if sv[k] > 1e-14 * scale:
            left[:, k] = u[:, k] / sv[k]
        else:
            # complete the basis by Gram-Schmidt on coordinate vectors
            for e in np.eye(n):
                w = e - left[:, :k] @ (left[:, :k].T @ e)
                if np.linalg.norm(w) > 1e-6:
                    left[:, k] = w / np.linalg.norm(w)
                    break
    if transposed:
        return SvdResult(v, sv, left)
    return SvdResult(left, sv, v)


def exact_svd(matrix, k: Optional[int] = None) -> SvdResult:
    u, s, vt = np.linalg.svd(np.asarray(matrix, dtype=float), full_matrices=False)
    if k is not None:
        u, s, vt = u[:, :k], s[:k], vt[:k]
    return SvdResult(u, s, vt.T)


def randomized_svd(
    matrix,
    target_rank: int,
    oversample: int = DEFAULT_OVERSAMPLE,
    power_iters: int = DEFAULT_POWER_ITERS,
    rng=None,
    warm_start: Optional[SvdResult] = None,
) -> SvdResult:
    """Rank-``target_rank`` SVD by a Gaussian range finder with power iterations.

    When ``warm_start`` is given its right singular vectors become the
    leading columns of the test matrix, so the sketch starts inside the
    previous dominant subspace.
    """
    m_ = np.asarray(matrix, dtype=float)
    n, m = m_.shape
    k = int(target_rank)
    if k < 1:
        raise InvalidArgument("target_rank must be at least 1")
    if oversample < 0 or power_iters < 0:
        raise InvalidArgument("oversample and power_iters must be nonnegative")
    if k > min(n, m):
        raise InvalidArgument(f"target_rank {k} exceeds min dimension {min(n, m)}")
    # oversampling is capped by the dimensions; at full width the sketch is exact
    width = min(k + oversample, n, m)
    gen = as_rng(rng).gen
    test = gen.standard_normal((m, width))
    if warm_start is not None and warm_start.right_vectors.shape[0] == m:
        seed_cols = warm_start.right_vectors[:, : min(width, warm_start.rank)]
        test[:, : seed_cols.shape[1]] = seed_cols

    q, _ = np.linalg.qr(m_ @ test)
    for _ in range(power_iters):
        z, _ = np.linalg.qr(m_.T @ q)
        q, _ = np.linalg.qr(m_ @ z)
    ub, s, vt = np.linalg.svd(q.T @ m_, full_matrices=False)
    return SvdResult((q @ ub)[:, :k], s[:k], vt[:k].T)


def soft_threshold(x, tau):
    """``sign(x) * max(|x| - tau, 0)``, elementwise for arrays."""
    if np.any(np.asarray(tau) < 0):
        raise InvalidArgument("tau must be nonnegative")
    out = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    if np.ndim(out) == 0:
        return float(out)
    return out


def svt_factors(matrix, tau: float, rank_hint: int = 1, rng=None,
                warm_start: Optional[SvdResult] = None) -> SvdResult:
    """Singular value thresholding returning the thresholded factors.

    Small matrices (min dimension <= 32) use an exact SVD. Larger ones use
    the randomized SVD, doubling the working rank while the smallest
    retained singular value is still above ``tau``.
    """
    if tau < 0:
        raise InvalidArgument("tau must be nonnegative")
    a = np.asarray(matrix, dtype=float)
    min_dim = min(a.shape)
    if min_dim <= EXACT_MAX_DIM:
        svd = exact_svd(a)
    else:
        rng = as_rng(rng)
        k = max(1, int(rank_hint))
        while True:
            if k + DEFAULT_OVERSAMPLE > min_dim:
                svd = exact_svd(a)
                break
            svd = randomized_svd(a, k, rng=rng, warm_start=warm_start)
            if svd.singular_values[-1] <= tau:
                break
            k = min(2 * k, min_dim)
    s = np.maximum(svd.singular_values - tau, 0.0)
    keep = s > 0
    return SvdResult(svd.left_vectors[:, keep], s[keep], svd.right_vectors[:, keep])


def singular_value_threshold(matrix, tau: float, rank_hint: int = 1, rng=None) -> np.ndarray:
    """Proximal operator of ``tau * ||.||_*``."""
    if rank_hint < 1:
        raise InvalidArgument("rank_hint must be at least 1")
    f = svt_factors(matrix, tau, rank_hint, rng)
    if f.rank == 0:
        return np.zeros(np.shape(matrix))
    return f.reconstruct()
