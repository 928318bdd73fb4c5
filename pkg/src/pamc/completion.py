"""Weighted robust principal component pursuit on masked reward data, and
the bilinear latent-feature variant.

Both solvers minimise a penalised objective with a monotone accelerated
proximal-gradient scheme: a momentum step is kept only when it lowers the
objective, otherwise momentum is reset, so the recorded objective never
increases.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .linalg import SvdResult, exact_svd, soft_threshold, svt_factors
from .mnar import PropensityMap
from .tensor_core import ObservationSet, RewardMatrix, as_rng, write_matrix_csv

NOISE_FLOOR = 0.01
STALL_PATIENCE = 3


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs. ``None`` for a lambda or the step size means "derive
    the default from the data" (see :func:`default_lambdas`)."""

    lambda_L: Optional[float] = None
    lambda_S: Optional[float] = None
    max_iters: int = 2000
    tol: float = 1e-7
    step_size: Optional[float] = None
    rank_hint: int = 5
    accelerate: bool = True
    continuation: float = 0.9
    max_rank: Optional[int] = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be at least 1")
        if not self.tol > 0:
            raise InvalidArgument("tol must be positive")
        if self.rank_hint < 1:
            raise InvalidArgument("rank_hint must be at least 1")
        if self.max_rank is not None and self.max_rank < 1:
            raise InvalidArgument("max_rank must be at least 1")
        if not 0.0 < self.continuation <= 1.0:
            raise InvalidArgument("continuation must lie in (0, 1]")
        for name in ("lambda_L", "lambda_S", "step_size"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise InvalidArgument(f"{name} must be positive")


@dataclass
class CompletionResult:
    L_hat: RewardMatrix
    S_hat: RewardMatrix
    R_hat: RewardMatrix
    residuals: np.ndarray
    mask: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    lambda_L: float
    lambda_S: float
    factors: Optional[SvdResult] = None
    core: Optional[np.ndarray] = None

    @property
    def final_objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_objective": self.final_objective,
            "lambda_L": self.lambda_L,
            "lambda_S": self.lambda_S,
            "rank": 0 if self.factors is None else self.factors.rank,
            "observed_entries": int(self.mask.sum()),
        }

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(d / "L_hat.csv", self.L_hat)
        write_matrix_csv(d / "S_hat.csv", self.S_hat)
        write_matrix_csv(d / "R_hat.csv", self.R_hat)
        write_matrix_csv(d / "residuals.csv", self.residuals)
        (d / "summary.txt").write_text(
            "".join(f"{k} = {_fmt(v)}\n" for k, v in self.summary().items())
        )
        return d


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _weight_matrix(weights, shape) -> np.ndarray:
    if weights is None:
        return np.ones(shape)
    w = np.asarray(weights.weights if isinstance(weights, PropensityMap) else weights, dtype=float)
    if w.shape != shape:
        raise InvalidArgument(f"weight shape {w.shape} does not match {shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidArgument("weights must be finite and nonnegative")
    return w


def noise_scale(observations: ObservationSet) -> Optional[float]:
    """Standard deviation of an averaged entry, estimated from repeated
    samples: pooled within-entry variance times the mean of 1/count over
    the observed entries. ``None`` when no entry was sampled twice."""
    counts = observations.counts
    if not np.any(counts > 1):
        return None
    means = observations.mean_matrix()
    dev = observations.rewards - means[observations.states, observations.actions]
    dof = int(np.sum(counts[counts > 0] - 1))
    pooled = float(np.sum(dev * dev)) / dof
    return float(np.sqrt(pooled * np.mean(1.0 / counts[counts > 0])))


def default_lambdas(values_on_mask: np.ndarray, weights_on_mask: np.ndarray,
                    shape, noise: Optional[float] = None) -> tuple[float, float]:
    """``lambda_L = mean(W_Omega) * sigma * sqrt(|Omega| / max(n, m))``,
    ``lambda_S = lambda_L / sqrt(max(n, m))``.

    ``sigma`` is ``noise`` when given (see :func:`noise_scale`), floored at
    ``NOISE_FLOOR`` times the spread of the observed values; otherwise it is
    that spread. The mean-weight factor makes the
    pair scale with ``W`` so a weighted and an unweighted solve regularise
    equally hard.
    """
    big = max(shape)
    n_obs = len(values_on_mask)
    spread = float(np.std(values_on_mask)) if n_obs > 1 else 0.0
    if noise is not None:
        # noiseless repeats would drive lambda to zero and leave the
        # unobserved entries unregularised
        spread = max(float(noise), NOISE_FLOOR * spread)
    if spread <= 0.0:
        spread = 1e-8 * max(1.0, float(np.max(np.abs(values_on_mask), initial=0.0)))
    lam_l = float(np.mean(weights_on_mask)) * spread * np.sqrt(n_obs / big)
    return lam_l, lam_l / np.sqrt(big)


def pcp_objective(L_nuc: float, S: np.ndarray, resid: np.ndarray, wm: np.ndarray,
                  lam_l: float, lam_s: float) -> float:
    fit = 0.5 * float(np.sum(wm * resid * resid))
    sparse = lam_s * float(np.abs(S).sum()) if np.isfinite(lam_s) else 0.0
    return lam_l * L_nuc + sparse + fit


def pcp_step(L, S, R, wm, step, lam_l, lam_s, rank_hint=1, rng=None, warm=None,
             fit_sparse=True, max_rank=None):
    """One proximal-gradient step from ``(L, S)``.

    Both blocks take their prox from the same gradient
    ``W * P_Omega(L + S - R)``: singular value thresholding for ``L`` and
    soft thresholding for ``S``. With ``max_rank`` only the leading
    ``max_rank`` thresholded singular triplets are kept, which is the prox
    of the nuclear norm plus a rank constraint. Returns
    ``(L_new, S_new, factors)``.
    """
    grad = wm * (L + S - R)
    factors = svt_factors(L - step * grad, step * lam_l, rank_hint, rng, warm)
    if max_rank is not None and factors.rank > max_rank:
        factors = SvdResult(factors.left_vectors[:, :max_rank],
                            factors.singular_values[:max_rank],
                            factors.right_vectors[:, :max_rank])
    L_new = factors.reconstruct() if factors.rank else np.zeros_like(L)
    if fit_sparse:
        S_new = soft_threshold(S - step * grad, step * lam_s)
    else:
        S_new = np.zeros_like(S)
    return L_new, S_new, factors


def _monotone_apg(x0, parts0, prox_grad, config: SolverConfig, scale0: float = 1.0):
    """Monotone accelerated proximal gradient with penalty continuation.

    ``x`` is a tuple of arrays. ``prox_grad(y, scale)`` returns
    ``(z, (penalty, fit), aux)`` where the objective at penalty scale
    ``scale`` is ``scale * penalty + fit``. The scale starts at ``scale0``
    and shrinks geometrically to 1; since the penalty is nonnegative,
    lowering the scale never raises the objective, so the trace is
    nonincreasing throughout.
    """
    x, parts, aux = x0, parts0, None
    y = x
    t_k = 1.0
    scale = max(scale0, 1.0)
    trace = []
    converged = False
    it = 0
    quiet = 0
    for it in range(1, config.max_iters + 1):
        scale = max(scale * config.continuation, 1.0)
        z, z_parts, z_aux = prox_grad(y, scale)
        f_z = scale * z_parts[0] + z_parts[1]
        f_x = scale * parts[0] + parts[1]
        if not np.isfinite(f_z):
            raise NumericalFailure(f"non-finite objective at iteration {it}", trace=trace)
        accepted = f_z <= f_x
        new_x, new_parts = (z, z_parts) if accepted else (x, parts)
        if accepted:
            aux = z_aux
        trace.append(min(f_z, f_x))
        # one small decrease can be a fluke of the momentum sequence, so the
        # tolerance has to hold on several consecutive accepted steps
        small = scale == 1.0 and accepted and abs(f_x - f_z) <= config.tol * max(abs(f_x), 1e-300)
        quiet = quiet + 1 if small else 0
        if quiet >= STALL_PATIENCE:
            x, parts = new_x, new_parts
            converged = True
            break
        if config.accelerate and accepted:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
            beta = (t_k - 1.0) / t_next
            y = tuple(a + beta * (a - b) for a, b in zip(new_x, x))
            t_k = t_next
        else:
            if not accepted and not config.accelerate and scale == 1.0:
                # a plain step failed to descend: numerical precision reached
                converged = True
                break
            y = new_x
            t_k = 1.0
        x, parts = new_x, new_parts
    return x, aux, trace, it, converged


def weighted_pcp(observations: ObservationSet, weights=None, config: SolverConfig = SolverConfig(),
                 rng=None, warm_start: Optional[CompletionResult] = None) -> CompletionResult:
    """Approximately minimise

        lambda_L ||L||_* + lambda_S ||S||_1 + 1/2 ||W^(1/2) * P_Omega(L + S - R_Omega)||_F^2

    where ``R_Omega`` holds the per-entry average of repeated observations.
    ``lambda_S = inf`` drops the sparse block entirely. A cold start begins
    with both penalties inflated so the first iterate is near zero and
    relaxes them to their targets (continuation); a warm start skips that.
    """
    shape = observations.shape
    mask = observations.mask
    if not mask.any():
        raise InvalidArgument("weighted_pcp needs at least one observation")
    R = observations.mean_matrix()
    W = _weight_matrix(weights, shape)
    wm = np.where(mask, W, 0.0)

    lam_l0, lam_s0 = default_lambdas(R[mask], W[mask], shape, noise_scale(observations))
    lam_l = config.lambda_L if config.lambda_L is not None else lam_l0
    lam_s = config.lambda_S if config.lambda_S is not None else lam_s0
    fit_sparse = bool(np.isfinite(lam_s))
    w_max = float(wm.max())
    if w_max <= 0:
        raise InvalidArgument("all weights on observed entries are zero")
    step = config.step_size if config.step_size is not None else 1.0 / (2.0 * w_max)
    rng = as_rng(rng)

    def fit(Lm, Sm):
        # overflow surfaces as a non-finite objective and a NumericalFailure
        with np.errstate(over="ignore", invalid="ignore"):
            resid = np.where(mask, Lm + Sm - R, 0.0)
            return 0.5 * float(np.sum(wm * resid * resid))

    def penalty(nuc, Sm):
        return lam_l * nuc + (lam_s * float(np.abs(Sm).sum()) if fit_sparse else 0.0)

    if warm_start is not None and warm_start.L_hat.shape == shape:
        L = np.array(warm_start.L_hat.values)
        S = np.array(warm_start.S_hat.values) if fit_sparse else np.zeros(shape)
        factors = warm_start.factors
        nuc = float(np.linalg.svd(L, compute_uv=False).sum())
        scale0 = 1.0
    else:
        L, S = np.zeros(shape), np.zeros(shape)
        factors, nuc = None, 0.0
        top = float(np.linalg.norm(wm * R, 2))
        scale0 = max(1.0, 0.99 * top / lam_l) if config.continuation < 1.0 else 1.0

    state = {"factors": factors}

    def prox_grad(y, scale):
        prev = state["factors"]
        hint = max(config.rank_hint, (prev.rank + 2) if prev is not None else 1)
        Lz, Sz, fac = pcp_step(y[0], y[1], R, wm, step, scale * lam_l, scale * lam_s,
                               hint, rng, prev, fit_sparse, config.max_rank)
        state["factors"] = fac
        return (Lz, Sz), (penalty(float(fac.singular_values.sum()), Sz), fit(Lz, Sz)), fac

    (L, S), fac, trace, it, converged = _monotone_apg(
        (L, S), (penalty(nuc, S), fit(L, S)), prox_grad, config, scale0)
    if fac is None:
        fac = factors

    R_hat = L + S
    return CompletionResult(
        L_hat=RewardMatrix(L),
        S_hat=RewardMatrix(S),
        R_hat=RewardMatrix(R_hat),
        residuals=np.where(mask, R - R_hat, 0.0),
        mask=mask,
        objective_trace=trace,
        iterations=it,
        converged=converged,
        lambda_L=float(lam_l),
        lambda_S=float(lam_s),
        factors=fac,
    )


def _full_column_rank(x: np.ndarray) -> bool:
    return np.linalg.matrix_rank(x) == x.shape[1]


def complete_bilinear(observations: ObservationSet, state_features, action_features,
                      weights=None, config: SolverConfig = SolverConfig()) -> CompletionResult:
    """Fit ``R(s, a) ~ phi(s)^T M psi(a)`` with a nuclear-norm penalty on the
    ``d_phi x d_psi`` core ``M``; the sparse block is fixed at zero."""
    phi = np.asarray(state_features, dtype=float)
    psi = np.asarray(action_features, dtype=float)
    shape = observations.shape
    if phi.ndim != 2 or psi.ndim != 2 or phi.shape[0] != shape[0] or psi.shape[0] != shape[1]:
        raise InvalidArgument("feature matrices must have one row per state / action")
    if not (_full_column_rank(phi) and _full_column_rank(psi)):
        raise InvalidArgument("feature matrices must have full column rank")
    if min(phi.shape[1], psi.shape[1]) < config.rank_hint:
        raise InvalidArgument("feature dimensions must be at least rank_hint")

    mask = observations.mask
    d_phi, d_psi = phi.shape[1], psi.shape[1]
    if not mask.any():
        zero = np.zeros(shape)
        return CompletionResult(RewardMatrix(zero), RewardMatrix(zero), RewardMatrix(zero),
                                zero, mask, [0.0], 0, True, 0.0, float("inf"),
                                core=np.zeros((d_phi, d_psi)))
    R = observations.mean_matrix()
    W = _weight_matrix(weights, shape)
    wm = np.where(mask, W, 0.0)
    lam_l0, _ = default_lambdas(R[mask], W[mask], shape, noise_scale(observations))
    lam_l = config.lambda_L if config.lambda_L is not None else lam_l0
    lip = float(np.linalg.norm(phi, 2) ** 2 * np.linalg.norm(psi, 2) ** 2 * wm.max())
    step = config.step_size if config.step_size is not None else 1.0 / lip

    def fit(M):
        with np.errstate(over="ignore", invalid="ignore"):
            resid = np.where(mask, phi @ M @ psi.T - R, 0.0)
            return 0.5 * float(np.sum(wm * resid * resid))

    def prox_grad(y, scale):
        (Y,) = y
        grad = phi.T @ (wm * (phi @ Y @ psi.T - R)) @ psi
        fac = svt_factors(Y - step * grad, step * scale * lam_l)
        if config.max_rank is not None and fac.rank > config.max_rank:
            k = config.max_rank
            fac = SvdResult(fac.left_vectors[:, :k], fac.singular_values[:k], fac.right_vectors[:, :k])
        Z = fac.reconstruct() if fac.rank else np.zeros_like(Y)
        return (Z,), (lam_l * float(fac.singular_values.sum()), fit(Z)), fac

    M0 = np.zeros((d_phi, d_psi))
    top = float(np.linalg.norm(phi.T @ (wm * R) @ psi, 2))
    scale0 = max(1.0, 0.99 * top / lam_l) if config.continuation < 1.0 else 1.0
    (M,), _, trace, it, converged = _monotone_apg((M0,), (0.0, fit(M0)), prox_grad, config, scale0)

    R_hat = phi @ M @ psi.T
    zero = np.zeros(shape)
    return CompletionResult(
        L_hat=RewardMatrix(R_hat),
        S_hat=RewardMatrix(zero),
        R_hat=RewardMatrix(R_hat),
        residuals=np.where(mask, R - R_hat, 0.0),
        mask=mask,
        objective_trace=trace,
        iterations=it,
        converged=converged,
        lambda_L=float(lam_l),
        lambda_S=float("inf"),
        core=M,
    )


def incoherence(matrix, rank: int) -> float:
    """Largest scaled leverage score of the rank-``rank`` singular subspaces."""
    if rank < 1:
        raise InvalidArgument("rank must be at least 1")
    a = np.asarray(matrix, dtype=float)
    n, m = a.shape
    svd = exact_svd(a, rank)
    row_lev = np.sum(svd.left_vectors ** 2, axis=1)
    col_lev = np.sum(svd.right_vectors ** 2, axis=1)
    return float(max(n / rank * row_lev.max(), m / rank * col_lev.max()))


def relative_error(estimate, truth) -> float:
    est = np.asarray(estimate.values if isinstance(estimate, RewardMatrix) else estimate, dtype=float)
    tru = np.asarray(truth.values if isinstance(truth, RewardMatrix) else truth, dtype=float)
    denom = np.linalg.norm(tru)
    return float(np.linalg.norm(est - tru) / (denom if denom > 0 else 1.0))
