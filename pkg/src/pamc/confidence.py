"""Split-conformal confidence widths for completed rewards and the abstention gate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .completion import CompletionResult
from .errors import InvalidArgument
from .mnar import PropensityMap
from .tensor_core import ObservationSet, RewardMatrix

COVERAGE_HEADER = "seed,alpha,coverage,mean_width,abstention_rate"
DEFAULT_TAU_FACTOR = 2.0


@dataclass(frozen=True)
class ConfidenceMap:
    half_width: np.ndarray
    alpha: float
    abstain_mask: np.ndarray
    threshold_tau: float
    base_quantile: float = float("nan")
    n_calibration: int = 0

    @classmethod
    def abstain_everywhere(cls, shape, alpha: float, tau: float) -> "ConfidenceMap":
        """Used when there is too little calibration data to say anything."""
        return cls(np.full(shape, np.inf), alpha, np.ones(shape, dtype=bool), tau)


def conformal_quantile(scores, alpha: float) -> float:
    """The ``ceil((n + 1)(1 - alpha))``-th smallest score."""
    scores = np.sort(np.abs(np.asarray(scores, dtype=float).ravel()))
    n = len(scores)
    if not 0.0 < alpha < 1.0:
        raise InvalidArgument("alpha must lie in (0, 1)")
    k = math.ceil((n + 1) * (1.0 - alpha) - 1e-12)
    if k > n:
        raise InvalidArgument(
            f"calibration set of {n} is too small for alpha={alpha}; need at least {math.ceil(1 / alpha - 1)}"
        )
    return float(scores[max(k, 1) - 1])


def width_scale(weights) -> np.ndarray:
    """``sqrt(W / min W)``: low-propensity entries get wider intervals."""
    w = np.asarray(weights.weights if isinstance(weights, PropensityMap) else weights, dtype=float)
    return np.sqrt(w / w.min())


def conformal_intervals(result: CompletionResult, calibration: ObservationSet, alpha: float,
                        weights=None, tau: Optional[float] = None) -> ConfidenceMap:
    """Entrywise half-widths ``C = q * sqrt(W / min W)``.

    Scores are one per calibration entry: the absolute gap between the
    entry's averaged calibration reward and ``R_hat``. ``q`` is their
    split-conformal quantile and the propensity scale only ever widens it.
    ``tau=None`` sets the gate threshold to twice the median half-width.
    """
    shape = result.R_hat.shape
    if calibration.shape != shape:
        raise InvalidArgument("calibration shape does not match the completion")
    cal_mask = calibration.mask
    if np.any(cal_mask & result.mask):
        raise InvalidArgument("calibration entries overlap the fitting set")
    scale = np.ones(shape) if weights is None else width_scale(weights)
    if scale.shape != shape:
        raise InvalidArgument("weight shape does not match the completion")
    resid = np.abs(calibration.mean_matrix() - result.R_hat.values)[cal_mask]
    q = conformal_quantile(resid, alpha)
    half = q * scale
    if tau is None:
        tau = DEFAULT_TAU_FACTOR * float(np.median(half))
        if tau <= 0:
            tau = np.finfo(float).tiny
    if not tau > 0:
        raise InvalidArgument("tau must be positive")
    return ConfidenceMap(half, float(alpha), half >= tau, float(tau), q, int(cal_mask.sum()))


def gate_reward(r_hat: float, half_width: float, tau: float, intrinsic: float) -> tuple[float, bool]:
    """Use ``r_hat`` when the half-width is strictly below ``tau``; a tie abstains."""
    if not tau > 0:
        raise InvalidArgument("tau must be positive")
    if half_width < tau:
        return r_hat, False
    return intrinsic, True


def gate_matrix(r_hat, confidence: ConfidenceMap, intrinsic) -> np.ndarray:
    """Vectorised :func:`gate_reward` over the whole matrix."""
    r = np.asarray(r_hat.values if isinstance(r_hat, RewardMatrix) else r_hat, dtype=float)
    return np.where(confidence.abstain_mask, intrinsic, r)


def coverage_report(confidence: ConfidenceMap, result: CompletionResult, truth,
                    entries=None) -> dict:
    """Coverage of ``|truth - R_hat| <= C``, mean finite width and abstention
    rate, over all entries or over the boolean ``entries`` mask."""
    t = np.asarray(truth.values if isinstance(truth, RewardMatrix) else truth, dtype=float)
    if t.shape != result.R_hat.shape or confidence.half_width.shape != t.shape:
        raise InvalidArgument("truth, completion and confidence shapes must match")
    sel = np.ones(t.shape, dtype=bool) if entries is None else np.asarray(entries, dtype=bool)
    if not sel.any():
        raise InvalidArgument("no entries selected for the coverage report")
    err = np.abs(t - result.R_hat.values)[sel]
    width = confidence.half_width[sel]
    finite = np.isfinite(width)
    return {
        "coverage": float(np.mean(err <= width)),
        "mean_width": float(width[finite].mean()) if finite.any() else float("inf"),
        "abstention_rate": float(confidence.abstain_mask[sel].mean()),
    }


def append_coverage_row(path, seed: int, alpha: float, report: dict) -> None:
    p = Path(path)
    new = not p.exists()
    with p.open("a") as fh:
        if new:
            fh.write(COVERAGE_HEADER + "\n")
        fh.write(f"{seed},{float(alpha)!r},{report['coverage']!r},"
                 f"{report['mean_width']!r},{report['abstention_rate']!r}\n")
