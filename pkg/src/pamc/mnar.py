"""Behavior-policy visitation, propensity estimates, IPW weights and overlap diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .mdp_env import Policy, TabularMDP
from .tensor_core import ObservationSet

DEFAULT_CLIP_FLOOR = 0.01
DEFAULT_SMOOTHING = 1.0


@dataclass(frozen=True)
class PropensityMap:
    estimated_propensity: np.ndarray
    clip_floor: float
    weights: np.ndarray
    true_propensity: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.weights.shape


@dataclass(frozen=True)
class OverlapDiagnostics:
    m_eff: float
    kappa: float
    support_mask: np.ndarray
    positivity_violation: bool = False


def stationary_visitation(mdp: TabularMDP, policy: Policy, horizon: int) -> np.ndarray:
    """Average state-action occupancy over ``horizon`` steps of the
    data-collection chain, starting from ``mdp.initial_dist``."""
    if horizon < 1:
        raise InvalidArgument("horizon must be at least 1")
    pi = np.asarray(policy.probs if isinstance(policy, Policy) else policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidArgument("policy shape does not match the MDP")
    if np.any(pi < -1e-12) or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-12):
        raise InvalidArgument("policy rows must be probability distributions")
    chain = np.einsum("sa,sat->st", pi, mdp.sampling_kernel())
    mu = mdp.initial_dist.copy()
    state_mass = np.zeros(mdp.n_states)
    for t in range(horizon):
        state_mass += mu
        nxt = mu @ chain
        if np.max(np.abs(nxt - mu)) < 1e-16:
            # chain has mixed; the remaining steps all contribute mu
            state_mass += (horizon - t - 1) * nxt
            break
        mu = nxt
    d = (state_mass / horizon)[:, None] * pi
    return d / d.sum()


def estimate_propensity(observations: ObservationSet, smoothing: float = DEFAULT_SMOOTHING) -> np.ndarray:
    """Laplace-smoothed empirical frequency of each entry among the samples."""
    n = len(observations)
    if n < 1:
        raise InvalidArgument("cannot estimate propensities from an empty observation set")
    if smoothing < 0:
        raise InvalidArgument("smoothing must be nonnegative")
    n_entries = observations.n_states * observations.n_actions
    return (observations.counts + smoothing) / (n + smoothing * n_entries)


def build_weights(propensity, clip_floor: float = DEFAULT_CLIP_FLOOR,
                  true_propensity=None) -> PropensityMap:
    """Inverse-propensity weights ``1 / max(p, clip_floor)``."""
    p = np.asarray(propensity, dtype=float)
    if not 0.0 < clip_floor < 1.0:
        raise InvalidArgument("clip_floor must lie in (0, 1)")
    if np.any(p < 0) or np.any(p > 1):
        raise InvalidArgument("propensities must lie in [0, 1]")
    w = 1.0 / np.maximum(p, clip_floor)
    return PropensityMap(
        estimated_propensity=p,
        clip_floor=float(clip_floor),
        weights=w,
        true_propensity=None if true_propensity is None else np.asarray(true_propensity, dtype=float),
    )


def uniform_weights(shape) -> PropensityMap:
    """Unweighted control: every weight 1."""
    return PropensityMap(np.ones(shape), DEFAULT_CLIP_FLOOR, np.ones(shape))


def overlap_diagnostics(propensity, mask, optimal_support,
                        clip_floor: float = DEFAULT_CLIP_FLOOR) -> OverlapDiagnostics:
    p = np.asarray(propensity, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    support = np.asarray(optimal_support, dtype=bool)
    if not (p.shape == mask.shape == support.shape):
        raise InvalidArgument("propensity, mask and support shapes must match")
    if not support.any():
        raise InvalidArgument("optimal-policy support is empty")
    m_eff = float(np.sum(1.0 / np.maximum(p[mask], clip_floor)))
    kappa = float(p[support].min())
    return OverlapDiagnostics(
        m_eff=m_eff,
        kappa=max(kappa, 0.0),
        support_mask=support,
        positivity_violation=bool(kappa <= 0.0),
    )
