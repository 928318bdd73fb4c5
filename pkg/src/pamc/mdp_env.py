"""Finite MDPs with planted rewards, exact planning, and policy-biased sampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .tensor_core import (
    ObservationSet,
    RewardMatrix,
    StructuredReward,
    as_rng,
    generate_structured_reward,
    read_matrix_csv,
    write_matrix_csv,
)

ROW_TOL = 1e-12
DEFAULT_RESTART_PROB = 0.02


@dataclass(frozen=True)
class Policy:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2 or np.any(p < -ROW_TOL) or np.any(np.abs(p.sum(axis=1) - 1.0) > ROW_TOL):
            raise InvalidArgument("policy rows must be probability distributions")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def n_states(self):
        return self.probs.shape[0]

    @property
    def n_actions(self):
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "Policy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        actions = np.asarray(actions, dtype=int)
        p = np.zeros((len(actions), n_actions))
        p[np.arange(len(actions)), actions] = 1.0
        return cls(p)

    def epsilon_greedy(self, epsilon: float) -> "Policy":
        """Mix with the uniform policy: ``(1-eps) * self + eps * uniform``."""
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidArgument("epsilon must lie in [0, 1]")
        return Policy((1.0 - epsilon) * self.probs + epsilon / self.n_actions)

    def support(self) -> np.ndarray:
        return self.probs > 0


def greedy_actions(q: np.ndarray) -> np.ndarray:
    """Argmax per row; near-ties (1e-12 relative) go to the lowest index."""
    q = np.asarray(q, dtype=float)
    top = q.max(axis=1, keepdims=True)
    ties = q >= top - 1e-12 * (1.0 + np.abs(top))
    return np.argmax(ties, axis=1)


@dataclass(frozen=True)
class TabularMDP:
    transitions: np.ndarray
    reward: StructuredReward
    gamma: float
    initial_dist: Optional[np.ndarray] = None
    restart_prob: float = DEFAULT_RESTART_PROB

    def __post_init__(self):
        p = np.array(self.transitions, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise InvalidArgument("transitions must have shape (S, A, S)")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > ROW_TOL):
            raise InvalidArgument("each P(.|s,a) must sum to 1")
        if self.reward.shape != p.shape[:2]:
            raise InvalidArgument("reward shape does not match (S, A)")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidArgument("gamma must lie in [0, 1)")
        if not 0.0 <= self.restart_prob <= 1.0:
            raise InvalidArgument("restart_prob must lie in [0, 1]")
        mu = (np.full(p.shape[0], 1.0 / p.shape[0]) if self.initial_dist is None
              else np.array(self.initial_dist, dtype=float))
        if mu.shape != (p.shape[0],) or np.any(mu < 0) or abs(mu.sum() - 1.0) > ROW_TOL:
            raise InvalidArgument("initial_dist must be a distribution over states")
        p.flags.writeable = False
        mu.flags.writeable = False
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "initial_dist", mu)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def mean_reward(self) -> np.ndarray:
        return self.reward.clean

    def sampling_kernel(self) -> np.ndarray:
        """Transitions of the data-collection chain, restarts included."""
        rho = self.restart_prob
        return (1.0 - rho) * self.transitions + rho * self.initial_dist[None, None, :]

    def with_reward(self, reward: StructuredReward) -> "TabularMDP":
        return TabularMDP(self.transitions, reward, self.gamma, self.initial_dist, self.restart_prob)


def generate_random_mdp(
    n_states: int,
    n_actions: int,
    branching: int,
    reward_spec=None,
    gamma: float = 0.9,
    rng=None,
    restart_prob: float = DEFAULT_RESTART_PROB,
) -> TabularMDP:
    """Garnet-style MDP: each (s, a) moves uniformly to ``branching``
    distinct random successors.

    ``reward_spec`` is either a ready :class:`StructuredReward` or a dict of
    keyword arguments for :func:`generate_structured_reward`.
    """
    if n_states < 1 or n_actions < 1:
        raise InvalidArgument("n_states and n_actions must be positive")
    if not 1 <= branching <= n_states:
        raise InvalidArgument(f"branching must lie in [1, {n_states}]")
    rng = as_rng(rng)
    gen = rng.gen
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = gen.choice(n_states, size=branching, replace=False)
            p[s, a, succ] = 1.0 / branching
    if isinstance(reward_spec, StructuredReward):
        reward = reward_spec
    else:
        spec = {"rank": 0} if reward_spec is None else dict(reward_spec)
        reward = generate_structured_reward(n_states, n_actions, rng=rng.child(1), **spec)
    return TabularMDP(p, reward, gamma, restart_prob=restart_prob)


@dataclass
class PlanningResult:
    V: np.ndarray
    Q: np.ndarray
    greedy: Policy


def _reward(mdp: TabularMDP, reward_override) -> np.ndarray:
    if reward_override is None:
        return mdp.mean_reward
    r = np.asarray(reward_override.values if isinstance(reward_override, RewardMatrix)
                   else reward_override, dtype=float)
    if r.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidArgument("reward override shape mismatch")
    return r


def value_iteration(mdp: TabularMDP, reward_override=None, tol: float = 1e-10,
                    max_iters: int = 1_000_000) -> PlanningResult:
    if tol <= 0:
        raise InvalidArgument("tol must be positive")
    r = _reward(mdp, reward_override)
    p = mdp.transitions
    v = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        q = r + mdp.gamma * (p @ v)
        v_new = q.max(axis=1)
        residual = np.max(np.abs(v_new - v))
        v = v_new
        if residual < tol:
            break
    q = r + mdp.gamma * (p @ v)
    return PlanningResult(V=v, Q=q, greedy=Policy.deterministic(greedy_actions(q), mdp.n_actions))


def policy_return(mdp: TabularMDP, policy: Policy, reward_override=None) -> float:
    """Exact discounted return ``mu0^T (I - gamma P_pi)^{-1} r_pi``."""
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidArgument("policy shape does not match the MDP")
    r = _reward(mdp, reward_override)
    pi = policy.probs
    r_pi = (pi * r).sum(axis=1)
    p_pi = np.einsum("sa,sat->st", pi, mdp.transitions)
    try:
        v = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p_pi, r_pi)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"policy evaluation system is singular: {exc}") from exc
    return float(mdp.initial_dist @ v)


class Simulator:
    """Step-by-step sampler of the data-collection chain (restarts included).

    Uniform variates are drawn in blocks to keep the per-step cost low.
    """

    def __init__(self, mdp: TabularMDP, rng, block: int = 4096):
        self.mdp = mdp
        self.gen = as_rng(rng).gen
        self._cum_p = np.cumsum(mdp.transitions, axis=2)
        self._cum_p[..., -1] = 1.0
        self._cum_mu = np.cumsum(mdp.initial_dist)
        self._cum_mu[-1] = 1.0
        self._block = block
        self._buf = np.empty(0)
        self._pos = 0
        self.sigma = mdp.reward.noise_sigma
        self._noise = np.empty(0)
        self._npos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self.gen.random(self._block)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def normal(self) -> float:
        if self._npos >= len(self._noise):
            self._noise = self.gen.standard_normal(self._block)
            self._npos = 0
        z = self._noise[self._npos]
        self._npos += 1
        return z

    def reset(self) -> int:
        return int(np.searchsorted(self._cum_mu, self.uniform(), side="right"))

    def step(self, s: int, a: int) -> tuple[int, bool]:
        """Next state and whether the step was a restart (episode boundary)."""
        if self.mdp.restart_prob > 0 and self.uniform() < self.mdp.restart_prob:
            return self.reset(), True
        return self.successor(s, a), False

    def successor(self, s: int, a: int) -> int:
        """A draw from ``P(.|s, a)`` ignoring restarts."""
        return int(np.searchsorted(self._cum_p[s, a], self.uniform(), side="right"))

    def act(self, cum_policy_row: np.ndarray) -> int:
        return int(np.searchsorted(cum_policy_row, self.uniform(), side="right"))

    def noisy_reward(self, mean: float) -> float:
        return mean + self.sigma * self.normal() if self.sigma > 0 else mean


def _cumulative(policy: Policy) -> np.ndarray:
    c = np.cumsum(policy.probs, axis=1)
    c[:, -1] = 1.0
    return c


def sample_observations(mdp: TabularMDP, behavior: Policy, n_steps: int, obs_prob: float,
                        rng=None, return_visits: bool = False):
    """Roll out ``behavior``; each visited (s, a) reveals a fresh noisy reward
    with probability ``obs_prob``.

    With ``return_visits`` the per-entry visit counts are returned as well.
    """
    if not 0.0 <= obs_prob <= 1.0:
        raise InvalidArgument("obs_prob must lie in [0, 1]")
    if behavior.probs.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidArgument("behavior policy shape does not match the MDP")
    sim = Simulator(mdp, rng)
    cum_pi = _cumulative(behavior)
    mean = mdp.mean_reward
    visits = np.zeros((mdp.n_states, mdp.n_actions), dtype=np.int64)
    ss, aa, rr = [], [], []
    s = sim.reset()
    for _ in range(int(n_steps)):
        a = sim.act(cum_pi[s])
        visits[s, a] += 1
        if obs_prob >= 1.0 or sim.uniform() < obs_prob:
            ss.append(s)
            aa.append(a)
            rr.append(sim.noisy_reward(mean[s, a]))
        s, _ = sim.step(s, a)
    obs = ObservationSet(mdp.n_states, mdp.n_actions, ss, aa, rr)
    return (obs, visits) if return_visits else obs


# Serialization: a directory holding transitions.csv (s,a,s',prob rows),
# one matrix CSV per reward component and a key=value meta file.

_COMPONENTS = ("low_rank", "sparse", "noise", "misspecification")


def save_mdp(mdp: TabularMDP, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = ["s,a,s',prob"]
    for s, a, t in zip(*np.nonzero(mdp.transitions)):
        rows.append(f"{s},{a},{t},{format(float(mdp.transitions[s, a, t]), '.17g')}")
    (d / "transitions.csv").write_text("\n".join(rows) + "\n")
    for name in _COMPONENTS:
        write_matrix_csv(d / f"{name}.csv", getattr(mdp.reward, name))
    meta = {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": format(mdp.gamma, ".17g"),
        "restart_prob": format(mdp.restart_prob, ".17g"),
        "noise_sigma": format(mdp.reward.noise_sigma, ".17g"),
        "planted_rank": mdp.reward.planted_rank,
        "sparse_density": format(mdp.reward.sparse_density, ".17g"),
        "initial_dist": " ".join(format(float(x), ".17g") for x in mdp.initial_dist),
    }
    (d / "meta.txt").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()))
    return d


def load_mdp(directory) -> TabularMDP:
    d = Path(directory)
    meta = {}
    for line in (d / "meta.txt").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    n_s, n_a = int(meta["n_states"]), int(meta["n_actions"])
    p = np.zeros((n_s, n_a, n_s))
    for line in (d / "transitions.csv").read_text().splitlines()[1:]:
        s, a, t, prob = line.split(",")
        p[int(s), int(a), int(t)] = float(prob)
    comps = {name: RewardMatrix(read_matrix_csv(d / f"{name}.csv")) for name in _COMPONENTS}
    reward = StructuredReward(
        noise_sigma=float(meta["noise_sigma"]),
        planted_rank=int(meta["planted_rank"]),
        sparse_density=float(meta["sparse_density"]),
        **comps,
    )
    mu = np.array([float(x) for x in meta["initial_dist"].split()])
    return TabularMDP(p, reward, float(meta["gamma"]), mu, float(meta["restart_prob"]))
