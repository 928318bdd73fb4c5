"""The policy-aware completion loop: collect experience, complete the reward
matrix every K steps, gate completed rewards by confidence, and run tabular
Q-learning on the gated reward."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .completion import CompletionResult, SolverConfig, relative_error, weighted_pcp
from .confidence import ConfidenceMap, conformal_intervals
from .errors import InvalidArgument, NumericalFailure
from .mdp_env import Policy, Simulator, TabularMDP, greedy_actions, policy_return, value_iteration
from .mnar import build_weights, estimate_propensity, overlap_diagnostics
from .tensor_core import ObservationSet, as_rng

RECORD_FIELDS = ("frobenius_error", "abstention_rate", "m_eff", "kappa")


@dataclass(frozen=True)
class LoopConfig:
    completion_period_K: int = 500
    rank_hint: int = 2
    tau: Optional[float] = 0.5
    epsilon_p: float = 0.01
    total_steps: int = 50_000
    intrinsic_beta: float = 0.05
    epsilon_greedy: float = 0.1
    learning_rate: float = 0.1
    obs_prob: float = 1.0
    alpha: float = 0.05
    calibration_fraction: float = 0.2
    drift: float = 0.0
    solver: SolverConfig = field(
        default_factory=lambda: SolverConfig(lambda_S=float("inf"), max_iters=500, tol=1e-6)
    )

    def __post_init__(self):
        if self.completion_period_K < 1:
            raise InvalidArgument("completion_period_K must be at least 1")
        if self.total_steps < self.completion_period_K:
            raise InvalidArgument("total_steps must be at least completion_period_K")
        if self.rank_hint < 1:
            raise InvalidArgument("rank_hint must be at least 1")
        if self.tau is not None and not self.tau > 0:
            raise InvalidArgument("tau must be positive")
        if not 0.0 < self.epsilon_p < 1.0:
            raise InvalidArgument("epsilon_p must lie in (0, 1)")
        if not self.intrinsic_beta > 0:
            raise InvalidArgument("intrinsic_beta must be positive")
        if not 0.0 <= self.epsilon_greedy <= 1.0:
            raise InvalidArgument("epsilon_greedy must lie in [0, 1]")
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be positive")
        if not 0.0 < self.obs_prob <= 1.0:
            raise InvalidArgument("obs_prob must lie in (0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidArgument("alpha must lie in (0, 1)")
        if not 0.0 < self.calibration_fraction < 1.0:
            raise InvalidArgument("calibration_fraction must lie in (0, 1)")
        if self.drift < 0:
            raise InvalidArgument("drift must be nonnegative")

    def solver_config(self) -> SolverConfig:
        return dataclasses.replace(self.solver, rank_hint=self.rank_hint, max_rank=self.rank_hint)


@dataclass
class LoopTrace:
    records: list
    episode_returns: list
    episode_ends: list
    final_policy: Policy
    final_return: float
    optimal_return: float
    final_reward: np.ndarray
    final_estimate: Optional[np.ndarray] = None

    @property
    def regret(self) -> float:
        return self.optimal_return - self.final_return

    @property
    def mean_abstention(self) -> float:
        if not self.records:
            return float("nan")
        return float(np.mean([r["abstention_rate"] for r in self.records]))

    def rows(self):
        out = []
        for rec in self.records:
            out += [(rec["step"], name, rec[name]) for name in RECORD_FIELDS]
        out += [(step, "episode_return", v) for step, v in zip(self.episode_ends, self.episode_returns)]
        last = self.records[-1]["step"] if self.records else 0
        out += [(last, "final_return", self.final_return), (last, "optimal_return", self.optimal_return),
                (last, "regret", self.regret)]
        return out

    def to_csv(self, path) -> Path:
        p = Path(path)
        lines = ["step,event,value"]
        lines += [f"{s},{e},{format(float(v), '.17g')}" for s, e, v in self.rows()]
        p.write_text("\n".join(lines) + "\n")
        return p


class _Completer:
    """Periodic completion state for one loop run."""

    def __init__(self, mdp: TabularMDP, config: LoopConfig, rng):
        self.config = config
        self.solver = config.solver_config()
        self.rng = rng
        self.shape = (mdp.n_states, mdp.n_actions)
        self.previous: Optional[CompletionResult] = None
        self.r_hat = np.zeros(self.shape)
        self.abstain = np.ones(self.shape, dtype=bool)

    def update(self, obs: ObservationSet, index: int, step: int):
        cfg = self.config
        weights = build_weights(estimate_propensity(obs), cfg.epsilon_p)
        fit, cal = obs.split(cfg.calibration_fraction, self.rng.child(2, index))
        if len(fit) == 0:
            return None, weights, ConfidenceMap.abstain_everywhere(self.shape, cfg.alpha, cfg.tau or 1.0)
        try:
            result = weighted_pcp(fit, weights, self.solver, self.rng.child(3, index), self.previous)
        except NumericalFailure as exc:
            raise NumericalFailure(f"completion failed at step {step}: {exc}", exc.trace, step) from exc
        self.previous = result
        try:
            conf = conformal_intervals(result, cal, cfg.alpha, weights, cfg.tau)
        except InvalidArgument:
            conf = ConfidenceMap.abstain_everywhere(self.shape, cfg.alpha, cfg.tau or 1.0)
        self.r_hat = result.R_hat.values
        self.abstain = conf.abstain_mask
        return result, weights, conf


def _run(mdp: TabularMDP, config: LoopConfig, rng, complete: bool) -> LoopTrace:
    if not isinstance(config, LoopConfig):
        raise InvalidArgument("config must be a LoopConfig")
    rng = as_rng(rng)
    sim = Simulator(mdp, rng.child(1))
    drift_gen = rng.child(4).gen
    completer = _Completer(mdp, config, rng) if complete else None
    n_s, n_a = mdp.n_states, mdp.n_actions
    gamma, lr, eps = mdp.gamma, config.learning_rate, config.epsilon_greedy
    beta, K = config.intrinsic_beta, config.completion_period_K
    rho = mdp.restart_prob
    mean = np.array(mdp.mean_reward, dtype=float)

    q = np.zeros((n_s, n_a))
    visits = np.zeros((n_s, n_a), dtype=np.int64)
    ss, aa, rr = [], [], []
    records, ep_returns, ep_ends = [], [], []
    r_gate = np.zeros((n_s, n_a))
    use_gate = np.zeros((n_s, n_a), dtype=bool)

    s = sim.reset()
    ep_ret, disc = 0.0, 1.0
    for t in range(config.total_steps):
        if sim.uniform() < eps:
            a = min(int(sim.uniform() * n_a), n_a - 1)
        else:
            row = q[s]
            a = int(np.argmax(row >= row.max() - 1e-12 * (1.0 + abs(row.max()))))
        visits[s, a] += 1
        if config.obs_prob >= 1.0 or sim.uniform() < config.obs_prob:
            r_tilde = sim.noisy_reward(mean[s, a])
            ss.append(s)
            aa.append(a)
            rr.append(r_tilde)
        elif use_gate[s, a]:
            r_tilde = r_gate[s, a]
        else:
            r_tilde = beta / np.sqrt(visits[s, a])

        nxt = sim.successor(s, a)
        q[s, a] += lr * (r_tilde + gamma * q[nxt].max() - q[s, a])
        ep_ret += disc * mean[s, a]
        disc *= gamma
        if rho > 0 and sim.uniform() < rho:
            ep_returns.append(ep_ret)
            ep_ends.append(t + 1)
            ep_ret, disc = 0.0, 1.0
            s = sim.reset()
        else:
            s = nxt

        if (t + 1) % K == 0:
            index = (t + 1) // K
            obs = ObservationSet(n_s, n_a, ss, aa, rr)
            opt_support = value_iteration(mdp, mean).greedy.support()
            if completer is not None and len(obs) > 0:
                result, weights, conf = completer.update(obs, index, t + 1)
                use_gate = ~conf.abstain_mask
                r_gate = completer.r_hat
                err = relative_error(completer.r_hat, mean) if result is not None else float("nan")
                abst = float(conf.abstain_mask.mean())
                diag = overlap_diagnostics(weights.estimated_propensity, obs.mask, opt_support,
                                           config.epsilon_p)
            else:
                err, abst = float("nan"), 1.0
                if len(obs) > 0:
                    diag = overlap_diagnostics(estimate_propensity(obs), obs.mask, opt_support,
                                               config.epsilon_p)
                else:
                    diag = None
            records.append({
                "step": t + 1,
                "frobenius_error": err,
                "abstention_rate": abst,
                "m_eff": diag.m_eff if diag else 0.0,
                "kappa": diag.kappa if diag else 0.0,
            })
            if config.drift > 0:
                mean = mean + drift_gen.uniform(-config.drift, config.drift, mean.shape)

    final = Policy.deterministic(greedy_actions(q), n_a)
    j = policy_return(mdp, final, mean)
    j_star = float(mdp.initial_dist @ value_iteration(mdp, mean).V)
    estimate = completer.r_hat if completer is not None and completer.previous is not None else None
    return LoopTrace(records, ep_returns, ep_ends, final, j, j_star, mean, estimate)


def run_pamc(mdp: TabularMDP, config: LoopConfig = LoopConfig(), rng=None) -> LoopTrace:
    """Q-learning on the gated reward: the latest observed reward when the
    step reveals one, else the completed reward where its half-width is
    below tau, else the count bonus ``beta / sqrt(N(s, a))``."""
    return _run(mdp, config, rng, complete=True)


def run_baseline(mdp: TabularMDP, config: LoopConfig = LoopConfig(), rng=None) -> LoopTrace:
    """The same loop with completion disabled (observed reward or count bonus)."""
    return _run(mdp, config, rng, complete=False)
