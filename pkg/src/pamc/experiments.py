"""Seeded sweeps over the desk-scale diagnostics.

Every study takes a :class:`SweepSpec`, runs ``spec.seeds`` replicates per
grid value, and returns a :class:`StudyTable` whose rows are seed-averaged
cells with a standard-error column per averaged quantity. Replicate ``i``
of every cell uses the stream ``SeededRng(base_seed).child(i)``, so cells
share random numbers and trends are compared on paired draws.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.linalg import subspace_angles
from scipy.stats import pearsonr, spearmanr

from .completion import SolverConfig, complete_bilinear, relative_error, weighted_pcp
from .confidence import append_coverage_row, conformal_intervals, coverage_report
from .errors import InvalidArgument
from .mdp_env import (
    Policy,
    TabularMDP,
    generate_random_mdp,
    greedy_actions,
    policy_return,
    sample_observations,
    value_iteration,
)
from .mnar import build_weights, overlap_diagnostics, stationary_visitation
from .pamc_loop import LoopConfig, run_pamc
from .tensor_core import (
    ObservationSet,
    RewardMatrix,
    SeededRng,
    StructuredReward,
    frobenius_error,
    generate_structured_reward,
)


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    seeds: int
    base: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = tuple(self.values)
        if not vals:
            raise InvalidArgument("sweep grid must be nonempty")
        if self.seeds < 1:
            raise InvalidArgument("seeds must be at least 1")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "base", dict(self.base))

    def cell(self, value) -> dict:
        out = dict(self.base)
        out[self.parameter] = value
        return out

    def config_hash(self) -> str:
        blob = json.dumps({"parameter": self.parameter, "values": list(self.values),
                           "seeds": self.seeds, "base": self.base}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replicate_rng(self, i: int) -> SeededRng:
        return SeededRng(int(self.base.get("seed", 0))).child(i)


@dataclass
class StudyTable:
    name: str
    columns: tuple
    rows: list
    summary: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=float)

    def to_csv(self, path) -> Path:
        p = Path(path)
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_cell_str(row[c]) for c in self.columns))
        p.write_text("\n".join(lines) + "\n")
        return p

    def write_summary(self, path) -> Path:
        p = Path(path)
        p.write_text("".join(f"{k} = {_cell_str(v)}\n" for k, v in self.summary.items()))
        return p


def _cell_str(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def mean_se(values) -> tuple[float, float]:
    x = np.asarray(values, dtype=float)
    if len(x) < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x)))


def count_inversions(values, increasing: bool = True) -> int:
    """Adjacent steps that go the wrong way."""
    d = np.diff(np.asarray(values, dtype=float))
    return int(np.sum(d < 0) if increasing else np.sum(d > 0))


def _corr(fn, x, y) -> Optional[float]:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return None
    return float(fn(x, y)[0])


def _run_cells(spec: SweepSpec, measure: Callable[[dict, SeededRng], dict]) -> list:
    """``measure(cell_config, rng) -> {quantity: value}`` for every cell and
    replicate; returns one row per cell with ``<q>`` and ``<q>_se``."""
    rows = []
    for value in spec.values:
        cfg = spec.cell(value)
        reps = [measure(cfg, spec.replicate_rng(i)) for i in range(spec.seeds)]
        row = {spec.parameter: value, "n_seeds": spec.seeds}
        for key in reps[0]:
            m, se = mean_se([r[key] for r in reps])
            row[key] = m
            row[key + "_se"] = se
        rows.append(row)
    return rows


def _columns(parameter: str, quantities) -> tuple:
    cols = [parameter]
    for q in quantities:
        cols += [q, q + "_se"]
    return tuple(cols + ["n_seeds"])


# ---------------------------------------------------------------- instances

def _mdp(cfg: dict, rng: SeededRng, rank=None, sigma=None) -> TabularMDP:
    return generate_random_mdp(
        int(cfg.get("n_states", 20)), int(cfg.get("n_actions", 5)), int(cfg.get("branching", 3)),
        {"rank": int(cfg.get("rank", 2) if rank is None else rank),
         "sigma": float(cfg.get("sigma", 0.1) if sigma is None else sigma)},
        gamma=float(cfg.get("gamma", 0.9)), rng=rng.child(0),
    )


def _loop_config(cfg: dict, **overrides) -> LoopConfig:
    names = {f.name for f in dataclasses.fields(LoopConfig)} - {"solver"}
    kwargs = {k: cfg[k] for k in names if k in cfg}
    kwargs.update(overrides)
    return LoopConfig(**kwargs)


def group_mnar_instance(rng: SeededRng, n_states: int = 200, n_actions: int = 20,
                        rare_fraction: float = 0.25, p_common: float = 0.8, p_rare: float = 0.3,
                        kappa: float = 0.02, sigma: float = 0.1):
    """Policy-shaped MNAR completion problem.

    A common block of states shares two reward factors; a rarely visited
    block shares the first and has its own second factor. Entries are
    observed with probability ``p_common`` or ``p_rare`` (jittered), and the
    row-wise best action is observed with probability at most ``kappa``.
    Returns ``(truth, propensity, observations)``.
    """
    gen = rng.gen
    n_rare = int(round(n_states * rare_fraction))
    n_common = n_states - n_rare
    cols = gen.standard_normal((n_actions, 3))
    truth = np.zeros((n_states, n_actions))
    truth[:n_common] = gen.standard_normal((n_common, 2)) @ cols[:, [0, 1]].T / np.sqrt(2)
    truth[n_common:] = gen.standard_normal((n_rare, 2)) @ cols[:, [0, 2]].T / np.sqrt(2)
    noise = sigma * gen.standard_normal((n_states, n_actions))
    p = np.empty((n_states, n_actions))
    p[:n_common], p[n_common:] = p_common, p_rare
    p = np.clip(p * gen.uniform(0.7, 1.3, p.shape), 0.0, 1.0)
    best = truth.argmax(axis=1)
    rows = np.arange(n_states)
    p[rows, best] = np.minimum(p[rows, best], kappa)
    mask = gen.random(p.shape) < p
    return truth, p, ObservationSet.from_matrix(truth + noise, mask)


# ------------------------------------------------------------------ studies

def ipw_advantage_study(spec: SweepSpec) -> StudyTable:
    """Propensity-weighted vs unweighted completion on :func:`group_mnar_instance`."""
    def measure(cfg, rng):
        truth, p, obs = group_mnar_instance(
            rng, int(cfg.get("n_states", 200)), int(cfg.get("n_actions", 20)),
            float(cfg.get("rare_fraction", 0.25)), float(cfg.get("p_common", 0.8)),
            float(cfg.get("p_rare", 0.3)), float(cfg.get("kappa", 0.02)), float(cfg.get("sigma", 0.1)))
        w = build_weights(p, float(cfg.get("clip_floor", 0.01)), true_propensity=p)
        lam = float(cfg.get("lambda_L", 1.0))
        rank = int(cfg.get("rank_hint", 3))
        mean_w = float(w.weights[obs.mask].mean())
        base = SolverConfig(lambda_S=float("inf"), rank_hint=rank)
        ipw = weighted_pcp(obs, w, dataclasses.replace(base, lambda_L=lam * mean_w), rng.child(1))
        plain = weighted_pcp(obs, None, dataclasses.replace(base, lambda_L=lam), rng.child(1))
        e_ipw = relative_error(ipw.R_hat, truth)
        e_plain = relative_error(plain.R_hat, truth)
        return {"kappa": float(p[np.arange(len(truth)), truth.argmax(1)].min()),
                "error_ipw": e_ipw, "error_unweighted": e_plain, "improvement": e_plain - e_ipw}

    rows = _run_cells(spec, measure)
    for row in rows:
        se = row["improvement_se"]
        row["t_stat"] = row["improvement"] / se if se > 0 else float("inf")
    cols = _columns(spec.parameter, ["kappa", "error_ipw", "error_unweighted", "improvement"])
    cols = cols[:-1] + ("t_stat", "n_seeds")
    summary = {"all_cells_significant": all(r["t_stat"] >= 2.0 for r in rows)}
    return StudyTable("ipw", cols, rows, summary)


def kappa_scaling_study(spec: SweepSpec) -> StudyTable:
    """Completion error against overlap as the behavior policy's
    exploration rate varies.

    The behavior policy is epsilon-greedy around a deterministic policy
    that never picks the optimal action, so the optimal support is reached
    only through exploration and kappa shrinks with epsilon.
    """
    def measure(cfg, rng):
        mdp = _mdp(cfg, rng)
        n_a = mdp.n_actions
        optimal = value_iteration(mdp).greedy
        shifted = (greedy_actions(optimal.probs) + 1) % n_a
        behavior = Policy.deterministic(shifted, n_a).epsilon_greedy(float(cfg["epsilon"]))
        n_steps = int(cfg.get("n_steps", 20000))
        obs_prob = float(cfg.get("obs_prob", 1.0))
        d = stationary_visitation(mdp, behavior, n_steps) * obs_prob
        obs = sample_observations(mdp, behavior, n_steps, obs_prob, rng.child(1))
        floor = float(cfg.get("clip_floor", 1e-4))
        w = build_weights(d, floor, true_propensity=d)
        rank = int(cfg.get("rank_hint", cfg.get("rank", 2)))
        res = weighted_pcp(obs, w, SolverConfig(lambda_S=float("inf"), rank_hint=rank, max_rank=rank),
                           rng.child(2))
        kappa = overlap_diagnostics(d, obs.mask, optimal.support(), floor).kappa
        return {"kappa": kappa, "error": relative_error(res.R_hat, mdp.mean_reward)}

    rows = _run_cells(spec, measure)
    inv_sqrt = 1.0 / np.sqrt(np.array([r["kappa"] for r in rows]))
    err = np.array([r["error"] for r in rows])
    summary = {"pearson_error_vs_inv_sqrt_kappa": _corr(pearsonr, inv_sqrt, err)}
    if len(rows) >= 2 and np.ptp(inv_sqrt) > 0:
        b, a = np.polyfit(inv_sqrt, err, 1)
        summary.update(fit_intercept=float(a), fit_slope=float(b))
    return StudyTable("kappa", _columns(spec.parameter, ["kappa", "error"]), rows, summary)


def _regret(mdp: TabularMDP, reward) -> float:
    plan = value_iteration(mdp, reward)
    return float(mdp.initial_dist @ value_iteration(mdp).V) - policy_return(mdp, plan.greedy)


def rank_stress_study(spec: SweepSpec) -> StudyTable:
    """Loop regret and abstention as the planted rank grows past the rank hint."""
    def measure(cfg, rng):
        mdp = _mdp(cfg, rng, rank=int(cfg["rank"]))
        trace = run_pamc(mdp, _loop_config(cfg), rng.child(1))
        return {"regret": trace.regret, "abstention_rate": trace.mean_abstention}

    rows = _run_cells(spec, measure)
    ab = [r["abstention_rate"] for r in rows]
    summary = {"abstention_inversions": count_inversions(ab),
               "abstention_nondecreasing": count_inversions(ab) <= 1}
    return StudyTable("rank", _columns(spec.parameter, ["regret", "abstention_rate"]), rows, summary)


def mix_features(exact: np.ndarray, mixing: float, gen) -> np.ndarray:
    """Orthonormal basis of ``(1 - mixing) * exact + mixing * G`` with
    ``G`` Gaussian, both scaled to unit column norm."""
    q_exact = np.linalg.qr(exact)[0]
    g = np.linalg.qr(gen.standard_normal(exact.shape))[0]
    return np.linalg.qr((1.0 - mixing) * q_exact + mixing * g)[0]


def alignment_score(features: np.ndarray, exact: np.ndarray) -> float:
    """Mean cosine of the principal angles between the two column spaces."""
    return float(np.mean(np.cos(subspace_angles(features, exact))))


def alignment_stress_study(spec: SweepSpec) -> StudyTable:
    """Bilinear completion with features rotated away from the true ones."""
    def measure(cfg, rng):
        gen = rng.child(5).gen
        n_s, n_a = int(cfg.get("n_states", 40)), int(cfg.get("n_actions", 10))
        d, k = int(cfg.get("feature_dim", 4)), int(cfg.get("rank", 2))
        phi = np.linalg.qr(gen.standard_normal((n_s, d)))[0] * np.sqrt(n_s / d)
        psi = np.linalg.qr(gen.standard_normal((n_a, d)))[0] * np.sqrt(n_a / d)
        core = gen.standard_normal((d, k)) @ gen.standard_normal((k, d)) / (d * np.sqrt(k))
        low = phi @ core @ psi.T
        zero = RewardMatrix.zeros(n_s, n_a)
        reward = StructuredReward(RewardMatrix(low), zero, zero, float(cfg.get("sigma", 0.1)), k, 0.0)
        mdp = generate_random_mdp(n_s, n_a, int(cfg.get("branching", 3)), reward,
                                  gamma=float(cfg.get("gamma", 0.9)), rng=rng.child(0))
        obs = sample_observations(mdp, Policy.uniform(n_s, n_a), int(cfg.get("n_steps", 2000)),
                                  1.0, rng.child(1))
        mixing = float(cfg["mixing"])
        phi_m = mix_features(phi, mixing, gen)
        psi_m = mix_features(psi, mixing, gen)
        fit, cal = obs.split(float(cfg.get("calibration_fraction", 0.2)), rng.child(2))
        res = complete_bilinear(fit, phi_m, psi_m, None,
                                SolverConfig(lambda_S=float("inf"), rank_hint=k, max_rank=k,
                                             lambda_L=float(cfg.get("lambda_L", 1e-3))))
        conf = conformal_intervals(res, cal, float(cfg.get("alpha", 0.05)), None, cfg.get("tau", 0.5))
        return {
            "alignment": 0.5 * (alignment_score(phi_m, phi) + alignment_score(psi_m, psi)),
            "error": relative_error(res.R_hat, low),
            "regret": _regret(mdp, res.R_hat.values),
            "abstention_rate": float(conf.abstain_mask.mean()),
        }

    rows = _run_cells(spec, measure)
    order = np.argsort([r["alignment"] for r in rows], kind="stable")
    errs = [rows[i]["error"] for i in order]
    summary = {"error_inversions": count_inversions(errs, increasing=False),
               "error_nonincreasing_in_alignment": count_inversions(errs, increasing=False) <= 1}
    return StudyTable("alignment",
                      _columns(spec.parameter, ["alignment", "error", "regret", "abstention_rate"]),
                      rows, summary)


def regret_vs_error_study(spec: SweepSpec) -> StudyTable:
    """Paired loop runs with the confidence gate on and off across a noise sweep.

    The ungated arm is the same loop with an infinite threshold. The
    error column is the ungated arm's final completion error in the norm
    weighted by the optimal policy's state-action occupancy.
    """
    def measure(cfg, rng):
        mdp = _mdp(cfg, rng, sigma=float(cfg["sigma"]))
        loop = _loop_config(cfg)
        gated = run_pamc(mdp, loop, rng.child(1))
        ungated = run_pamc(mdp, dataclasses.replace(loop, tau=float("inf")), rng.child(1))
        occ = stationary_visitation(mdp, value_iteration(mdp).greedy, int(cfg.get("occupancy_horizon", 5000)))
        est = ungated.final_estimate if ungated.final_estimate is not None else np.zeros(occ.shape)
        return {
            "weighted_error": frobenius_error(est, mdp.mean_reward, occ),
            "regret_gated": gated.regret,
            "regret_ungated": ungated.regret,
            "abstention_rate": gated.mean_abstention,
        }

    rows = _run_cells(spec, measure)
    summary = {
        "gated_le_ungated_all_cells": all(r["regret_gated"] <= r["regret_ungated"] for r in rows),
        "spearman_error_vs_ungated_regret": _corr(
            spearmanr, [r["weighted_error"] for r in rows], [r["regret_ungated"] for r in rows]),
    }
    cols = _columns(spec.parameter, ["weighted_error", "regret_gated", "regret_ungated", "abstention_rate"])
    return StudyTable("regret", cols, rows, summary)


def bilinear_instance(rng: SeededRng, n_states: int, n_actions: int, dim: int, rank: int):
    """Exact features (orthogonal columns with unit-variance entries) and a
    rank-``rank`` core scaled so the reward entries have unit variance."""
    gen = rng.gen
    phi = np.linalg.qr(gen.standard_normal((n_states, dim)))[0] * np.sqrt(n_states / dim)
    psi = np.linalg.qr(gen.standard_normal((n_actions, dim)))[0] * np.sqrt(n_actions / dim)
    core = gen.standard_normal((dim, rank)) @ gen.standard_normal((rank, dim)) / (np.sqrt(rank) * dim)
    return phi, psi, phi @ core @ psi.T


def sample_complexity_study(spec: SweepSpec) -> StudyTable:
    """Bilinear completion error against the number of uniform samples."""
    def measure(cfg, rng):
        n_s, n_a = int(cfg.get("n_states", 60)), int(cfg.get("n_actions", 40))
        dim, k = int(cfg.get("feature_dim", 6)), int(cfg.get("rank", 2))
        phi, psi, truth = bilinear_instance(rng.child(0), n_s, n_a, dim, k)
        n = int(cfg["n_obs"])
        gen = rng.child(1).gen
        s, a = gen.integers(0, n_s, n), gen.integers(0, n_a, n)
        r = truth[s, a] + float(cfg.get("sigma", 0.1)) * gen.standard_normal(n)
        obs = ObservationSet(n_s, n_a, s, a, r)
        res = complete_bilinear(obs, phi, psi, None,
                                SolverConfig(lambda_S=float("inf"), rank_hint=k, max_rank=k,
                                             lambda_L=float(cfg.get("lambda_L", 1e-6))))
        return {"error": relative_error(res.R_hat, truth)}

    rows = _run_cells(spec, measure)
    summary = {}
    n = np.array([float(r[spec.parameter]) for r in rows])
    err = np.array([r["error"] for r in rows])
    if len(rows) >= 2 and np.all(err > 0) and np.ptp(n) > 0:
        summary["loglog_slope"] = float(np.polyfit(np.log(n), np.log(err), 1)[0])
    return StudyTable("sample_complexity", _columns(spec.parameter, ["error"]), rows, summary)


def drift_study(spec: SweepSpec) -> StudyTable:
    """Loop abstention and regret when the mean reward drifts by up to
    ``drift`` (sup norm) after every completion period."""
    def measure(cfg, rng):
        mdp = _mdp(cfg, rng)
        trace = run_pamc(mdp, _loop_config(cfg, drift=float(cfg["drift"])), rng.child(1))
        return {"abstention_rate": trace.mean_abstention, "regret": trace.regret}

    rows = _run_cells(spec, measure)
    ab = [r["abstention_rate"] for r in rows]
    deltas = [float(r[spec.parameter]) for r in rows]
    summary = {"abstention_inversions": count_inversions(ab),
               "abstention_nondecreasing": count_inversions(ab) <= 1,
               "spearman_drift_vs_regret": _corr(spearmanr, deltas, [r["regret"] for r in rows])}
    return StudyTable("drift", _columns(spec.parameter, ["abstention_rate", "regret"]), rows, summary)


def coverage_study(spec: SweepSpec, coverage_csv=None) -> StudyTable:
    """End-to-end split-conformal coverage on a planted noisy matrix.

    One noisy realisation is drawn; a uniform ``observed`` fraction of its
    entries is split into fitting and calibration entries, and coverage is
    measured on the never-observed entries against the same realisation.
    """
    def measure(cfg, rng):
        n_s, n_a = int(cfg.get("n_states", 60)), int(cfg.get("n_actions", 40))
        rank = int(cfg.get("rank", 3))
        reward = generate_structured_reward(n_s, n_a, rank, sigma=float(cfg.get("sigma", 0.1)),
                                            rng=rng.child(0))
        mask = rng.child(1).gen.random((n_s, n_a)) < float(cfg.get("observed", 0.5))
        obs = ObservationSet.from_matrix(reward.values, mask)
        fit, cal = obs.split(float(cfg.get("calibration_fraction", 0.2)), rng.child(2))
        lam = cfg.get("lambda_L", 0.1)
        res = weighted_pcp(fit, None, SolverConfig(lambda_L=None if lam is None else float(lam),
                                                   lambda_S=float("inf"), rank_hint=rank, max_rank=rank),
                           rng.child(3))
        alpha = float(cfg["alpha"])
        conf = conformal_intervals(res, cal, alpha, None, cfg.get("tau"))
        rep = coverage_report(conf, res, reward.values, entries=~mask)
        if coverage_csv is not None:
            append_coverage_row(coverage_csv, rng.seed, alpha, rep)
        return rep

    rows = _run_cells(spec, measure)
    return StudyTable("coverage", _columns(spec.parameter, ["coverage", "mean_width", "abstention_rate"]),
                      rows, {})


def impossibility_demo(n_states: int, n_actions: int, obs_prob: float, seeds: int,
                       rng=None, cap: Optional[int] = None, place_needle: bool = True) -> dict:
    """Samples a uniform-random explorer needs before it first observes the
    rewarding entry of a needle reward (1 at one hidden entry, 0 elsewhere).

    Runs that reach ``cap`` samples are censored; with ``place_needle``
    false every run is censored.
    """
    if not 0.0 < obs_prob <= 1.0:
        raise InvalidArgument("obs_prob must lie in (0, 1]")
    if seeds < 1:
        raise InvalidArgument("seeds must be at least 1")
    n_entries = n_states * n_actions
    scale = n_entries / obs_prob
    cap = int(cap if cap is not None else 50 * scale)
    base = rng if isinstance(rng, SeededRng) else SeededRng(0 if rng is None else rng)
    hits, censored = [], 0
    for i in range(seeds):
        gen = base.child(i).gen
        needle = int(gen.integers(n_entries)) if place_needle else -1
        found = None
        t = 0
        while t < cap and found is None:
            block = min(4096, cap - t)
            entry = gen.integers(n_entries, size=block)
            seen = gen.random(block) < obs_prob
            hit = np.flatnonzero((entry == needle) & seen)
            if hit.size:
                found = t + int(hit[0]) + 1
            t += block
        if found is None:
            censored += 1
            hits.append(cap)
        else:
            hits.append(found)
    m, se = mean_se(hits)
    return {"n_states": n_states, "n_actions": n_actions, "obs_prob": obs_prob,
            "size_over_p": scale, "mean_samples": m, "mean_samples_se": se,
            "censored": censored, "n_seeds": seeds}


def impossibility_study(spec: SweepSpec) -> StudyTable:
    """:func:`impossibility_demo` over a grid of square-ish sizes; the
    parameter values are ``|S| * |A|`` with ``|A| = 4``."""
    rows = []
    obs_prob = float(spec.base.get("obs_prob", 0.25))
    n_actions = int(spec.base.get("n_actions", 4))
    for idx, size in enumerate(spec.values):
        size = int(size)
        if size % n_actions:
            raise InvalidArgument(f"size {size} is not a multiple of n_actions={n_actions}")
        row = impossibility_demo(size // n_actions, n_actions, obs_prob, spec.seeds,
                                 SeededRng(int(spec.base.get("seed", 0))).child(idx))
        row[spec.parameter] = size
        rows.append(row)
    x = np.array([r["size_over_p"] for r in rows])
    y = np.array([r["mean_samples"] for r in rows])
    summary = {"min_ratio_to_size_over_p": float(np.min(y / x))}
    if len(rows) >= 2:
        summary["linear_slope"] = float(np.polyfit(x, y, 1)[0])
    cols = (spec.parameter, "n_states", "n_actions", "obs_prob", "size_over_p", "mean_samples",
            "mean_samples_se", "censored", "n_seeds")
    return StudyTable("impossibility", cols, rows, summary)


_LOOP_BASE = {"n_states": 20, "n_actions": 5, "branching": 3, "rank": 2, "sigma": 0.1,
              "total_steps": 30000, "completion_period_K": 1000, "rank_hint": 2,
              "obs_prob": 0.2, "tau": 0.5}

STUDIES = {
    "ipw": (ipw_advantage_study, SweepSpec("kappa", (0.02,), 20, {})),
    "kappa": (kappa_scaling_study,
              SweepSpec("epsilon", (0.5, 0.2, 0.1, 0.05, 0.02), 20,
                        {"n_states": 30, "n_actions": 5, "rank": 2, "sigma": 0.5, "n_steps": 20000})),
    "rank": (rank_stress_study, SweepSpec("rank", (2, 3, 4, 5), 10, _LOOP_BASE)),
    "alignment": (alignment_stress_study, SweepSpec("mixing", (0.0, 0.25, 0.5, 0.75, 1.0), 10, {})),
    "regret": (regret_vs_error_study, SweepSpec("sigma", (0.0, 0.5, 1.0, 2.0, 4.0), 10, _LOOP_BASE)),
    "sample_complexity": (sample_complexity_study,
                          SweepSpec("n_obs", (250, 500, 1000, 2000, 4000), 20, {"sigma": 0.1})),
    "drift": (drift_study, SweepSpec("drift", (0.0, 0.05, 0.1, 0.2), 10, _LOOP_BASE)),
    "coverage": (coverage_study, SweepSpec("alpha", (0.05,), 20, {})),
    "impossibility": (impossibility_study, SweepSpec("size", (16, 64, 256), 200, {"obs_prob": 0.25})),
}


def run_study(name: str, spec: Optional[SweepSpec], outdir) -> StudyTable:
    """Run a registered study, write ``<name>.csv`` and ``<name>_summary.txt``
    into ``outdir`` and append it to ``index.csv``."""
    if name not in STUDIES:
        raise InvalidArgument(f"unknown study {name!r}; known: {', '.join(sorted(STUDIES))}")
    fn, default = STUDIES[name]
    spec = spec or default
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    if name == "coverage":
        table = fn(spec, coverage_csv=out / "coverage_runs.csv")
    else:
        table = fn(spec)
    path = table.to_csv(out / f"{name}.csv")
    table.write_summary(out / f"{name}_summary.txt")
    index = out / "index.csv"
    if not index.exists():
        index.write_text("study,path,config_hash\n")
    with index.open("a") as fh:
        fh.write(f"{name},{path.name},{spec.config_hash()}\n")
    return table


# Keys a study base config may carry; the loop studies also read every
# LoopConfig field except the nested solver.
STUDY_KEYS = frozenset({
    "seed", "n_states", "n_actions", "branching", "gamma", "rank", "sigma", "rank_hint",
    "n_steps", "obs_prob", "clip_floor", "epsilon", "lambda_L", "alpha", "tau",
    "calibration_fraction", "feature_dim", "mixing", "n_obs", "drift", "occupancy_horizon",
    "observed", "rare_fraction", "p_common", "p_rare", "kappa",
}) | frozenset(f.name for f in dataclasses.fields(LoopConfig) if f.name != "solver")
