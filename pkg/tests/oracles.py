"""Independent reference implementations used only by the tests.

Each oracle is deliberately naive (dense loops, no shared code with the
package) so that agreement is evidence rather than tautology.
"""

import itertools

import numpy as np


def power_iteration_chain(transition: np.ndarray, start: np.ndarray, steps: int) -> np.ndarray:
    """Distribution after ``steps`` applications of a row-stochastic matrix."""
    d = start.astype(float)
    for _ in range(steps):
        d = d @ transition
    return d


def enumerate_trajectories(p: np.ndarray, policy: np.ndarray, start: np.ndarray, depth: int) -> np.ndarray:
    """Average state-action visitation over depth-``depth`` trajectories by
    listing every (state, action) sequence with nonzero probability."""
    n_s, n_a = policy.shape
    occ = np.zeros((n_s, n_a))
    stack = [(s, start[s], 0) for s in range(n_s) if start[s] > 0]
    while stack:
        s, prob, t = stack.pop()
        if t == depth:
            continue
        for a in range(n_a):
            pa = prob * policy[s, a]
            if pa == 0:
                continue
            occ[s, a] += pa
            for s2 in np.flatnonzero(p[s, a]):
                stack.append((int(s2), pa * p[s, a, s2], t + 1))
    return occ / depth


def finite_horizon_q(p: np.ndarray, r: np.ndarray, gamma: float, horizon: int) -> np.ndarray:
    """Explicit backward dynamic program over ``horizon`` stages."""
    n_s, n_a = r.shape
    v = np.zeros(n_s)
    q = np.zeros((n_s, n_a))
    for _ in range(horizon):
        for s, a in itertools.product(range(n_s), range(n_a)):
            q[s, a] = r[s, a] + gamma * sum(p[s, a, s2] * v[s2] for s2 in range(n_s))
        v = q.max(axis=1)
    return q.copy()


def monte_carlo_return(p, r, gamma, policy, start, restart, n_steps, rng):
    """Discounted return estimate by rolling out episodes that end at each
    restart; returns (mean, standard error)."""
    n_s, n_a = r.shape
    returns = []
    steps = 0
    while steps < n_steps:
        s = rng.choice(n_s, p=start)
        total, disc = 0.0, 1.0
        while True:
            a = rng.choice(n_a, p=policy[s])
            total += disc * r[s, a]
            disc *= gamma
            steps += 1
            if rng.random() < restart or disc < 1e-12:
                break
            s = rng.choice(n_s, p=p[s, a])
        returns.append(total)
    x = np.asarray(returns)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(len(x)))


def pcp_objective_dense(L, S, R, W, mask, lam_l, lam_s):
    resid = np.where(mask, R - L - S, 0.0)
    return (0.5 * np.sum(W * resid ** 2) + lam_l * np.linalg.svd(L, compute_uv=False).sum()
            + lam_s * np.abs(S).sum())


def reference_pcp(R, W, mask, lam_l, lam_s, iters=1_000_000, step=None, tol=1e-13):
    """Plain (unaccelerated) proximal gradient with a small fixed step, run
    for a very long horizon. Uses numpy's LAPACK SVD, not the package's."""
    step = step or 0.25 / W.max()
    L = np.zeros_like(R)
    S = np.zeros_like(R)
    prev = np.inf
    for i in range(iters):
        g = np.where(mask, W * (L + S - R), 0.0)
        u, s, vt = np.linalg.svd(L - step * g, full_matrices=False)
        L = (u * np.maximum(s - step * lam_l, 0.0)) @ vt
        y = S - step * g
        S = np.sign(y) * np.maximum(np.abs(y) - step * lam_s, 0.0)
        if i % 1000 == 999:
            f = pcp_objective_dense(L, S, R, W, mask, lam_l, lam_s)
            if prev - f < tol * max(1.0, abs(f)):
                break
            prev = f
    return L, S
