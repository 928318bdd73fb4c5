"""Matrix and observation containers, seeded randomness, and the planted
low-rank + sparse reward generator."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgument

RANK_RTOL = 1e-9


class SeededRng:
    """Owns a single PCG64 stream derived from a 64-bit seed.

    Instances are single-owner. Use :meth:`child` to hand independent,
    reproducible streams to sub-computations.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise InvalidArgument(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._seq = np.random.SeedSequence(seed)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, *key: int) -> "SeededRng":
        # Derived purely from (seed, key) so it does not depend on how much
        # of the parent stream has been consumed.
        words = np.random.SeedSequence([self.seed, *[int(k) for k in key]]).generate_state(2, np.uint64)
        return SeededRng(int(words[0]) ^ (int(words[1]) >> 1))

    def __repr__(self):
        return f"SeededRng({self.seed})"


def as_rng(rng) -> SeededRng:
    if isinstance(rng, SeededRng):
        return rng
    return SeededRng(0 if rng is None else rng)


@dataclass(frozen=True)
class RewardMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidArgument(f"reward matrix must be 2-D and non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("reward matrix contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n_states(self) -> int:
        return self.values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "RewardMatrix":
        return cls(np.zeros((n_states, n_actions)))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __add__(self, other):
        return RewardMatrix(self.values + _values(other))

    def __sub__(self, other):
        return RewardMatrix(self.values - _values(other))


def _values(x) -> np.ndarray:
    if isinstance(x, RewardMatrix):
        return x.values
    return np.asarray(x, dtype=float)


def numerical_rank(matrix, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(_values(matrix), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class StructuredReward:
    """Planted decomposition ``R = L* + S* + Delta + E``.

    ``clean`` is the mean reward (what a policy is scored against) and
    ``values`` is one noisy realisation of it.
    """

    low_rank: RewardMatrix
    sparse: RewardMatrix
    noise: RewardMatrix
    noise_sigma: float
    planted_rank: int
    sparse_density: float
    misspecification: Optional[RewardMatrix] = None

    def __post_init__(self):
        if self.misspecification is None:
            object.__setattr__(
                self, "misspecification", RewardMatrix.zeros(*self.low_rank.shape)
            )
        shapes = {m.shape for m in (self.low_rank, self.sparse, self.noise, self.misspecification)}
        if len(shapes) != 1:
            raise InvalidArgument(f"component shapes disagree: {sorted(shapes)}")

    @property
    def shape(self):
        return self.low_rank.shape

    @property
    def clean(self) -> np.ndarray:
        return self.low_rank.values + self.sparse.values + self.misspecification.values

    @property
    def values(self) -> np.ndarray:
        return self.clean + self.noise.values

    def with_misspecification(self, delta) -> "StructuredReward":
        return StructuredReward(
            self.low_rank, self.sparse, self.noise, self.noise_sigma,
            self.planted_rank, self.sparse_density, RewardMatrix(delta),
        )


def generate_structured_reward(
    n_states: int,
    n_actions: int,
    rank: int,
    sparse_density: float = 0.0,
    sparse_magnitude: float = 1.0,
    sigma: float = 0.0,
    rng=None,
) -> StructuredReward:
    """Draw a planted reward ``L* + S* + E``.

    ``L* = U V^T`` with standard normal factors scaled by ``1/sqrt(rank)``,
    so entries of ``L*`` have unit variance for any rank. Each entry of
    ``S*`` is nonzero with probability ``sparse_density`` and uniform in
    ``[-sparse_magnitude, sparse_magnitude]``; ``E`` is i.i.d.
    ``N(0, sigma^2)``.
    """
    if n_states < 1 or n_actions < 1:
        raise InvalidArgument("matrix dimensions must be positive")
    if not 0 <= rank <= min(n_states, n_actions):
        raise InvalidArgument(f"rank {rank} exceeds min dimension {min(n_states, n_actions)}")
    if not 0.0 <= sparse_density <= 1.0:
        raise InvalidArgument("sparse_density must lie in [0, 1]")
    if sigma < 0:
        raise InvalidArgument("sigma must be nonnegative")
    gen = as_rng(rng).gen

    if rank > 0:
        u = gen.standard_normal((n_states, rank))
        v = gen.standard_normal((n_actions, rank))
        low = (u @ v.T) / np.sqrt(rank)
    else:
        low = np.zeros((n_states, n_actions))

    support = gen.random((n_states, n_actions)) < sparse_density
    spikes = gen.uniform(-sparse_magnitude, sparse_magnitude, (n_states, n_actions))
    sparse = np.where(support, spikes, 0.0)

    noise = sigma * gen.standard_normal((n_states, n_actions)) if sigma > 0 else np.zeros_like(low)
    return StructuredReward(
        low_rank=RewardMatrix(low),
        sparse=RewardMatrix(sparse),
        noise=RewardMatrix(noise),
        noise_sigma=float(sigma),
        planted_rank=int(rank),
        sparse_density=float(sparse_density),
    )


def frobenius_error(a, b, weights=None) -> float:
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch: {a.shape} vs {b.shape}")
    d2 = (a - b) ** 2
    if weights is not None:
        w = _values(weights)
        if w.shape != a.shape:
            raise InvalidArgument(f"weight shape {w.shape} does not match {a.shape}")
        if np.any(w < 0):
            raise InvalidArgument("weights must be nonnegative")
        d2 = w * d2
    return float(np.sqrt(d2.sum()))


@dataclass(frozen=True)
class ObservationSet:
    """Observed ``(state, action, reward)`` samples on an ``n_states x n_actions`` grid."""

    n_states: int
    n_actions: int
    states: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    actions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64).ravel()
        a = np.asarray(self.actions, dtype=np.int64).ravel()
        r = np.asarray(self.rewards, dtype=float).ravel()
        if not (len(s) == len(a) == len(r)):
            raise InvalidArgument("states, actions and rewards must have equal length")
        if len(s) and (s.min() < 0 or s.max() >= self.n_states or a.min() < 0 or a.max() >= self.n_actions):
            raise InvalidArgument("sample index out of matrix bounds")
        if not np.all(np.isfinite(r)):
            raise InvalidArgument("observed rewards must be finite")
        for name, arr in (("states", s), ("actions", a), ("rewards", r)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        counts = np.zeros((self.n_states, self.n_actions), dtype=np.int64)
        np.add.at(counts, (s, a), 1)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_samples(cls, n_states: int, n_actions: int, samples: Sequence) -> "ObservationSet":
        if len(samples) == 0:
            return cls(n_states, n_actions)
        s, a, r = zip(*samples)
        return cls(n_states, n_actions, s, a, r)

    @classmethod
    def from_matrix(cls, matrix, mask) -> "ObservationSet":
        """One sample per ``True`` entry of ``mask``, read from ``matrix``."""
        m = _values(matrix)
        s, a = np.nonzero(np.asarray(mask, dtype=bool))
        return cls(m.shape[0], m.shape[1], s, a, m[s, a])

    @property
    def shape(self):
        return (self.n_states, self.n_actions)

    @property
    def mask(self) -> np.ndarray:
        return self.counts > 0

    @property
    def samples(self):
        return list(zip(self.states.tolist(), self.actions.tolist(), self.rewards.tolist()))

    def __len__(self):
        return len(self.rewards)

    def mean_matrix(self) -> np.ndarray:
        """Per-entry average of the observed rewards; zero where unobserved."""
        sums = np.zeros(self.shape)
        np.add.at(sums, (self.states, self.actions), self.rewards)
        return np.divide(sums, self.counts, out=np.zeros(self.shape), where=self.counts > 0)

    def subset(self, entry_mask) -> "ObservationSet":
        """Samples whose entry lies inside ``entry_mask``."""
        keep = np.asarray(entry_mask, dtype=bool)[self.states, self.actions]
        return ObservationSet(self.n_states, self.n_actions,
                              self.states[keep], self.actions[keep], self.rewards[keep])

    def split(self, fraction: float, rng) -> tuple["ObservationSet", "ObservationSet"]:
        """Partition by *entry* into (fit, held_out) with ``fraction`` of the
        observed entries held out, so the two sets never share an entry."""
        entries = np.flatnonzero(self.mask.ravel())
        n_hold = int(round(fraction * len(entries)))
        held = as_rng(rng).gen.permutation(entries)[:n_hold]
        held_mask = np.zeros(self.n_states * self.n_actions, dtype=bool)
        held_mask[held] = True
        held_mask = held_mask.reshape(self.shape)
        return self.subset(~held_mask), self.subset(held_mask)

    def concat(self, other: "ObservationSet") -> "ObservationSet":
        return ObservationSet(
            self.n_states, self.n_actions,
            np.concatenate([self.states, other.states]),
            np.concatenate([self.actions, other.actions]),
            np.concatenate([self.rewards, other.rewards]),
        )


# CSV: first line "<rows>,<cols>", then one line per matrix row.

def write_matrix_csv(path, matrix) -> None:
    m = _values(matrix)
    if m.ndim != 2:
        raise InvalidArgument("only 2-D matrices serialize to CSV")
    lines = [f"{m.shape[0]},{m.shape[1]}"]
    lines += [",".join(format(float(x), ".17g") for x in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    lines = Path(path).read_text().strip().splitlines()
    rows, cols = (int(x) for x in lines[0].split(","))
    data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]], dtype=float)
    data = data.reshape(rows, cols)
    return data
