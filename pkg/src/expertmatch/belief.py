"""Posterior over unknown expert thresholds.

A threshold rule observed without noise only tells us an interval: every
decision 1 at probability p puts the threshold at or below p, every decision 0
puts it above p. The posterior is the prior Beta shape stretched onto the
current interval ``[lo, hi]``, with density proportional to
``(hi - theta)**(a - 1) * (theta - lo)**(b - 1)``.

Note the orientation: the *first* prior shape ``a`` sits on the distance to
the upper end. With ``u = (theta - lo) / (hi - lo)`` the density becomes
``u**(b - 1) * (1 - u)**(a - 1)``, i.e. ``u ~ Beta(b, a)``. Sampling with the
shapes in the natural order is the classic mistake here.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Hashable, Sequence

import numpy as np
from scipy import special


class InconsistentObservation(ValueError):
    """Observations leave no threshold consistent with all decisions."""


@dataclass(frozen=True)
class ThresholdBelief:
    alpha: float = 1.0
    beta: float = 1.0
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("prior shapes must be positive")
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ValueError(f"bad bounds [{self.lo}, {self.hi}]")


def update(belief: ThresholdBelief, p_observed: float, decision: int) -> ThresholdBelief:
    """Shrink the interval after seeing ``decision`` at probability ``p_observed``."""
    if not 0.0 <= p_observed <= 1.0:
        raise ValueError(f"probability out of [0, 1]: {p_observed!r}")
    lo, hi = belief.lo, belief.hi
    if decision == 1:
        hi = min(hi, p_observed)
    elif decision == 0:
        lo = max(lo, p_observed)
    else:
        raise ValueError(f"decision must be 0 or 1, got {decision!r}")
    if lo >= hi:
        raise InconsistentObservation(f"interval collapsed to [{lo}, {hi}]")
    return replace(belief, lo=lo, hi=hi)


def _require_interval(belief: ThresholdBelief):
    if belief.lo >= belief.hi:
        raise ValueError(f"degenerate interval [{belief.lo}, {belief.hi}]")


def posterior_density(belief: ThresholdBelief, theta: float) -> float:
    _require_interval(belief)
    lo, hi, a, b = belief.lo, belief.hi, belief.alpha, belief.beta
    if theta < lo or theta > hi:
        return 0.0
    width = hi - lo
    log_norm = special.gammaln(a + b) - special.gammaln(a) - special.gammaln(b) - (a + b - 1) * np.log(width)
    with np.errstate(divide="ignore"):
        log_kernel = (a - 1) * np.log(hi - theta) + (b - 1) * np.log(theta - lo)
    return float(np.exp(log_norm + log_kernel))


def posterior_cdf(belief: ThresholdBelief, theta):
    _require_interval(belief)
    u = np.clip((np.asarray(theta, dtype=float) - belief.lo) / (belief.hi - belief.lo), 0.0, 1.0)
    return special.betainc(belief.beta, belief.alpha, u)


def sample(belief: ThresholdBelief, rng: np.random.Generator, size=None):
    if not belief.hi > belief.lo:
        raise ValueError(f"degenerate interval [{belief.lo}, {belief.hi}]")
    u = rng.beta(belief.beta, belief.alpha, size=size)
    return belief.lo + u * (belief.hi - belief.lo)


def _mode_fraction(a, b):
    """Mode of ``u ~ Beta(b, a)`` on [0, 1]; flat case -> 1/2, both shapes < 1 -> heavier end."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    interior = (a > 1) & (b > 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mode = np.where(interior, (b - 1) / (a + b - 2), 0.0)
    flat = (a == 1) & (b == 1)
    rising = ~interior & ~flat & (b >= a)  # density grows towards u = 1 (or the u = 1 pole is stronger)
    mode = np.where(flat, 0.5, np.where(rising, 1.0, mode))
    return mode


def map_estimate(belief: ThresholdBelief) -> float:
    _require_interval(belief)
    frac = float(_mode_fraction(belief.alpha, belief.beta))
    return belief.lo + frac * (belief.hi - belief.lo)


@dataclass
class BeliefSet:
    """Beliefs for every (expert, group) pair, stored as ``(n, 2)`` arrays.

    ``pinned`` entries are thresholds taken as known; they bypass sampling
    and are never updated.
    """

    expert_ids: Sequence[Hashable]
    alpha: np.ndarray
    beta: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    pinned: np.ndarray = None
    log: list = field(default_factory=list)

    @classmethod
    def uniform(cls, expert_ids, alpha: float = 1.0, beta: float = 1.0) -> "BeliefSet":
        n = len(expert_ids)
        return cls(list(expert_ids), np.full((n, 2), float(alpha)), np.full((n, 2), float(beta)),
                   np.zeros((n, 2)), np.ones((n, 2)), np.full((n, 2), np.nan))

    def __post_init__(self):
        if self.pinned is None:
            self.pinned = np.full(self.lo.shape, np.nan)

    def __len__(self):
        return len(self.expert_ids)

    def pin(self, j: int, z: int, theta: float):
        self.pinned[j, z] = theta

    def belief(self, j: int, z: int) -> ThresholdBelief:
        return ThresholdBelief(self.alpha[j, z], self.beta[j, z], self.lo[j, z], self.hi[j, z])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = rng.beta(self.beta, self.alpha)
        theta = self.lo + u * (self.hi - self.lo)
        return np.where(np.isnan(self.pinned), theta, self.pinned)

    def map_estimate(self) -> np.ndarray:
        theta = self.lo + _mode_fraction(self.alpha, self.beta) * (self.hi - self.lo)
        return np.where(np.isnan(self.pinned), theta, self.pinned)

    def observe(self, t: int, experts: Sequence[int], p: np.ndarray, z: np.ndarray, d: np.ndarray):
        """Record realised decisions of ``experts[i]`` on cases ``(p[i], z[i])``."""
        experts = np.asarray(experts, dtype=np.int64)
        ones = d == 1
        # np.minimum.at / maximum.at handle one expert seen several times in a batch
        np.minimum.at(self.hi, (experts[ones], z[ones]), p[ones])
        np.maximum.at(self.lo, (experts[~ones], z[~ones]), p[~ones])
        bad = self.lo[experts, z] >= self.hi[experts, z]
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise InconsistentObservation(
                f"expert {self.expert_ids[experts[k]]} group {z[k]}: "
                f"[{self.lo[experts[k], z[k]]}, {self.hi[experts[k], z[k]]}]")
        self.log.append((t, experts.copy(), p.copy(), z.copy(), d.copy()))
