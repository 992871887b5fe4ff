"""Value types, threshold rules and the utility / benefit / disparate-impact metrics."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np


class BenefitConvention(str, enum.Enum):
    """Which decision counts as beneficial: f(d) = d or f(d) = 1 - d."""

    IDENTITY = "identity"
    COMPLEMENT = "complement"

    def apply(self, decisions):
        d = np.asarray(decisions, dtype=np.int64)
        return d if self is BenefitConvention.IDENTITY else 1 - d


@dataclass(frozen=True)
class DecisionCase:
    id: Hashable
    z: int
    p: float
    y_true: int | None = None

    def __post_init__(self):
        if self.z not in (0, 1):
            raise ValueError(f"group label must be 0 or 1, got {self.z!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"probability out of [0, 1]: {self.p!r}")
        if self.y_true is not None and self.y_true not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.y_true!r}")


@dataclass(frozen=True)
class Expert:
    id: Hashable
    theta: Mapping[int, float]

    def __post_init__(self):
        if set(self.theta) != {0, 1}:
            raise ValueError("expert needs a threshold for both groups 0 and 1")
        for v in self.theta.values():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"threshold out of [0, 1]: {v!r}")
        object.__setattr__(self, "theta", dict(self.theta))

    @property
    def thresholds(self) -> tuple[float, float]:
        return self.theta[0], self.theta[1]


@dataclass(frozen=True)
class FairThresholds:
    theta0: float
    theta1: float
    # False when no grid point met the DI tolerance and (c, c) was returned instead
    feasible: bool = field(default=True, compare=False)

    def __post_init__(self):
        for v in (self.theta0, self.theta1):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"threshold out of [0, 1]: {v!r}")

    def __getitem__(self, z: int) -> float:
        return (self.theta0, self.theta1)[z]

    @property
    def thresholds(self) -> tuple[float, float]:
        return self.theta0, self.theta1


@dataclass(frozen=True)
class CostParam:
    c: float

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise ValueError(f"cost must lie in (0, 1), got {self.c!r}")

    def __float__(self):
        return float(self.c)


def _cost(c) -> float:
    return float(c.c) if isinstance(c, CostParam) else float(c)


def _theta_pair(theta) -> tuple[float, float]:
    if isinstance(theta, (Expert, FairThresholds)):
        return theta.thresholds
    if isinstance(theta, Mapping):
        return float(theta[0]), float(theta[1])
    t0, t1 = theta
    return float(t0), float(t1)


def case_arrays(cases: Sequence[DecisionCase]) -> tuple[np.ndarray, np.ndarray]:
    """Return the (p, z) arrays of a round."""
    p = np.fromiter((cs.p for cs in cases), dtype=float, count=len(cases))
    z = np.fromiter((cs.z for cs in cases), dtype=np.int64, count=len(cases))
    return p, z


def apply_threshold_rule(p: float, z: int, theta) -> int:
    """Decide 1 iff ``p >= theta[z]``; the boundary decides 1."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of [0, 1]: {p!r}")
    return int(p >= _theta_pair(theta)[z])


def threshold_decisions(p, z, theta) -> np.ndarray:
    """Vectorised :func:`apply_threshold_rule` for one threshold pair."""
    t = np.asarray(_theta_pair(theta))
    return (np.asarray(p) >= t[np.asarray(z)]).astype(np.int64)


def _aligned(decisions, cases):
    d = np.asarray(decisions, dtype=np.int64)
    if d.shape != (len(cases),):
        raise ValueError(f"{d.size} decisions for {len(cases)} cases")
    return d


def empirical_utility(decisions, cases: Sequence[DecisionCase], c, rounds: int, per_round: int) -> float:
    """Sequence utility ``(1/(mT)) * sum d_i (p_i - c)``."""
    d = _aligned(decisions, cases)
    if len(cases) != rounds * per_round:
        raise ValueError(f"expected {rounds * per_round} cases, got {len(cases)}")
    if len(cases) == 0:
        return 0.0
    p, _ = case_arrays(cases)
    return float(np.sum(d * (p - _cost(c))) / (rounds * per_round))


def true_utility(decisions, cases: Sequence[DecisionCase], c, rounds: int) -> float:
    """Realised utility ``(1/T) * sum d_i (y_i - c)`` using observed labels."""
    d = _aligned(decisions, cases)
    if any(cs.y_true is None for cs in cases):
        raise ValueError("true utility needs y_true on every case")
    if rounds <= 0:
        raise ValueError("rounds must be positive")
    y = np.fromiter((cs.y_true for cs in cases), dtype=float, count=len(cases))
    return float(np.sum(d * (y - _cost(c))) / rounds)


def group_benefit(decisions, cases: Sequence[DecisionCase], z: int,
                  convention: BenefitConvention = BenefitConvention.IDENTITY) -> int:
    d = _aligned(decisions, cases)
    _, zs = case_arrays(cases)
    return int(np.sum(BenefitConvention(convention).apply(d)[zs == z]))


def disparate_impact(decisions, cases: Sequence[DecisionCase],
                     convention: BenefitConvention = BenefitConvention.IDENTITY) -> float:
    """Per-round DI: ``|b_1 - b_0| / m`` with b the benefit counts."""
    if len(cases) == 0:
        raise ValueError("disparate impact of an empty round is undefined")
    b0 = group_benefit(decisions, cases, 0, convention)
    b1 = group_benefit(decisions, cases, 1, convention)
    return abs(b1 - b0) / len(cases)


def round_metrics(d: np.ndarray, p: np.ndarray, z: np.ndarray, c: float,
                  convention: BenefitConvention = BenefitConvention.IDENTITY):
    """Array form used by the round engine: (utility sum, b0, b1)."""
    f = BenefitConvention(convention).apply(d)
    return float(np.sum(d * (p - c))), int(f[z == 0].sum()), int(f[z == 1].sum())


def _group_curves(p: np.ndarray, grid: np.ndarray, c: float, convention: BenefitConvention):
    """Utility sum and benefit count of the rule ``p >= theta`` for every theta on ``grid``."""
    ps = np.sort(p)
    gain = np.concatenate([[0.0], np.cumsum((ps - c)[::-1])])  # gain[k]: top-k cases decide 1
    k = ps.size - np.searchsorted(ps, grid, side="left")
    ones = k
    benefit = ones if convention is BenefitConvention.IDENTITY else ps.size - ones
    return gain[k], benefit


def optimal_fair_thresholds(cases, c, alpha: float,
                            convention: BenefitConvention = BenefitConvention.IDENTITY,
                            grid: int = 200) -> FairThresholds:
    """Grid-search the group thresholds maximising sample utility under a DI tolerance.

    The constraint is ``|b_1 - b_0| / m <= alpha`` on the sample (b are benefit
    counts, m the sample size); it is vacuous when a group is absent. The grid is
    ``{0, 1/grid, ..., 1}`` plus ``c`` itself. Ties go to the pair closest to
    ``(c, c)`` in L1 distance, then to the lexicographically smaller pair.

    ``cases`` may be DecisionCase objects or a ``(p, z)`` pair of arrays.
    """
    c = _cost(c)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    if isinstance(cases, tuple) and len(cases) == 2 and not isinstance(cases[0], DecisionCase):
        p, z = np.asarray(cases[0], dtype=float), np.asarray(cases[1], dtype=np.int64)
    else:
        p, z = case_arrays(cases)
    if p.size == 0:
        raise ValueError("empty reference sample")
    convention = BenefitConvention(convention)
    thetas = np.union1d(np.linspace(0.0, 1.0, grid + 1), [c])
    u0, b0 = _group_curves(p[z == 0], thetas, c, convention)
    u1, b1 = _group_curves(p[z == 1], thetas, c, convention)
    m = p.size
    util = u0[:, None] + u1[None, :]
    if (z == 0).any() and (z == 1).any():
        ok = np.abs(b1[None, :] - b0[:, None]) <= alpha * m + 1e-9
    else:
        ok = np.ones_like(util, dtype=bool)
    if not ok.any():
        return FairThresholds(c, c, feasible=False)
    dist = np.abs(thetas - c)
    score = np.where(ok, util, -np.inf)
    best = score.max()
    cand = np.argwhere(score == best)  # row-major, hence lexicographic
    closeness = dist[cand[:, 0]] + dist[cand[:, 1]]
    i, j = cand[int(np.argmin(closeness))]
    return FairThresholds(float(thetas[i]), float(thetas[j]))
