"""Round engine: policies, synthetic generator, regret tracking, adversarial instances."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .belief import BeliefSet
from .domain import (
    BenefitConvention,
    DecisionCase,
    Expert,
    FairThresholds,
    optimal_fair_thresholds,
    round_metrics,
)
from .fairmatch import BandConstraint, compute_bands, solve_constrained
from .matching import AssignmentGraph, graph_arrays, max_weight_matching


class PolicyKind(str, enum.Enum):
    OPTIMAL = "optimal"
    KNOWN = "known"
    UNKNOWN_POSTERIOR = "unknown"
    UNKNOWN_POINT = "unknown_point"
    RANDOM = "random"


# fixed stream ids so adding or reordering policies never shifts another policy's draws
_STREAM = {PolicyKind.OPTIMAL: 10, PolicyKind.KNOWN: 11, PolicyKind.UNKNOWN_POSTERIOR: 12,
           PolicyKind.UNKNOWN_POINT: 13, PolicyKind.RANDOM: 14}
_DRAWS, _EXPERTS, _REFERENCE = 0, 1, 2


def stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


@dataclass(frozen=True)
class Fairness:
    alpha: float
    thresholds: FairThresholds
    convention: BenefitConvention = BenefitConvention.IDENTITY


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    fairness: Fairness | None = None

    @property
    def name(self) -> str:
        return PolicyKind(self.kind).value


@dataclass
class SyntheticConfig:
    m: int = 20
    n: int | None = None  # defaults to 3m
    T: int = 1000
    c: float = 0.5
    seed: int = 0
    z_prob: float = 0.5
    p_shape: tuple = ((3.0, 5.0), (4.0, 3.0))  # Beta shapes of p given z = 0, 1
    theta_shape: tuple = ((0.5, 0.5), (5.0, 5.0))  # Beta shapes of expert thresholds per group
    prior_alpha: float = 1.0
    prior_beta: float = 1.0

    def __post_init__(self):
        if self.n is None:
            self.n = 3 * self.m
        if self.m < 1 and self.T > 0:
            raise ValueError("m must be at least 1")
        if self.n < self.m:
            raise ValueError(f"n={self.n} experts cannot cover m={self.m} cases")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if not 0.0 < self.c < 1.0:
            raise ValueError("c must lie in (0, 1)")


@dataclass
class RoundResult:
    t: int
    policy: str
    utility: float  # (1/m) * sum d (p - c)
    true_utility: float  # sum d (y - c)
    di: float
    benefit: tuple[int, int]
    feasible: bool
    assignment: tuple[int, ...] | None
    decisions: np.ndarray


@dataclass
class RunResult:
    policy: str
    rounds: list[RoundResult] = field(default_factory=list)
    regret: np.ndarray = field(default_factory=lambda: np.zeros(0))
    draw_digest: str = ""

    @property
    def utility_round(self) -> np.ndarray:
        return np.array([r.utility for r in self.rounds])

    @property
    def utility_cum(self) -> np.ndarray:
        """Running ``u_{<=t}``: mean of the per-round utilities so far."""
        u = self.utility_round
        return np.cumsum(u) / np.arange(1, u.size + 1) if u.size else u

    @property
    def true_utility_cum(self) -> np.ndarray:
        """Running ``(1/t) * sum_s sum_i d (y - c)``."""
        u = np.array([r.true_utility for r in self.rounds])
        return np.cumsum(u) / np.arange(1, u.size + 1) if u.size else u

    @property
    def di_round(self) -> np.ndarray:
        return np.array([r.di for r in self.rounds])

    @property
    def feasible(self) -> np.ndarray:
        return np.array([r.feasible for r in self.rounds], dtype=bool)

    @property
    def total_utility(self) -> float:
        u = self.utility_cum
        return float(u[-1]) if u.size else 0.0

    @property
    def mean_di(self) -> float:
        d = self.di_round
        return float(d.mean()) if d.size else 0.0


@dataclass
class Round:
    p: np.ndarray
    z: np.ndarray
    y: np.ndarray | None = None

    def cases(self, t: int = 0) -> list[DecisionCase]:
        y = self.y if self.y is not None else [None] * self.p.size
        return [DecisionCase((t, i), int(self.z[i]), float(self.p[i]), None if y[i] is None else int(y[i]))
                for i in range(self.p.size)]

    @classmethod
    def from_cases(cls, cases: Sequence[DecisionCase]) -> "Round":
        p = np.array([cs.p for cs in cases], dtype=float)
        z = np.array([cs.z for cs in cases], dtype=np.int64)
        y = None if any(cs.y_true is None for cs in cases) else np.array([cs.y_true for cs in cases])
        return cls(p, z, y)


def _draw_round(config: SyntheticConfig, rng: np.random.Generator, m: int | None = None) -> Round:
    m = config.m if m is None else m
    z = (rng.random(m) < config.z_prob).astype(np.int64)
    (a0, b0), (a1, b1) = config.p_shape
    p = np.where(z == 0, rng.beta(a0, b0, m), rng.beta(a1, b1, m))
    y = (rng.random(m) < p).astype(np.int64)
    return Round(p, z, y)


def generate_round(config: SyntheticConfig, rng: np.random.Generator) -> list[DecisionCase]:
    return _draw_round(config, rng).cases()


def expert_thresholds(config: SyntheticConfig, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    n = config.n if n is None else n
    (a0, b0), (a1, b1) = config.theta_shape
    return np.column_stack([rng.beta(a0, b0, n), rng.beta(a1, b1, n)])


def generate_experts(config: SyntheticConfig, rng: np.random.Generator) -> list[Expert]:
    thetas = expert_thresholds(config, rng)
    return [Expert(j, {0: float(t0), 1: float(t1)}) for j, (t0, t1) in enumerate(thetas)]


def _thresholds_of(experts: Sequence[Expert]) -> np.ndarray:
    return np.array([e.thresholds for e in experts], dtype=float).reshape(len(experts), 2)


def round_graph(rnd: Round, thetas: np.ndarray, c: float, experts=None) -> AssignmentGraph:
    weights, bits = graph_arrays(rnd.p, rnd.z, thetas, c)
    return AssignmentGraph(weights, bits, experts or [], rnd.cases())


def _assign(graph: AssignmentGraph, bands) -> tuple[tuple[int, ...], bool]:
    if bands is None:
        return max_weight_matching(graph).assign, True
    sol, feasible = solve_constrained(graph, bands)
    return sol.assign, feasible


def run_round(policy: Policy, cases, experts, beliefs: BeliefSet | None, c: float,
              bands: Sequence[BandConstraint] | None = None, rng: np.random.Generator | None = None,
              t: int = 0, true_thresholds: np.ndarray | None = None) -> RoundResult:
    """Play one round of ``policy``; unknown-threshold policies update ``beliefs`` in place.

    ``cases`` is a list of DecisionCase or a :class:`Round`. When ``bands`` is
    given and no assignment can meet them, the unconstrained optimum is used
    and the round is recorded as infeasible.
    """
    rnd = cases if isinstance(cases, Round) else Round.from_cases(cases)
    kind = PolicyKind(policy.kind)
    fair = policy.fairness
    convention = fair.convention if fair else BenefitConvention.IDENTITY
    thetas = _thresholds_of(experts) if true_thresholds is None else true_thresholds
    m = rnd.p.size
    feasible = True
    assignment = None
    if kind is PolicyKind.OPTIMAL:
        ref = fair.thresholds.thresholds if fair else (c, c)
        d = (rnd.p >= np.asarray(ref)[rnd.z]).astype(np.int64)
    else:
        if kind is PolicyKind.RANDOM:
            if rng is None:
                raise ValueError("random policy needs an rng")
            assignment = tuple(int(j) for j in rng.choice(thetas.shape[0], size=m, replace=False))
        else:
            if kind is PolicyKind.KNOWN:
                believed = thetas
            elif beliefs is None:
                raise ValueError(f"{kind.value} policy needs beliefs")
            elif kind is PolicyKind.UNKNOWN_POSTERIOR:
                if rng is None:
                    raise ValueError("posterior sampling needs an rng")
                believed = beliefs.sample(rng)
            else:
                believed = beliefs.map_estimate()
            assignment, feasible = _assign(round_graph(rnd, believed, c), bands)
        idx = np.asarray(assignment, dtype=np.int64)
        d = (rnd.p >= thetas[idx, rnd.z]).astype(np.int64)
        if kind in (PolicyKind.UNKNOWN_POSTERIOR, PolicyKind.UNKNOWN_POINT):
            beliefs.observe(t, idx, rnd.p, rnd.z, d)
    util_sum, b0, b1 = round_metrics(d, rnd.p, rnd.z, c, convention)
    true_u = float(np.sum(d * (rnd.y - c))) if rnd.y is not None else float("nan")
    return RoundResult(t=t, policy=policy.name, utility=util_sum / m if m else 0.0, true_utility=true_u,
                       di=abs(b1 - b0) / m if m else 0.0, benefit=(b0, b1), feasible=feasible,
                       assignment=assignment, decisions=d)


def _digest_update(h, rnd: Round):
    h.update(rnd.p.tobytes())
    h.update(rnd.z.tobytes())
    if rnd.y is not None:
        h.update(np.asarray(rnd.y, dtype=np.int64).tobytes())


def play(rounds: Iterable[Round], thetas: np.ndarray, c: float, policies: Sequence[Policy], seed: int,
         make_beliefs, bands_for=None) -> dict[str, RunResult]:
    """Run every policy on the same round sequence and expert pool.

    ``make_beliefs()`` returns a fresh BeliefSet per unknown-threshold policy;
    ``bands_for(round)`` returns the round's bands (None: unconstrained).
    Regret is measured against the known-threshold policy under the same
    constraints, which is run internally when not requested.
    """
    policies = list(policies)
    kinds = [PolicyKind(p.kind) for p in policies]
    if len(set(kinds)) != len(kinds):
        raise ValueError("each policy kind may appear once")
    fairness = next((p.fairness for p in policies if p.fairness is not None), None)
    runners = list(policies)
    if PolicyKind.KNOWN not in kinds:
        runners.append(Policy(PolicyKind.KNOWN, fairness))
    rngs = {p.name: stream(seed, _STREAM[PolicyKind(p.kind)]) for p in runners}
    beliefs = {p.name: make_beliefs() for p in runners
               if PolicyKind(p.kind) in (PolicyKind.UNKNOWN_POSTERIOR, PolicyKind.UNKNOWN_POINT)}
    results = {p.name: RunResult(p.name) for p in runners}
    digests = {p.name: hashlib.sha256(thetas.tobytes()) for p in runners}
    for t, rnd in enumerate(rounds):
        bands = bands_for(rnd) if bands_for else None
        for p in runners:
            _digest_update(digests[p.name], rnd)
            res = run_round(p, rnd, None, beliefs.get(p.name), c, bands=bands if p.fairness else None,
                            rng=rngs[p.name], t=t, true_thresholds=thetas)
            results[p.name].rounds.append(res)
    known = results[PolicyKind.KNOWN.value].utility_round
    for p in runners:
        r = results[p.name]
        r.regret = np.cumsum(known - r.utility_round) if known.size else np.zeros(0)
        r.draw_digest = digests[p.name].hexdigest()
    return {p.name: results[p.name] for p in policies}


def reference_thresholds(config: SyntheticConfig, alpha: float,
                         convention=BenefitConvention.IDENTITY, size: int = 20_000,
                         grid: int = 200) -> FairThresholds:
    """Fair reference thresholds fitted on a large sample from the case generator."""
    rnd = _draw_round(config, stream(config.seed, _REFERENCE), m=size)
    return optimal_fair_thresholds((rnd.p, rnd.z), config.c, alpha, convention, grid)


def make_policies(kinds: Iterable, fairness: Fairness | None = None) -> list[Policy]:
    return [Policy(PolicyKind(k), fairness) for k in kinds]


ALL_POLICIES = [PolicyKind.OPTIMAL, PolicyKind.KNOWN, PolicyKind.UNKNOWN_POSTERIOR, PolicyKind.RANDOM]


def run_simulation(config: SyntheticConfig, policies=None, alpha: float | None = None,
                   convention=BenefitConvention.IDENTITY) -> dict[str, RunResult]:
    """Synthetic experiment: shared case draws and expert pool for every policy."""
    kinds = ALL_POLICIES if policies is None else policies
    fairness = None
    if alpha is not None:
        fairness = Fairness(alpha, reference_thresholds(config, alpha, convention), BenefitConvention(convention))
    pols = [p if isinstance(p, Policy) else Policy(PolicyKind(p), fairness) for p in kinds]
    thetas = expert_thresholds(config, stream(config.seed, _EXPERTS))
    draws = stream(config.seed, _DRAWS)
    rounds = (_draw_round(config, draws) for _ in range(config.T))
    bands_for = None
    if fairness is not None:
        def bands_for(rnd):
            return compute_bands((rnd.p, rnd.z), config.c, fairness.thresholds, fairness.alpha, fairness.convention)
    return play(rounds, thetas, config.c, pols, config.seed,
                lambda: BeliefSet.uniform(range(config.n), config.prior_alpha, config.prior_beta), bands_for)


@dataclass(frozen=True)
class AdversarialInstance:
    """Two experts, one case per round; expert 0's threshold is known exactly.

    Expert 1's prior is shaped so that its point estimate (the posterior mode)
    equals ``theta_tilde``, while its true threshold sits at the far end.
    """

    theta_tilde: float
    variant: str
    c: float
    thresholds: np.ndarray  # (2, 2) true thresholds, both groups equal
    p_range: tuple[float, float]
    prior_alpha: float
    prior_beta: float

    @property
    def expected_point_utility(self) -> float:
        """Per-round expected utility of the point-estimate policy."""
        lo, hi = self.p_range
        t1 = self.thresholds[0, 0]
        # expert 0 always gets the case; it decides 1 on p >= t1
        a = max(lo, t1)
        return ((hi ** 2 - a ** 2) / 2 - self.c * (hi - a)) / (hi - lo)

    @property
    def expected_optimal_utility(self) -> float:
        lo, hi = self.p_range
        t2 = self.thresholds[1, 0]
        if self.variant == "positive":
            return (lo + hi) / 2 - self.c if t2 <= lo else 0.0
        return 0.0

    def beliefs(self) -> BeliefSet:
        bs = BeliefSet.uniform([0, 1])
        bs.alpha[1, :] = self.prior_alpha
        bs.beta[1, :] = self.prior_beta
        bs.pin(0, 0, self.thresholds[0, 0])
        bs.pin(0, 1, self.thresholds[0, 1])
        return bs

    def draw_round(self, rng: np.random.Generator) -> Round:
        lo, hi = self.p_range
        p = np.array([lo + (hi - lo) * rng.random()])
        return Round(p, np.zeros(1, dtype=np.int64), (rng.random(1) < p).astype(np.int64))


def adversarial_instance(theta_tilde: float, variant: str = "positive") -> AdversarialInstance:
    """Instance on which deterministic point estimates suffer linear regret.

    ``positive`` (needs theta_tilde > 0): c = 0, expert 1 truly decides 1 on every
    case, expert 0 has threshold theta_tilde/2, p ~ U(0, theta_tilde). ``zero``
    (theta_tilde = 0 in the original construction): c = 1, expert 1 truly decides 0
    below 1, expert 0 has threshold (1 + theta_tilde)/2, p ~ U(theta_tilde, 1).
    """
    if not 0.0 <= theta_tilde <= 1.0:
        raise ValueError("theta_tilde must lie in [0, 1]")
    # prior shapes putting the mode of expert 1's threshold at theta_tilde
    prior_alpha, prior_beta = 3.0 - 2.0 * theta_tilde, 1.0 + 2.0 * theta_tilde
    if variant == "positive":
        if theta_tilde <= 0.0:
            raise ValueError("the positive variant needs theta_tilde > 0; use variant='zero'")
        c, t2 = 0.0, 0.0
    elif variant == "zero":
        if theta_tilde >= 1.0:
            raise ValueError("the zero variant needs theta_tilde < 1")
        c, t2 = 1.0, 1.0
    else:
        raise ValueError(f"unknown variant {variant!r}")
    t1 = (c + theta_tilde) / 2
    p_range = (c, theta_tilde) if variant == "positive" else (theta_tilde, c)
    thresholds = np.array([[t1, t1], [t2, t2]])
    return AdversarialInstance(theta_tilde, variant, c, thresholds, p_range, prior_alpha, prior_beta)


def run_adversarial(instance: AdversarialInstance, T: int, seed: int = 0,
                    policies=(PolicyKind.KNOWN, PolicyKind.UNKNOWN_POINT, PolicyKind.UNKNOWN_POSTERIOR)
                    ) -> dict[str, RunResult]:
    draws = stream(seed, _DRAWS)
    rounds = (instance.draw_round(draws) for _ in range(T))
    return play(rounds, instance.thresholds, instance.c, make_policies(policies), seed, instance.beliefs)
