"""COMPAS ingestion, per-group logistic models, fictitious judges and the feasibility sweep.

Decisions are release decisions (d = 1 releases) and the modelled outcome is
*no* two-year recidivism, so ``p`` is the probability that releasing pays off
and ``y = 1 - two_year_recid``.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .belief import BeliefSet
from .domain import BenefitConvention, DecisionCase, Expert, optimal_fair_thresholds
from .fairmatch import check_feasibility, compute_bands
from .matching import max_weight_matching
from .simulate import Fairness, Policy, PolicyKind, Round, play, round_graph

log = logging.getLogger(__name__)

RACE_TO_Z = {"Caucasian": 0, "African-American": 1}
REQUIRED_COLUMNS = ("race", "sex", "age", "priors_count", "c_charge_degree", "two_year_recid")
JUVENILE_COLUMNS = ("juv_fel_count", "juv_misd_count", "juv_other_count")


@dataclass(frozen=True)
class OffenderRecord:
    sex: str
    age: float
    race: str
    priors_count: float
    c_charge_degree: str
    two_year_recid: int
    juvenile: tuple[float, ...] = ()
    row: int = -1

    def __post_init__(self):
        if self.race not in RACE_TO_Z:
            raise ValueError(f"race {self.race!r} is not modelled")
        if self.two_year_recid not in (0, 1):
            raise ValueError("two_year_recid must be 0 or 1")

    @property
    def z(self) -> int:
        return RACE_TO_Z[self.race]

    @property
    def y(self) -> int:
        """1 when the offender did not recidivate (release was the right call)."""
        return 1 - self.two_year_recid

    def features(self) -> list[float]:
        return [self.age, 1.0 if self.sex == "Male" else 0.0, self.priors_count,
                1.0 if self.c_charge_degree == "F" else 0.0, *self.juvenile]


class Records(list):
    """List of records that also carries the drop counts from loading."""

    def __init__(self, items=(), dropped: Counter | None = None):
        super().__init__(items)
        self.dropped = Counter() if dropped is None else dropped


def _screening_filters(row: dict) -> str | None:
    """ProPublica's standard cleaning; each filter applies only when its column exists."""
    days = row.get("days_b_screening_arrest")
    if days is not None:
        try:
            if abs(float(days)) > 30:
                return "screening_gap"
        except ValueError:
            return "screening_gap"
    if row.get("is_recid") is not None and row["is_recid"].strip() == "-1":
        return "is_recid_missing"
    if row.get("c_charge_degree") is not None and row["c_charge_degree"].strip() == "O":
        return "ordinary_traffic"
    if row.get("score_text") is not None and row["score_text"].strip() == "N/A":
        return "score_missing"
    return None


def load_compas(path) -> Records:
    """Parse a ProPublica-schema CSV, keeping the two modelled races."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"COMPAS file not found: {path}")
    dropped: Counter = Counter()
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"missing required columns: {', '.join(missing)}")
        juv = [c for c in JUVENILE_COLUMNS if c in header]
        for k, row in enumerate(reader):
            reason = _screening_filters(row)
            if reason is None and row["race"] not in RACE_TO_Z:
                reason = "other_race"
            if reason is None:
                try:
                    rec = OffenderRecord(
                        sex=row["sex"].strip(), age=float(row["age"]), race=row["race"],
                        priors_count=float(row["priors_count"]), c_charge_degree=row["c_charge_degree"].strip(),
                        two_year_recid=int(row["two_year_recid"]),
                        juvenile=tuple(float(row[c]) for c in juv), row=k)
                    if not rec.sex or not rec.c_charge_degree:
                        raise ValueError
                    out.append(rec)
                    continue
                except (ValueError, TypeError):
                    reason = "missing_field"
            dropped[reason] += 1
    if dropped:
        log.info("dropped rows: %s", dict(sorted(dropped.items())))
    return Records(out, dropped)


def split(records: Sequence[OffenderRecord], train_fraction: float = 0.25, rng=None):
    """Stratified random split; the overall train size is ``round(fraction * N)``.

    Per-group train counts use largest-remainder allocation, so each group's
    count is within one record of its exact share.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(rng)
    groups = {z: [i for i, r in enumerate(records) if r.z == z] for z in (0, 1)}
    for z, idx in groups.items():
        if not idx:
            raise ValueError(f"group z={z} is absent from the records")
    shares = {z: train_fraction * len(idx) for z, idx in groups.items()}
    counts = {z: math.floor(s) for z, s in shares.items()}
    target = int(round(train_fraction * len(records)))
    for z in sorted(shares, key=lambda z: (counts[z] - shares[z], z)):
        if sum(counts.values()) >= target:
            break
        counts[z] += 1
    train_idx = []
    for z in (0, 1):
        perm = rng.permutation(groups[z])
        train_idx.extend(int(i) for i in perm[:counts[z]])
    chosen = np.zeros(len(records), dtype=bool)
    chosen[train_idx] = True
    train = [r for r, c in zip(records, chosen) if c]
    held = [r for r, c in zip(records, chosen) if not c]
    return train, held


@dataclass
class LogisticModel:
    weights: np.ndarray
    intercept: float
    z: int | None
    mean: np.ndarray
    scale: np.ndarray
    loss_history: list = field(default_factory=list)

    def predict_array(self, X) -> np.ndarray:
        X = (np.atleast_2d(np.asarray(X, dtype=float)) - self.mean) / self.scale
        eta = X @ self.weights + self.intercept
        # clip keeps outputs strictly inside (0, 1) in floating point
        return np.clip(1.0 / (1.0 + np.exp(-eta)), 1e-12, 1.0 - 1e-12)

    def predict(self, records: Sequence[OffenderRecord]) -> np.ndarray:
        return self.predict_array([r.features() for r in records])


def fit_logistic(X, y, l2: float = 1e-4, tol: float = 1e-8, max_epochs: int = 10_000,
                 z: int | None = None) -> LogisticModel:
    """Full-batch gradient descent on mean log-loss plus ``l2/2 * |w|^2`` (intercept unpenalised).

    The step is ``1/L`` with ``L`` the gradient's Lipschitz constant, so the
    loss never increases.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.size or y.size == 0:
        raise ValueError("X and y must have the same non-zero length")
    if np.unique(y).size < 2:
        raise ValueError("training labels are all identical")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = np.column_stack([(X - mean) / scale, np.ones(X.shape[0])])
    N = Xs.shape[0]
    L = 0.25 * np.linalg.eigvalsh(Xs.T @ Xs / N).max() + l2
    step = 1.0 / L
    w = np.zeros(Xs.shape[1])
    pen = np.ones_like(w)
    pen[-1] = 0.0

    def loss(w):
        eta = Xs @ w
        return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + 0.5 * l2 * np.sum(pen * w * w))

    history = [loss(w)]
    for _ in range(max_epochs):
        prob = 1.0 / (1.0 + np.exp(-(Xs @ w)))
        grad = Xs.T @ (prob - y) / N + l2 * pen * w
        w = w - step * grad
        history.append(loss(w))
        if abs(history[-2] - history[-1]) < tol:
            break
    return LogisticModel(w[:-1], float(w[-1]), z, mean, scale, history)


def train_logistic(train: Sequence[OffenderRecord], z: int, **kwargs) -> LogisticModel:
    rows = [r for r in train if r.z == z]
    if len(rows) < 20:
        raise ValueError(f"group z={z} has {len(rows)} training rows; need at least 20")
    return fit_logistic([r.features() for r in rows], [r.y for r in rows], z=z, **kwargs)


@dataclass
class JudgePoolConfig:
    tau: float
    biased_fraction: float = 0.0
    bias_factor: float = 1.2
    n: int = 60

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 <= self.biased_fraction <= 1.0:
            raise ValueError("biased_fraction must lie in [0, 1]")
        if self.bias_factor < 0:
            raise ValueError("bias_factor must be non-negative")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def n_biased(self) -> int:
        return int(round(self.biased_fraction * self.n))


def judge_thresholds(config: JudgePoolConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """``(n, 2)`` thresholds and the boolean biased mask."""
    theta = rng.beta(config.tau, config.tau, config.n)
    biased = np.zeros(config.n, dtype=bool)
    biased[rng.choice(config.n, size=config.n_biased, replace=False)] = True
    t1 = np.where(biased, np.minimum(1.0, config.bias_factor * theta), theta)
    return np.column_stack([theta, t1]), biased


def generate_judges(config: JudgePoolConfig, rng) -> list[Expert]:
    thetas, _ = judge_thresholds(config, rng)
    return [Expert(j, {0: float(a), 1: float(b)}) for j, (a, b) in enumerate(thetas)]


def batch_rounds(eval_records: Sequence[OffenderRecord], models: dict, m: int = 20, rng=None) -> list[list[DecisionCase]]:
    """Shuffle, score with the group's model and cut into full rounds of ``m`` cases."""
    if set(models) != {0, 1}:
        raise ValueError("need a model for each group")
    rng = np.random.default_rng(rng)
    order = rng.permutation(len(eval_records))
    n_rounds = len(eval_records) // m
    if n_rounds == 0:
        log.warning("only %d evaluation records; no full round of %d", len(eval_records), m)
        return []
    leftover = len(eval_records) - n_rounds * m
    if leftover:
        log.info("dropping %d records in the final partial round", leftover)
    recs = [eval_records[i] for i in order[:n_rounds * m]]
    p = np.empty(len(recs))
    for z in (0, 1):
        idx = [k for k, r in enumerate(recs) if r.z == z]
        if idx:
            p[idx] = models[z].predict([recs[k] for k in idx])
    cases = [DecisionCase(r.row if r.row >= 0 else k, r.z, float(p[k]), r.y) for k, r in enumerate(recs)]
    return [cases[t * m:(t + 1) * m] for t in range(n_rounds)]


def as_rounds(rounds: Sequence[Sequence[DecisionCase]]) -> list[Round]:
    return [Round.from_cases(r) for r in rounds]


@dataclass(frozen=True)
class SweepRow:
    tau: float
    biased_fraction: float
    alpha: float
    regime: str
    infeasibility_prob: float
    stderr: float


def _cell_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(100, *key)))


def feasibility_sweep(rounds: Sequence[Round], taus: Sequence[float], biased_fractions: Sequence[float],
                      alphas: Sequence[float], c: float = 0.5, replicates: int = 3, seed: int = 0,
                      n: int | None = None, convention=BenefitConvention.IDENTITY,
                      regimes=("known", "unknown")) -> list[SweepRow]:
    """Fraction of rounds with no band-respecting assignment, per pool and alpha.

    ``known`` judges each round on the true thresholds; ``unknown`` on one
    posterior draw per round, with beliefs learned from the rounds played so
    far under unconstrained posterior-sampling assignment. The standard error
    is taken across replicate pools (binomial when ``replicates == 1``).
    """
    rounds = [r if isinstance(r, Round) else Round.from_cases(r) for r in rounds]
    if not rounds:
        raise ValueError("no rounds to sweep")
    m = rounds[0].p.size
    n = 3 * m if n is None else n
    p_all = np.concatenate([r.p for r in rounds])
    z_all = np.concatenate([r.z for r in rounds])
    refs = {a: optimal_fair_thresholds((p_all, z_all), c, a, convention) for a in alphas}
    bands = {a: [compute_bands((r.p, r.z), c, refs[a], a, convention) for r in rounds] for a in alphas}
    rows = []
    for it, tau in enumerate(taus):
        for ib, bf in enumerate(biased_fractions):
            pool = JudgePoolConfig(tau, bf, n=n)
            fails = {(a, reg): [] for a in alphas for reg in regimes}
            for rep in range(replicates):
                rng = _cell_rng(seed, it, ib, rep)
                thetas, _ = judge_thresholds(pool, rng)
                beliefs = BeliefSet.uniform(range(n))
                for t, rnd in enumerate(rounds):
                    views = {"known": thetas}
                    if "unknown" in regimes:
                        views["unknown"] = beliefs.sample(rng)
                    for reg in regimes:
                        g = round_graph(rnd, views[reg], c)
                        for a in alphas:
                            fails[(a, reg)].append((rep, not check_feasibility(g, bands[a][t])))
                    if "unknown" in regimes:
                        assign = max_weight_matching(round_graph(rnd, views["unknown"], c)).assign
                        idx = np.asarray(assign, dtype=np.int64)
                        d = (rnd.p >= thetas[idx, rnd.z]).astype(np.int64)
                        beliefs.observe(t, idx, rnd.p, rnd.z, d)
            for a in alphas:
                for reg in regimes:
                    flags = np.array([f for _, f in fails[(a, reg)]], dtype=float)
                    per_rep = flags.reshape(replicates, len(rounds)).mean(axis=1)
                    prob = float(flags.mean())
                    if replicates > 1:
                        se = float(per_rep.std(ddof=1) / math.sqrt(replicates))
                    else:
                        se = math.sqrt(prob * (1 - prob) / flags.size)
                    rows.append(SweepRow(float(tau), float(bf), float(a), reg, prob, se))
    return rows


@dataclass
class CompasRun:
    results: dict
    n_records: int
    n_train: int
    n_eval: int
    n_rounds: int
    dropped: dict
    n_biased: int
    n_judges: int
    fair_thresholds: object = None


_SPLIT, _BATCH, _JUDGES = 200, 201, 202


def prepare(records: Sequence[OffenderRecord], m: int = 20, seed: int = 0):
    """Split, fit one model per group and batch the held-out part into rounds."""
    train, held = split(records, 0.25, _cell_rng(seed, _SPLIT))
    models = {z: train_logistic(train, z) for z in (0, 1)}
    rounds = batch_rounds(held, models, m, _cell_rng(seed, _BATCH))
    return train, held, models, rounds


def run_compas(records: Sequence[OffenderRecord], pool: JudgePoolConfig, policies, m: int = 20, c: float = 0.5,
               seed: int = 0, alpha: float | None = None,
               convention=BenefitConvention.IDENTITY) -> CompasRun:
    train, held, models, rounds = prepare(records, m, seed)
    rounds = as_rounds(rounds)
    thetas, biased = judge_thresholds(pool, _cell_rng(seed, _JUDGES))
    fairness = bands_for = None
    if alpha is not None and rounds:
        p_all = np.concatenate([r.p for r in rounds])
        z_all = np.concatenate([r.z for r in rounds])
        fairness = Fairness(alpha, optimal_fair_thresholds((p_all, z_all), c, alpha, convention),
                            BenefitConvention(convention))

        def bands_for(rnd):
            return compute_bands((rnd.p, rnd.z), c, fairness.thresholds, alpha, fairness.convention)
    pols = [Policy(PolicyKind(k), fairness) for k in policies]
    results = play(rounds, thetas, c, pols, seed, lambda: BeliefSet.uniform(range(pool.n)), bands_for)
    return CompasRun(results, len(records), len(train), len(held), len(rounds),
                     dict(getattr(records, "dropped", {})), int(biased.sum()), pool.n,
                     fairness.thresholds if fairness else None)
