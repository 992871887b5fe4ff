import csv

import numpy as np
import pytest

from expertmatch.domain import DecisionCase, Expert
from expertmatch.matching import AssignmentGraph, graph_arrays

COMPAS_HEADER = ["id", "sex", "age", "race", "juv_fel_count", "juv_misd_count", "juv_other_count",
                 "priors_count", "c_charge_degree", "days_b_screening_arrest", "is_recid", "score_text",
                 "two_year_recid"]


def random_graph(rng, n, m, c=0.5):
    """Graph whose probabilities and thresholds follow the synthetic generator."""
    z = (rng.random(m) < 0.5).astype(np.int64)
    p = np.where(z == 0, rng.beta(3, 5, m), rng.beta(4, 3, m))
    thetas = np.column_stack([rng.beta(0.5, 0.5, n), rng.beta(5, 5, n)])
    w, bits = graph_arrays(p, z, thetas, c)
    cases = [DecisionCase(i, int(z[i]), float(p[i])) for i in range(m)]
    experts = [Expert(j, {0: float(a), 1: float(b)}) for j, (a, b) in enumerate(thetas)]
    return AssignmentGraph(w, bits, experts, cases)


def write_compas_csv(path, n=1200, seed=0, race_effect=1.0):
    """ProPublica-schema file with a logistic outcome that depends on race."""
    rng = np.random.default_rng(seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPAS_HEADER)
        for i in range(n):
            race = rng.choice(["African-American", "Caucasian", "Hispanic"], p=[0.5, 0.42, 0.08])
            age = int(rng.integers(18, 70))
            priors = int(rng.poisson(4 if race == "African-American" else 2))
            eta = -0.6 + 0.3 * priors - 0.05 * (age - 35) + (race_effect if race == "African-American" else 0.0)
            recid = int(rng.random() < 1 / (1 + np.exp(-eta)))
            w.writerow([i, rng.choice(["Male", "Female"], p=[0.8, 0.2]), age, race, int(rng.poisson(0.1)),
                        int(rng.poisson(0.2)), 0, priors, rng.choice(["F", "M"], p=[0.65, 0.35]),
                        int(rng.integers(-3, 3)), recid, "Low", recid])
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def compas_csv(tmp_path):
    return write_compas_csv(tmp_path / "compas.csv")
