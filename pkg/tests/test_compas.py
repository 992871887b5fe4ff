import numpy as np
import pytest

from conftest import COMPAS_HEADER, write_compas_csv
from expertmatch.compas import (
    JudgePoolConfig,
    OffenderRecord,
    as_rounds,
    batch_rounds,
    feasibility_sweep,
    fit_logistic,
    generate_judges,
    judge_thresholds,
    load_compas,
    prepare,
    run_compas,
    split,
    train_logistic,
)


def _record(race="Caucasian", recid=0, age=30, row=-1):
    return OffenderRecord("Male", age, race, 1, "F", recid, row=row)


def _records(n0, n1, rng):
    return [_record("Caucasian" if k < n0 else "African-American", int(rng.random() < 0.4),
                    int(rng.integers(18, 60)), row=k) for k in range(n0 + n1)]


class TestLoad:
    def test_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text(",".join(COMPAS_HEADER) + "\n")
        assert len(load_compas(path)) == 0

    def test_other_race_dropped(self, compas_csv):
        recs = load_compas(compas_csv)
        assert recs.dropped["other_race"] > 0
        assert {r.z for r in recs} == {0, 1}
        y = np.array([r.two_year_recid for r in recs])
        assert 0 < y.mean() < 1

    def test_missing_columns_named(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("race,sex,age\nCaucasian,Male,30\n")
        with pytest.raises(ValueError, match="priors_count"):
            load_compas(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_compas(tmp_path / "nope.csv")

    def test_screening_filters(self, tmp_path):
        path = tmp_path / "f.csv"
        rows = [",".join(COMPAS_HEADER),
                "1,Male,30,Caucasian,0,0,0,2,F,0,1,Low,1",
                "2,Male,30,Caucasian,0,0,0,2,F,45,1,Low,1",   # screening gap
                "3,Male,30,Caucasian,0,0,0,2,O,0,1,Low,1",    # ordinary traffic offence
                "4,Male,30,Caucasian,0,0,0,2,F,0,-1,Low,1",   # no recidivism record
                "5,Male,,Caucasian,0,0,0,2,F,0,1,Low,1"]      # missing age
        path.write_text("\n".join(rows) + "\n")
        recs = load_compas(path)
        assert len(recs) == 1
        assert sum(recs.dropped.values()) == 4


class TestSplit:
    def test_sizes(self, rng):
        train, held = split(_records(50, 50, rng), 0.25, rng)
        assert (len(train), len(held)) == (25, 75)

    def test_deterministic_and_disjoint(self, rng):
        recs = _records(60, 83, rng)
        a = split(recs, 0.25, np.random.default_rng(1))
        b = split(recs, 0.25, np.random.default_rng(1))
        assert a == b
        ids = {r.row for r in a[0]} | {r.row for r in a[1]}
        assert ids == {r.row for r in recs}
        assert not {r.row for r in a[0]} & {r.row for r in a[1]}

    def test_stratified(self, rng):
        recs = _records(137, 211, rng)
        train, _ = split(recs, 0.25, rng)
        for z, nz in ((0, 137), (1, 211)):
            assert abs(sum(r.z == z for r in train) - 0.25 * nz) <= 2

    def test_group_absent(self, rng):
        with pytest.raises(ValueError):
            split(_records(10, 0, rng), 0.25, rng)


class TestLogistic:
    def test_separable_monotone(self):
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        model = fit_logistic(x, [0, 0, 1, 1])
        pred = model.predict_array(np.linspace(-1, 4, 20)[:, None])
        assert np.all(np.diff(pred) > 0)
        assert np.all((pred > 0) & (pred < 1))

    def test_constant_features_base_rate(self):
        model = fit_logistic(np.ones((40, 2)), [1] * 10 + [0] * 30)
        assert model.predict_array(np.ones((3, 2))) == pytest.approx(0.25, abs=1e-3)

    def test_two_point_symmetry(self):
        model = fit_logistic([[0.0], [1.0]], [0, 1])
        assert model.predict_array([[0.5]])[0] == pytest.approx(0.5, abs=1e-12)

    def test_loss_non_increasing(self, rng):
        X = rng.normal(size=(200, 3))
        y = (X[:, 0] + rng.normal(size=200) > 0).astype(int)
        hist = np.array(fit_logistic(X, y).loss_history)
        assert np.all(np.diff(hist) <= 1e-12)

    def test_single_label(self):
        with pytest.raises(ValueError):
            fit_logistic([[0.0], [1.0]], [1, 1])

    def test_standardisation_from_train_only(self, compas_csv):
        recs = load_compas(compas_csv)
        train, held, models, _ = prepare(recs, seed=3)
        for z, model in models.items():
            X = np.array([r.features() for r in train if r.z == z])
            np.testing.assert_allclose(model.mean, X.mean(axis=0))

    def test_too_few_rows(self, rng):
        with pytest.raises(ValueError):
            train_logistic(_records(5, 5, rng), 0)


class TestJudges:
    def test_unbiased(self, rng):
        judges = generate_judges(JudgePoolConfig(2.0, 0.0), rng)
        assert all(j.theta[0] == j.theta[1] for j in judges)

    def test_half_biased(self, rng):
        thetas, biased = judge_thresholds(JudgePoolConfig(2.0, 0.5, n=60), rng)
        assert biased.sum() == 30
        np.testing.assert_allclose(thetas[biased, 1], np.minimum(1.0, 1.2 * thetas[biased, 0]))
        np.testing.assert_array_equal(thetas[~biased, 1], thetas[~biased, 0])

    def test_tau_controls_spread(self, rng):
        tau = 20.0
        thetas, _ = judge_thresholds(JudgePoolConfig(tau, n=100_000), rng)
        sd = np.sqrt(1 / (4 * (2 * tau + 1)))
        # standard error of the sample std is about sd / sqrt(2N)
        assert abs(thetas[:, 0].std() - sd) <= 3 * sd / np.sqrt(2e5) + 1e-4

    def test_validation(self):
        with pytest.raises(ValueError):
            JudgePoolConfig(0.0)
        with pytest.raises(ValueError):
            JudgePoolConfig(1.0, 1.5)


class TestRounds:
    def test_partition(self, compas_csv):
        recs = load_compas(compas_csv)
        _, held, models, rounds = prepare(recs, m=20, seed=0)
        assert len(rounds) == len(held) // 20
        ids = [c.id for r in rounds for c in r]
        assert len(ids) == len(set(ids))
        assert all(len(r) == 20 for r in rounds)

    def test_deterministic(self, compas_csv):
        recs = load_compas(compas_csv)
        a = prepare(recs, seed=5)[3]
        b = prepare(recs, seed=5)[3]
        assert [[c.id for c in r] for r in a] == [[c.id for c in r] for r in b]

    def test_too_few_records(self, compas_csv):
        recs = load_compas(compas_csv)
        _, held, models, _ = prepare(recs)
        assert batch_rounds(held[:10], models, m=20, rng=0) == []

    def test_3940_records_give_197_rounds(self, tmp_path):
        recs = load_compas(write_compas_csv(tmp_path / "big.csv", n=5800, seed=4))
        train, held = split(recs, 0.25, np.random.default_rng(0))
        models = {z: train_logistic(train, z) for z in (0, 1)}
        rounds = batch_rounds(held[:3940], models, m=20, rng=0)
        assert len(rounds) == 197


class TestExperiment:
    def test_run(self, compas_csv):
        run = run_compas(load_compas(compas_csv), JudgePoolConfig(5.0, 0.5), ["known", "random"], seed=1)
        assert run.n_biased == 30
        assert len(run.results["known"].rounds) == run.n_rounds > 0

    def test_sweep_shape_and_vacuous_alpha(self, compas_csv):
        _, _, _, rounds = prepare(load_compas(compas_csv))
        rows = feasibility_sweep(as_rounds(rounds)[:8], [1.0, 50.0], [0.0, 0.5], [0.0, 1.0], replicates=2)
        assert len(rows) == 2 * 2 * 2 * 2
        assert all(r.infeasibility_prob == 0.0 for r in rows if r.alpha == 1.0)
        assert all(0.0 <= r.infeasibility_prob <= 1.0 and r.stderr >= 0 for r in rows)
