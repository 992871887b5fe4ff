import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from expertmatch.belief import BeliefSet
from expertmatch.domain import DecisionCase, Expert, round_metrics
from expertmatch.simulate import (
    Policy,
    PolicyKind,
    Round,
    SyntheticConfig,
    adversarial_instance,
    expert_thresholds,
    generate_experts,
    generate_round,
    run_adversarial,
    run_round,
    run_simulation,
    stream,
)
from expertmatch.simulate import _draw_round


class TestGenerator:
    def test_defaults(self):
        cfg = SyntheticConfig()
        assert (cfg.m, cfg.n, cfg.T, cfg.c) == (20, 60, 1000, 0.5)

    def test_validation(self):
        with pytest.raises(ValueError):
            SyntheticConfig(m=5, n=3)
        with pytest.raises(ValueError):
            SyntheticConfig(c=1.0)

    def test_empty_round(self, rng):
        assert generate_round(SyntheticConfig(m=0, n=0, T=0), rng) == []

    def test_case_moments(self, rng):
        cfg = SyntheticConfig(m=100_000)
        cases = generate_round(cfg, rng)
        z = np.array([c.z for c in cases])
        p = np.array([c.p for c in cases])
        n1 = z.sum()
        assert abs(n1 / z.size - 0.5) <= 3 * np.sqrt(0.25 / z.size)
        p0 = p[z == 0]
        se = np.sqrt(3 * 5 / (8 ** 2 * 9) / p0.size)
        assert abs(p0.mean() - 3 / 8) <= 3 * se
        assert all(c.y_true in (0, 1) for c in cases[:100])

    def test_expert_moments(self, rng):
        th = expert_thresholds(SyntheticConfig(m=1, n=100_000), rng)
        assert th[:, 1].mean() == pytest.approx(0.5, abs=3 * 0.151 / np.sqrt(1e5))
        assert th[:, 1].std() == pytest.approx(np.sqrt(25 / 1100), abs=0.002)
        t0 = th[:, 0]
        assert np.mean((t0 >= 0.4) & (t0 <= 0.6)) < np.mean(t0 <= 0.2)

    def test_pool_size(self, rng):
        assert len(generate_experts(SyntheticConfig(m=20), rng)) == 60


def _experts(thetas):
    return [Expert(j, {0: float(a), 1: float(b)}) for j, (a, b) in enumerate(thetas)]


class TestRunRound:
    def test_single_expert(self):
        cases = [DecisionCase(0, 0, 0.8)]
        res = run_round(Policy(PolicyKind.KNOWN), cases, _experts([(0.5, 0.5)]), None, 0.5)
        assert res.assignment == (0,)
        assert res.utility == pytest.approx(0.3)

    def test_random_frequencies(self):
        rng = np.random.default_rng(3)
        n, m, T = 6, 2, 10_000
        experts = _experts([(0.5, 0.5)] * n)
        rnd = Round(np.full(m, 0.5), np.zeros(m, dtype=np.int64))
        counts = np.zeros(n)
        for _ in range(T):
            res = run_round(Policy(PolicyKind.RANDOM), rnd, experts, None, 0.5, rng=rng)
            counts[list(res.assignment)] += 1
        freq = counts / T
        se = np.sqrt((m / n) * (1 - m / n) / T)
        assert np.all(np.abs(freq - m / n) <= 3 * se + 1e-12)

    def test_collapsed_beliefs_match_known(self, rng):
        cfg = SyntheticConfig(m=8, n=20)
        thetas = expert_thresholds(cfg, rng)
        bs = BeliefSet.uniform(range(20))
        bs.lo[:] = thetas - 1e-12
        bs.hi[:] = thetas
        experts = _experts(thetas)
        for _ in range(10):
            cases = generate_round(cfg, rng)
            known = run_round(Policy(PolicyKind.KNOWN), cases, experts, None, 0.5)
            post = run_round(Policy(PolicyKind.UNKNOWN_POSTERIOR), cases, experts, bs, 0.5, rng=rng)
            assert post.assignment == known.assignment

    def test_needs_beliefs(self, rng):
        with pytest.raises(ValueError):
            run_round(Policy(PolicyKind.UNKNOWN_POINT), generate_round(SyntheticConfig(m=2, n=4), rng),
                      _experts([(0.5, 0.5)] * 4), None, 0.5)

    def test_metrics_recomputable(self):
        cfg = SyntheticConfig(m=6, T=30, seed=4)
        res = run_simulation(cfg)
        # regenerate the shared draws from the documented streams
        thetas = expert_thresholds(cfg, stream(cfg.seed, 1))
        draws = stream(cfg.seed, 0)
        rounds = [_draw_round(cfg, draws) for _ in range(cfg.T)]
        for name, run in res.items():
            for rnd, r in zip(rounds, run.rounds):
                if r.assignment is None:
                    d = (rnd.p >= 0.5).astype(np.int64)
                else:
                    idx = np.asarray(r.assignment)
                    d = (rnd.p >= thetas[idx, rnd.z]).astype(np.int64)
                util, b0, b1 = round_metrics(d, rnd.p, rnd.z, cfg.c)
                assert_array_equal(d, r.decisions)
                assert r.utility == pytest.approx(util / cfg.m)
                assert r.benefit == (b0, b1)
                assert r.true_utility == pytest.approx(np.sum(d * (rnd.y - cfg.c)))


class TestRunSimulation:
    def test_empty(self):
        res = run_simulation(SyntheticConfig(T=0))
        assert all(len(r.rounds) == 0 and r.regret.size == 0 for r in res.values())

    def test_paired_draws_and_prefix_sums(self):
        res = run_simulation(SyntheticConfig(T=40, m=5, seed=2))
        digests = {r.draw_digest for r in res.values()}
        assert len(digests) == 1
        for r in res.values():
            u = r.utility_round
            assert_allclose(r.utility_cum, np.cumsum(u) / np.arange(1, u.size + 1))
            assert_allclose(r.regret, np.cumsum(res["known"].utility_round - u))

    def test_deterministic(self):
        a = run_simulation(SyntheticConfig(T=20, m=4, seed=9))
        b = run_simulation(SyntheticConfig(T=20, m=4, seed=9))
        for k in a:
            assert_array_equal(a[k].utility_round, b[k].utility_round)

    def test_policy_order_does_not_shift_streams(self):
        a = run_simulation(SyntheticConfig(T=15, m=4, seed=1), ["random", "unknown"])
        b = run_simulation(SyntheticConfig(T=15, m=4, seed=1), ["unknown", "known", "random"])
        assert_array_equal(a["random"].utility_round, b["random"].utility_round)
        assert_array_equal(a["unknown"].utility_round, b["unknown"].utility_round)

    def test_optimal_dominates_per_round(self):
        res = run_simulation(SyntheticConfig(T=50, m=10, seed=5))
        opt = res["optimal"].utility_round
        for k in ("known", "unknown", "random"):
            assert np.all(opt >= res[k].utility_round - 1e-12)

    def test_posterior_regret_nonnegative_nondecreasing(self):
        r = run_simulation(SyntheticConfig(T=100, m=10, seed=6), ["known", "unknown"])["unknown"].regret
        assert np.all(r >= -1e-12)
        assert np.all(np.diff(r) >= -1e-12)

    def test_metrics_match_domain(self):
        cfg = SyntheticConfig(T=10, m=8, seed=8)
        res = run_simulation(cfg, ["known"])
        for r in res["known"].rounds:
            assert r.di == pytest.approx(abs(r.benefit[1] - r.benefit[0]) / cfg.m)

    def test_constrained_run(self):
        res = run_simulation(SyntheticConfig(T=20, m=10, seed=3), ["known", "random"], alpha=0.1)
        assert res["known"].feasible.dtype == bool
        assert len(res["known"].rounds) == 20


class TestAdversarial:
    def test_positive_instance(self):
        inst = adversarial_instance(0.5, "positive")
        assert inst.c == 0.0
        assert_allclose(inst.thresholds, [[0.25, 0.25], [0.0, 0.0]])
        assert inst.expected_point_utility == pytest.approx(3 * 0.5 / 8)
        assert inst.expected_optimal_utility == pytest.approx(0.5 / 2)
        # the prior mode of the unknown expert sits at theta_tilde
        assert inst.beliefs().map_estimate()[1, 0] == pytest.approx(0.5)

    def test_positive_rejects_zero(self):
        with pytest.raises(ValueError):
            adversarial_instance(0.0, "positive")

    def test_known_picks_second_whenever_it_matters(self):
        inst = adversarial_instance(0.5)
        res = run_adversarial(inst, 200, seed=1, policies=["known"])
        t1 = inst.thresholds[0, 0]
        for r in res["known"].rounds:
            # below t1 only the second expert decides 1; above it both do and the tie goes to the first
            p = r.utility  # c = 0 and the decision is always 1, so utility equals p
            assert r.decisions.tolist() == [1]
            assert r.assignment == ((1,) if p < t1 else (0,))

    def test_zero_variant_optimum(self):
        inst = adversarial_instance(0.0, "zero")
        res = run_adversarial(inst, 300, seed=2, policies=["known", "unknown_point"])
        assert res["known"].total_utility == 0.0
        assert inst.expected_optimal_utility == 0.0
        # point estimate keeps using expert 0, who decides 1 on p >= 1/2 at cost 1
        assert res["unknown_point"].total_utility == pytest.approx(-1 / 8, abs=0.03)

    def test_point_estimate_linear_regret(self):
        res = run_adversarial(adversarial_instance(0.5), 2000, seed=0)
        assert res["unknown_point"].regret[-1] == pytest.approx(125, rel=0.2)
