import numpy as np
import pytest
from scipy import stats

import moelab as ml

from conftest import random_measure


class TestTopkSelect:
    def test_strict_maximum(self):
        assert ml.topk_select([1.0, 0.0], 1).tolist() == [0]

    def test_tie_break_by_index(self):
        assert ml.topk_select([0.0, 0.0, 0.0], 2).tolist() == [0, 1]

    def test_benchmark_gating_logits(self, bench_truth):
        # logits at x=0.5 are (12.5, 0); the steep component wins top-1
        logits = bench_truth.beta1 @ np.array([0.5])
        assert logits[0] == pytest.approx(12.5)
        assert ml.topk_select(logits, 1).tolist() == [0]

    def test_k_out_of_range(self):
        with pytest.raises(ml.InvalidArgumentError):
            ml.topk_select([1.0, 2.0], 0)
        with pytest.raises(ml.InvalidArgumentError):
            ml.topk_select([1.0, 2.0], 3)

    def test_nonfinite_logits_rejected(self):
        with pytest.raises(ml.InvalidArgumentError):
            ml.topk_select([np.inf, 0.0], 1)


class TestGateWeights:
    def test_symmetric_zero_gates(self):
        G = ml.MixingMeasure.from_arrays([0, 0], [[0], [0]], [[1], [2]], [0, 0], [1, 1])
        out = ml.gate_weights(G, [0.37], 2)
        np.testing.assert_allclose(out.weights, [0.5, 0.5])

    def test_top1_weight_is_one(self, bench_truth):
        # softmax over a singleton ignores beta0 entirely
        out = ml.gate_weights(bench_truth, [0.9], 1)
        assert out.selected == (0,)
        assert out.weights[0] == 1.0
        assert out.weights[1] == 0.0

    def test_benchmark_two_term_softmax(self, bench_truth):
        # logits + biases at x=0.5: (25*0.5 - 8, 0) = (4.5, 0)
        out = ml.gate_weights(bench_truth, [0.5], 2)
        expect = np.exp([4.5, 0.0])
        expect /= expect.sum()
        np.testing.assert_allclose(out.weights, expect, rtol=1e-12)
        assert out.weights[0] == pytest.approx(0.98901306, abs=1e-7)

    def test_dimension_mismatch(self, bench_truth):
        with pytest.raises(ml.InvalidArgumentError):
            ml.gate_weights(bench_truth, [0.5, 0.5], 1)

    @pytest.mark.parametrize("seed", range(8))
    def test_normalization_and_sparsity(self, seed):
        rng = np.random.default_rng(seed)
        k, d = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        G = random_measure(rng, k, d)
        K = int(rng.integers(1, k + 1))
        out = ml.gate_weights(G, rng.normal(size=d), K)
        assert abs(out.weights.sum() - 1.0) <= 1e-12
        assert np.count_nonzero(out.weights) == K
        assert np.all(out.weights >= 0.0) and np.all(out.weights <= 1.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(100 + seed)
        k, d = 4, 2
        G = random_measure(rng, k, d)
        x = rng.normal(size=d)
        if np.unique(G.beta1 @ x).size < k:
            pytest.skip("tied logits")
        perm = rng.permutation(k)
        Gp = ml.MixingMeasure(tuple(G.components[i] for i in perm), family=G.family)
        w = ml.gate_weights(G, x, 2).weights
        wp = ml.gate_weights(Gp, x, 2).weights
        np.testing.assert_allclose(wp, w[perm], rtol=1e-12)

    @pytest.mark.parametrize("c", [-3.0, 0.5, 7.0])
    def test_shift_invariance(self, c):
        # shifting every logit by c (here via beta1 at x=1) changes nothing
        rng = np.random.default_rng(17)
        G = random_measure(rng, 3, 1)
        x = np.array([1.0])
        G2 = ml.MixingMeasure.from_arrays(G.beta0, G.beta1 + c, G.a, G.b, G.sigma)
        w1 = ml.gate_weights(G, x, 2)
        w2 = ml.gate_weights(G2, x, 2)
        assert w1.selected == w2.selected
        np.testing.assert_allclose(w2.weights, w1.weights, atol=1e-12)


class TestExpertDensity:
    def test_standard_normal_at_mode(self):
        p = ml.ExpertParams(a=[0.0], b=0.0, sigma=1.0)
        assert ml.expert_density(ml.GAUSSIAN, p, [0.0], 0.0) == pytest.approx(
            1.0 / np.sqrt(2 * np.pi)
        )

    def test_laplace_at_mode(self):
        p = ml.ExpertParams(a=[0.0], b=0.0, sigma=1.0)
        assert ml.expert_density(ml.LAPLACE, p, [0.0], 0.0) == pytest.approx(0.5)

    def test_benchmark_expert_at_own_mean(self, bench_truth):
        # expert 1 at x=0.5: mean -20*0.5+15 = 5, sigma = 0.3
        p = bench_truth.components[0][1]
        got = ml.expert_density(ml.GAUSSIAN, p, [0.5], 5.0)
        assert got == pytest.approx(1.0 / (0.3 * np.sqrt(2 * np.pi)))
        assert got == pytest.approx(1.32981, abs=1e-5)

    @pytest.mark.parametrize("family", [ml.GAUSSIAN, ml.LAPLACE, ml.STUDENT_T])
    def test_matches_scipy(self, family):
        p = ml.ExpertParams(a=[1.5], b=-0.7, sigma=0.9)
        x, ys = [0.4], np.linspace(-4, 4, 9)
        mu = 1.5 * 0.4 - 0.7
        if family == ml.GAUSSIAN:
            expect = stats.norm.pdf(ys, mu, 0.9)
        elif family == ml.LAPLACE:
            expect = stats.laplace.pdf(ys, mu, 0.9)
        else:
            expect = stats.t.pdf(ys, 5.0, mu, 0.9)
        np.testing.assert_allclose(ml.expert_density(family, p, x, ys), expect, rtol=1e-12)

    def test_log_density_consistency(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = ml.ExpertParams(a=rng.normal(size=2), b=rng.normal(), sigma=np.exp(rng.normal()))
            x, y = rng.normal(size=2), rng.normal()
            dens = ml.expert_density(ml.GAUSSIAN, p, x, y)
            logd = ml.expert_log_density(ml.GAUSSIAN, p, x, y)
            if dens > 1e-290:
                assert np.exp(logd) == pytest.approx(dens, rel=1e-10)

    def test_sigma_positive_required(self):
        with pytest.raises(ml.InvalidArgumentError):
            ml.ExpertParams(a=[0.0], b=0.0, sigma=0.0)


class TestConditionalDensity:
    def test_degenerate_single_expert(self):
        G = ml.MixingMeasure.from_arrays([0.3], [[1.0]], [[2.0]], [1.0], [0.5])
        x, y = [0.2], 1.3
        assert ml.conditional_density(G, 1, x, y) == pytest.approx(
            float(ml.expert_density(ml.GAUSSIAN, G.components[0][1], x, y))
        )

    def test_top1_equals_leading_expert(self, bench_truth):
        # 25x > 0 on (0, 1], so the first expert is always ranked first
        for x in (0.05, 0.4, 1.0):
            got = ml.conditional_density(bench_truth, 1, [x], 2.0)
            expect = float(
                ml.expert_density(ml.GAUSSIAN, bench_truth.components[0][1], [x], 2.0)
            )
            assert got == pytest.approx(expect, rel=1e-12)

    def test_benchmark_two_expert_composition(self, bench_truth):
        x, y = [0.5], 5.0
        w = ml.gate_weights(bench_truth, x, 2).weights
        f1 = float(ml.expert_density(ml.GAUSSIAN, bench_truth.components[0][1], x, y))
        f2 = float(ml.expert_density(ml.GAUSSIAN, bench_truth.components[1][1], x, y))
        assert ml.conditional_density(bench_truth, 2, x, y) == pytest.approx(
            w[0] * f1 + w[1] * f2, rel=1e-12
        )

    @pytest.mark.parametrize("seed", range(6))
    def test_normalizes_to_one(self, seed):
        rng = np.random.default_rng(300 + seed)
        G = random_measure(rng, 3, 1)
        x = rng.uniform(0, 1, size=1)
        mu = G.a @ x + G.b
        lo = mu.min() - 10 * G.sigma.max()
        hi = mu.max() + 10 * G.sigma.max()
        ys = np.linspace(lo, hi, 4001)
        dens = [ml.conditional_density(G, 2, x, y) for y in ys]
        assert np.trapezoid(dens, ys) == pytest.approx(1.0, abs=1e-6)


class TestSampleDataset:
    def test_n_zero_rejected(self, bench_truth):
        with pytest.raises(ml.InvalidArgumentError):
            ml.sample_dataset(bench_truth, 1, 0, seed=0)

    def test_determinism(self, bench_truth):
        d1 = ml.sample_dataset(bench_truth, 2, 500, seed=123)
        d2 = ml.sample_dataset(bench_truth, 2, 500, seed=123)
        assert np.array_equal(d1.x, d2.x) and np.array_equal(d1.y, d2.y)

    def test_conditional_mean_near_half(self, bench_truth):
        # K=1 keeps expert 1 everywhere: E[y | x=0.5] = -20*0.5 + 15 = 5
        data = ml.sample_dataset(bench_truth, 1, 10_000, seed=7)
        sel = (data.x[:, 0] > 0.49) & (data.x[:, 0] < 0.51)
        assert data.y[sel].mean() == pytest.approx(5.0, abs=0.05)

    def test_invalid_truth_reports_assumptions(self):
        G = ml.MixingMeasure.from_arrays([0.5], [[1.0]], [[1.0]], [0.0], [1.0])
        with pytest.raises(ml.AssumptionError) as err:
            ml.sample_dataset(G, 1, 10, seed=0)
        assert any("U.2" in v for v in err.value.violations)

    def test_sampling_consistency_ks(self, bench_truth):
        # At fixed x the sampled y's K-S distance to the analytic mixture CDF
        # shrinks as n grows.
        x0 = 0.3
        w = ml.gate_weights(bench_truth, [x0], 2).weights
        mus = bench_truth.a @ np.array([x0]) + bench_truth.b
        cdf = lambda y: w[0] * stats.norm.cdf(y, mus[0], 0.3) + w[1] * stats.norm.cdf(y, mus[1], 0.4)
        stats_by_n = []
        for n in (200, 2000, 20_000):
            rng = np.random.default_rng(5)
            comp = rng.choice(2, size=n, p=w)
            y = rng.normal(mus[comp], np.where(comp == 0, 0.3, 0.4))
            stats_by_n.append(stats.kstest(y, cdf).statistic)
        assert stats_by_n[0] > stats_by_n[1] > stats_by_n[2]


class TestSerialization:
    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_bit_exact(self, seed):
        rng = np.random.default_rng(400 + seed)
        G = random_measure(rng, 3, 2)
        G2 = ml.measure_from_text(ml.measure_to_text(G))
        assert np.array_equal(G.beta0, G2.beta0)
        assert np.array_equal(G.beta1, G2.beta1)
        assert np.array_equal(G.a, G2.a)
        assert np.array_equal(G.b, G2.b)
        assert np.array_equal(G.sigma, G2.sigma)

    def test_student_t_keeps_dof(self):
        G = ml.MixingMeasure.from_arrays(
            [0.0], [[1.0]], [[1.0]], [0.0], [1.0], family=ml.STUDENT_T, dof=7.5
        )
        G2 = ml.measure_from_text(ml.measure_to_text(G))
        assert G2.family == ml.STUDENT_T
        assert G2.dof == 7.5

    def test_header_mismatch_rejected(self):
        with pytest.raises(ml.InvalidArgumentError):
            ml.measure_from_text("family=gaussian d=1 k=2\n0 0 0 0 1\n")


class TestMeasureChecks:
    def test_true_measure_enforces_assumptions(self):
        with pytest.raises(ml.AssumptionError):
            ml.true_measure([0.0], [[0.0]], [[1.0]], [0.0], [1.0])  # U.4 fails

    def test_duplicate_experts_flagged(self):
        G = ml.MixingMeasure.from_arrays(
            [0, 0], [[1], [0]], [[1], [1]], [0, 0], [1, 1]
        )
        assert not G.has_distinct_experts()
        assert any("U.3" in v for v in G.truth_violations())

    def test_benchmark_truth_is_valid(self, bench_truth):
        assert bench_truth.truth_violations() == []
        assert bench_truth.is_pinned()
