import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff_grad
from tcseq.losses import (
    TargetSchedule,
    compute_targets,
    compute_targets_closed_form,
    cross_entropy,
    entropy,
    kl_divergence,
    sequence_loss,
    sequence_loss_grad,
    softmax,
)


def random_instance(rng, T, K):
    probs_next = rng.dirichlet(np.ones(K), size=T - 1)
    return probs_next, int(rng.integers(1, K + 1))


class TestCrossEntropy:
    def test_one_hot_vs_uniform(self):
        assert cross_entropy([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_equal_is_entropy(self):
        expected = -0.3 * math.log(0.3) - 0.7 * math.log(0.7)
        assert cross_entropy([0.3, 0.7], [0.3, 0.7]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.610864, abs=1e-6)

    def test_perfect_prediction(self):
        assert cross_entropy([1, 0], [1, 0]) <= 1e-10

    def test_zero_probability_is_finite(self):
        assert math.isfinite(cross_entropy([0.5, 0.5], [1, 0]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 6))
    def test_gibbs(self, seed, K):
        rng = np.random.default_rng(seed)
        p, q = rng.dirichlet(np.ones(K), size=2)
        assert cross_entropy(p, q) >= entropy(p) - 1e-12


class TestKL:
    def test_zero_for_equal(self):
        assert kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0

    def test_degenerate(self):
        assert kl_divergence([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_value(self):
        expected = 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5)
        assert kl_divergence([0.9, 0.1], [0.5, 0.5]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.368064, abs=1e-6)

    def test_is_ce_minus_entropy(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p, q = rng.dirichlet(np.ones(4), size=2)
            assert kl_divergence(p, q) == pytest.approx(cross_entropy(p, q) - entropy(p), abs=1e-12)


class TestTargets:
    def test_lambda_one_is_hard_label(self):
        probs_next, _ = random_instance(np.random.default_rng(1), 5, 3)
        z = compute_targets(probs_next, 2, 1.0).targets
        np.testing.assert_array_equal(z, np.tile([0, 1, 0], (5, 1)))

    def test_lambda_zero_is_next_prediction(self):
        probs_next, _ = random_instance(np.random.default_rng(2), 5, 3)
        z = compute_targets(probs_next, 3, 0.0).targets
        np.testing.assert_array_equal(z[:-1], probs_next)
        np.testing.assert_array_equal(z[-1], [0, 0, 1])

    def test_worked_example(self):
        z = compute_targets([[0.8, 0.2]], 1, 0.5).targets
        np.testing.assert_allclose(z, [[0.9, 0.1], [1, 0]], atol=1e-15)
        np.testing.assert_allclose(compute_targets_closed_form([[0.8, 0.2]], 1, 0.5).targets, z, atol=1e-15)

    def test_single_step(self):
        z = compute_targets(np.zeros((0, 3)), 2, 0.3).targets
        np.testing.assert_array_equal(z, [[0, 1, 0]])
        z = compute_targets([], 1, 0.3, n_classes=2).targets
        np.testing.assert_array_equal(z, [[1, 0]])

    @pytest.mark.parametrize("lam", [-0.1, 1.5])
    def test_lambda_range(self, lam):
        with pytest.raises(ValueError):
            compute_targets([[0.5, 0.5]], 1, lam)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 50), st.integers(2, 5), st.floats(0, 1))
    def test_recursion_matches_closed_form_and_simplex(self, seed, T, K, lam):
        probs_next, y = random_instance(np.random.default_rng(seed), T, K)
        z = compute_targets(probs_next, y, lam, n_classes=K).targets
        zc = compute_targets_closed_form(probs_next, y, lam, n_classes=K).targets
        assert np.max(np.abs(z - zc)) <= 1e-12
        assert np.all(z >= 0)
        np.testing.assert_allclose(z.sum(1), 1.0, atol=1e-12)


class TestSequenceLoss:
    def test_uniform_single_step(self):
        sched = TargetSchedule(np.array([[1.0, 0.0]]), 1.0)
        assert sequence_loss([[0, 0]], sched) == pytest.approx(math.log(2), abs=1e-12)

    def test_soft_targets_against_uniform(self):
        sched = TargetSchedule(np.array([[0.9, 0.1], [1, 0]]), 0.5)
        assert sequence_loss(np.zeros((2, 2)), sched) == pytest.approx(math.log(2), abs=1e-12)

    def test_lambda_one_is_scaled_dce(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(6, 3))
        sched = compute_targets(rng.dirichlet(np.ones(3), size=5), 2, 1.0)
        dce = -sum(math.log(softmax(l)[1]) for l in logits)
        assert sequence_loss(logits, sched) == pytest.approx(dce / 6, abs=1e-12)

    def test_lambda_zero_terms_are_tc(self):
        rng = np.random.default_rng(4)
        logits = rng.normal(size=(4, 3))
        ref = rng.dirichlet(np.ones(3), size=3)
        sched = compute_targets(ref, 3, 0.0)
        tc = cross_entropy([0, 0, 1], softmax(logits[-1])) + sum(
            cross_entropy(ref[t], softmax(logits[t])) for t in range(3)
        )
        assert sequence_loss(logits, sched) * 4 == pytest.approx(tc, abs=1e-12)

    def test_lower_bound(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            T, K = int(rng.integers(1, 8)), int(rng.integers(2, 5))
            sched = compute_targets(rng.dirichlet(np.ones(K), size=T - 1), 1, rng.random(), n_classes=K)
            bound = np.mean([entropy(z) for z in sched.targets])
            assert sequence_loss(rng.normal(size=(T, K)), sched) >= bound - 1e-12
            # equality when every prediction equals its target
            logits = np.log(np.maximum(sched.targets, 1e-300))
            assert sequence_loss(logits, sched) == pytest.approx(bound, abs=1e-9)

    def test_length_mismatch(self):
        sched = TargetSchedule(np.array([[1.0, 0.0]]), 1.0)
        with pytest.raises(ValueError):
            sequence_loss(np.zeros((2, 2)), sched)
        with pytest.raises(ValueError):
            sequence_loss_grad(np.zeros((2, 2)), sched)

    def test_large_logits_are_stable(self):
        sched = TargetSchedule(np.array([[1.0, 0.0]]), 1.0)
        assert sequence_loss([[1000.0, -1000.0]], sched) == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(sequence_loss_grad([[1e4, -1e4]], sched)))


class TestGradient:
    def test_worked_example(self):
        sched = TargetSchedule(np.array([[1.0, 0.0]]), 1.0)
        np.testing.assert_allclose(sequence_loss_grad([[0, 0]], sched), [[-0.5, 0.5]])

    def test_stationary_point(self):
        z = np.array([[0.2, 0.8], [1.0 - 1e-9, 1e-9]])
        sched = TargetSchedule(z, 0.3)
        grad = sequence_loss_grad(np.log(z), sched)
        np.testing.assert_allclose(grad, 0, atol=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(100):
            T, K = int(rng.integers(1, 11)), int(rng.integers(2, 6))
            sched = compute_targets(rng.dirichlet(np.ones(K), size=T - 1), 1, rng.random(), n_classes=K)
            logits = rng.normal(size=(T, K))
            g = sequence_loss_grad(logits, sched)
            fd = central_diff_grad(lambda x: sequence_loss(x, sched), logits)
            worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-12))
        assert worst <= 1e-6
