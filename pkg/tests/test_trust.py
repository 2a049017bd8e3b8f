import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradtrust as gt
from oracles import (oracle_grad, oracle_loss, oracle_plan, oracle_popvar,
                     oracle_residual, oracle_score, oracle_variance_vector)

WORKED_LOGITS = np.array([3.0, 1.0, 2.0, 0.5])
WORKED_FEATURES = np.array([1.0, 2.0])


def logit_vectors(min_n=2, max_n=10):
    return st.lists(st.floats(min_value=-50, max_value=50,
                              allow_nan=False, allow_infinity=False),
                    min_size=min_n, max_size=max_n)


class TestPredict:
    def test_plain_max(self):
        assert gt.predict([3, 1, 2]) == 0

    def test_all_ties_pick_lowest(self):
        assert gt.predict([0, 0, 0]) == 0

    def test_later_tie_picks_first_of_pair(self):
        assert gt.predict([1, 5, 5]) == 1

    def test_rejects_single_class(self):
        with pytest.raises(ValueError):
            gt.predict([1.0])


class TestCounterfactualTargets:
    def test_worked_example(self):
        plan = gt.counterfactual_targets(WORKED_LOGITS, 2)
        assert plan.predicted == 0
        assert plan.counterfactuals == (2, 1)
        assert plan.targets.tolist() == [0.0, 1.0, 1.0, 0.0]
        assert plan.k == 2

    def test_tie_rule(self):
        plan = gt.counterfactual_targets([0.0, 0.0, 0.0], 2)
        assert plan.predicted == 0
        assert plan.counterfactuals == (1, 2)
        assert plan.targets.tolist() == [0.0, 1.0, 1.0]

    def test_k_equal_n_rejected(self):
        with pytest.raises(gt.InvalidK):
            gt.counterfactual_targets([5.0, 1.0], 2)

    def test_k_zero_rejected(self):
        with pytest.raises(gt.InvalidK):
            gt.counterfactual_targets([5.0, 1.0], 0)

    def test_error_message_names_constraint(self):
        with pytest.raises(gt.InvalidK, match=r"1 <= k <= N-1"):
            gt.counterfactual_targets([5.0, 1.0, 0.0], 3)

    @given(logit_vectors(), st.data())
    def test_structure_properties(self, logits, data):
        k = data.draw(st.integers(min_value=1, max_value=len(logits) - 1))
        plan = gt.counterfactual_targets(logits, k)
        assert len(plan.counterfactuals) == k
        assert plan.predicted not in plan.counterfactuals
        assert plan.targets[plan.predicted] == 0.0
        assert float(plan.targets.sum()) == k
        predicted, members, targets = oracle_plan(list(logits), k)
        assert plan.predicted == predicted
        assert list(plan.counterfactuals) == members
        assert plan.targets.tolist() == targets


class TestCounterfactualLoss:
    def test_worked_value(self):
        plan = gt.counterfactual_targets(WORKED_LOGITS, 2)
        # (3-0)^2 + (1-1)^2 + (2-1)^2 + (0.5-0)^2 = 10.25, normalizer 1/(2-1)
        assert gt.counterfactual_loss(WORKED_LOGITS, plan) == 10.25

    def test_zero_at_targets(self):
        plan = gt.counterfactual_targets([5.0, 1.0, 0.0], 1)
        assert gt.counterfactual_loss(plan.targets, plan) == 0.0

    @given(logit_vectors(min_n=3, max_n=8), st.data())
    def test_matches_bruteforce(self, logits, data):
        k = data.draw(st.integers(min_value=1, max_value=len(logits) - 1))
        plan = gt.counterfactual_targets(logits, k)
        want = oracle_loss(list(logits), plan.targets.tolist(), k)
        assert gt.counterfactual_loss(logits, plan) == pytest.approx(want, rel=1e-12)


class TestLossGradient:
    def test_worked_example(self):
        plan = gt.counterfactual_targets(WORKED_LOGITS, 2)
        g = gt.loss_gradient_wrt_logits(WORKED_LOGITS, plan)
        assert g.tolist() == [6.0, 0.0, 2.0, 1.0]

    def test_zero_at_minimum(self):
        plan = gt.counterfactual_targets([5.0, 1.0, 0.0], 1)
        g = gt.loss_gradient_wrt_logits(plan.targets, plan)
        assert g.tolist() == [0.0, 0.0, 0.0]

    def test_normalizer_scales_linearly(self):
        plan = gt.counterfactual_targets(WORKED_LOGITS, 2)
        base = gt.loss_gradient_wrt_logits(WORKED_LOGITS, plan, normalizer=1.0)
        tripled = gt.loss_gradient_wrt_logits(WORKED_LOGITS, plan, normalizer=3.0)
        assert np.allclose(tripled, 3.0 * base, rtol=1e-15)

    def test_length_mismatch_rejected(self):
        plan = gt.counterfactual_targets(WORKED_LOGITS, 2)
        with pytest.raises(ValueError):
            gt.loss_gradient_wrt_logits([1.0, 2.0], plan)


class TestGradLastLayer:
    def test_worked_example(self):
        g = gt.grad_last_layer(WORKED_FEATURES, [6.0, 0.0, 2.0, 1.0])
        assert g.tolist() == [[6.0, 0.0, 2.0, 1.0], [12.0, 0.0, 4.0, 2.0]]

    def test_zero_residual(self):
        assert gt.grad_last_layer([1.0, 2.0], [0.0, 0.0]).tolist() == [[0, 0], [0, 0]]

    def test_scalar(self):
        assert gt.grad_last_layer([1.0], [7.0]).tolist() == [[7.0]]

    def test_matches_finite_difference_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            d, n, k = 4, 5, 2
            f = rng.standard_normal(d)
            w = rng.standard_normal((d, n))
            b = rng.standard_normal(n)
            logits = f @ w + b
            plan = gt.counterfactual_targets(logits, k)
            analytic = gt.grad_last_layer(f, gt.loss_gradient_wrt_logits(logits, plan))
            oracle = gt.finite_diff_grad(f, w, b, plan, h=1e-4)
            assert np.allclose(analytic, oracle, rtol=1e-4, atol=1e-9)


class TestVarianceVector:
    def test_worked_example(self):
        g = gt.grad_last_layer(WORKED_FEATURES, [6.0, 0.0, 2.0, 1.0])
        assert gt.variance_vector(g).tolist() == [2916.0, 0.0, 36.0, 2.25]

    def test_single_row_is_zero(self):
        assert gt.variance_vector(np.array([[3.0, 4.0]])).tolist() == [0.0, 0.0]

    def test_zero_matrix(self):
        assert gt.variance_vector(np.zeros((3, 2))).tolist() == [0.0, 0.0]

    @given(st.integers(min_value=2, max_value=6), st.integers(min_value=2, max_value=5),
           st.integers(min_value=0, max_value=2**32 - 1))
    def test_matches_bruteforce_both_modes(self, d, n, seed):
        g = np.random.default_rng(seed).standard_normal((d, n))
        rows = g.tolist()
        got_sq = gt.variance_vector(g, mode="squared")
        got_raw = gt.variance_vector(g, mode="raw")
        assert np.allclose(got_sq, oracle_variance_vector(rows, "squared"), rtol=1e-9)
        assert np.allclose(got_raw, oracle_variance_vector(rows, "raw"), rtol=1e-9)

    def test_rejects_unknown_mode(self):
        with pytest.raises(ValueError):
            gt.variance_vector(np.ones((2, 2)), mode="cubed")


class TestGradtrustScore:
    def test_worked_example(self):
        assert gt.gradtrust_score(WORKED_FEATURES, WORKED_LOGITS, 2) == 162.0

    def test_worked_example_report_fields(self):
        rep = gt.gradient_report(WORKED_FEATURES, WORKED_LOGITS, 2)
        assert rep.residual_grad.tolist() == [6.0, 0.0, 2.0, 1.0]
        assert rep.variance.tolist() == [2916.0, 0.0, 36.0, 2.25]
        assert rep.grad.shape == (2, 4)
        assert rep.score == 162.0

    def test_constant_magnitude_features_degenerate(self):
        with pytest.raises(gt.DegenerateScore):
            gt.gradtrust_score([1.0, 1.0], WORKED_LOGITS, 2)

    def test_sign_flips_still_degenerate(self):
        # squared features are constant even though raw features are not
        with pytest.raises(gt.DegenerateScore):
            gt.gradtrust_score([1.0, -1.0], WORKED_LOGITS, 2)

    def test_vanishing_counterfactual_residuals_give_infinity(self):
        assert gt.gradtrust_score([1.0, 2.0], [5.0, 1.0, 1.0], 2) == math.inf

    def test_remaining_denominator_mode(self):
        # v = [2916, 0, 36, 2.25]; mean over all but argmax = 38.25/3
        got = gt.gradtrust_score(WORKED_FEATURES, WORKED_LOGITS, 2,
                                 denominator_mode="remaining")
        assert got == pytest.approx(2916.0 / (38.25 / 3.0), rel=1e-12)

    def test_raw_variance_mode_matches_bruteforce(self):
        got = gt.gradtrust_score(WORKED_FEATURES, WORKED_LOGITS, 2,
                                 variance_mode="raw")
        want = oracle_score(WORKED_FEATURES.tolist(), WORKED_LOGITS.tolist(), 2,
                            variance_mode="raw")
        assert got == pytest.approx(want, rel=1e-12)

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=60)
    def test_matches_bruteforce_chain(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 9))
        n = int(rng.integers(3, 9))
        k = int(rng.integers(1, n))
        f = rng.standard_normal(d)
        logits = rng.standard_normal(n)
        want = oracle_score(f.tolist(), logits.tolist(), k)
        try:
            got = gt.gradtrust_score(f, logits, k)
        except gt.DegenerateScore:
            got = "degenerate"
        if isinstance(want, float) and math.isfinite(want):
            assert got == pytest.approx(want, rel=1e-9)
        else:
            assert got == want

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=60)
    def test_finite_scores_are_positive(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.standard_normal(int(rng.integers(2, 9)))
        logits = rng.standard_normal(int(rng.integers(3, 9)))
        k = int(rng.integers(1, logits.size))
        try:
            score = gt.gradtrust_score(f, logits, k)
        except gt.DegenerateScore:
            return
        assert score > 0.0


class TestFactorization:
    """v[j] must equal residual[j]^4 * Var(f squared elementwise)."""

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=60)
    def test_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 12))
        n = int(rng.integers(3, 10))
        k = int(rng.integers(1, n))
        f = rng.standard_normal(d)
        logits = rng.standard_normal(n)
        plan = gt.counterfactual_targets(logits, k)
        residual = gt.loss_gradient_wrt_logits(logits, plan)
        v = gt.variance_vector(gt.grad_last_layer(f, residual))
        want = residual ** 4 * gt.tensor.population_variance(f * f)
        assert np.allclose(v, want, rtol=1e-9, atol=0.0)


class TestInvariances:
    @given(st.integers(min_value=0, max_value=2**32 - 1),
           st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=60)
    def test_normalizer_rescaling_cancels(self, seed, alpha):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 10))
        n = int(rng.integers(3, 10))
        k = int(rng.integers(1, n))
        f = rng.standard_normal(d)
        logits = rng.standard_normal(n)
        plan = gt.counterfactual_targets(logits, k)

        def ratio(normalizer):
            residual = gt.loss_gradient_wrt_logits(logits, plan, normalizer=normalizer)
            v = gt.variance_vector(gt.grad_last_layer(f, residual))
            top = int(np.argmax(v))
            pool = [j for j in plan.counterfactuals if j != top]
            den = float(np.mean(v[pool])) if pool else 0.0
            if den == 0.0:
                return None
            return float(v[top]) / den

        base = ratio(None)
        scaled = ratio(alpha)
        if base is None:
            assert scaled is None
        else:
            assert scaled == pytest.approx(base, rel=1e-9)

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=60)
    def test_feature_substitution_cancels(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 10))
        k = int(rng.integers(1, n))
        logits = rng.standard_normal(n)
        f1 = rng.standard_normal(int(rng.integers(2, 10)))
        f2 = rng.standard_normal(int(rng.integers(2, 10)))

        def score_of(f):
            try:
                return gt.gradtrust_score(f, logits, k)
            except gt.DegenerateScore:
                return None

        s1, s2 = score_of(f1), score_of(f2)
        if s1 is None or s2 is None:
            # random gaussian features essentially never have Var(f*f) = 0
            assert s1 is None and s2 is None
        elif math.isinf(s1):
            assert math.isinf(s2)
        else:
            assert s2 == pytest.approx(s1, rel=1e-9)


class TestBatch:
    def test_worked_single_sample(self, worked_bundle):
        scores, mask = gt.batch_gradtrust(worked_bundle, 2)
        assert scores.tolist() == [162.0]
        assert mask.tolist() == [False]

    def test_duplicated_sample_duplicates_score(self, worked_bundle):
        doubled = gt.make_bundle(
            features=np.vstack([worked_bundle.features, worked_bundle.features]),
            weights=worked_bundle.weights, bias=worked_bundle.bias,
            labels=np.array([0, 0]))
        scores, _ = gt.batch_gradtrust(doubled, 2)
        assert scores.tolist() == [162.0, 162.0]

    def test_permutation_equivariance(self, small_bundle):
        scores, mask = gt.batch_gradtrust(small_bundle, 2)
        perm = np.random.default_rng(0).permutation(small_bundle.n_samples)
        shuffled = gt.make_bundle(
            features=small_bundle.features[perm], weights=small_bundle.weights,
            bias=small_bundle.bias, labels=small_bundle.labels[perm],
            logits=small_bundle.logits[perm])
        scores_p, mask_p = gt.batch_gradtrust(shuffled, 2)
        assert np.array_equal(scores_p, scores[perm])
        assert np.array_equal(mask_p, mask[perm])

    def test_degenerate_row_gets_sentinel_and_flag(self):
        b = gt.make_bundle(features=[[1.0, 2.0], [1.0, 1.0]],
                           weights=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.5]],
                           bias=[0.0, 0.0, 0.0], labels=[0, 0])
        scores, mask = gt.batch_gradtrust(b, 1)
        assert mask.tolist() == [False, True]
        assert scores[1] == gt.DEGENERATE_SENTINEL
        assert math.isfinite(scores[0]) or math.isinf(scores[0])

    def test_invalid_k_raised_up_front(self, worked_bundle):
        with pytest.raises(gt.InvalidK):
            gt.batch_gradtrust(worked_bundle, 4)
