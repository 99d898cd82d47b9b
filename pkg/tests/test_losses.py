import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudlogit.datagen import ClassProfile, exponential_profile
from cloudlogit.errors import ConfigurationError, DegenerateInputError, InvalidArgumentError
from cloudlogit.gradcheck import check_family
from cloudlogit.losses import (
    COS_CLAMP,
    GaussianCloudConfig,
    LossSpec,
    adjusted_logits,
    adjusted_logits_backward,
    cosine_scores,
    cosine_scores_backward,
    draw_epsilon,
    grad_wrt_logits,
    ldam_margins,
    logit_curve,
    logit_curve_slope,
    softmax_ce,
)
from cloudlogit.numerics import Rng
from cloudlogit.schedules import CloudSchedule, ScheduleKind, cloud_schedule

ALL_FAMILIES = ["ce", "cosface:0.35", "arcface-style:0.5", "ldam:0.5", "gcl-e", "gcl-a"]


def fixed_schedule(delta):
    delta = np.asarray(delta, dtype=np.float64)
    return CloudSchedule(ScheduleKind("log"), delta, delta)


def gcl_spec(family, delta, scale=1.0, shared=True):
    return LossSpec(family, scale=scale, cloud=GaussianCloudConfig(shared=shared),
                    schedule=fixed_schedule(delta))


def spec_for(family, profile, scale=30.0):
    spec = LossSpec.parse(family, scale=scale)
    if spec.is_gcl:
        spec = LossSpec(spec.family, spec.margin, spec.scale, spec.cloud, cloud_schedule(profile, "log"))
    return spec


def random_scores(rng, batch, classes):
    return np.clip(2 * rng.uniform((batch, classes)) - 1, -1, 1)


class TestLossSpec:
    @pytest.mark.parametrize("text,family,margin", [
        ("ce", "ce", 0.0), ("cosface:0.2", "cosface", 0.2), ("cosface", "cosface", 0.35),
        ("arcface-style:0.3", "arcface", 0.3), ("ldam", "ldam", 0.5), ("gcl-e", "gcl-e", 0.0),
        ("gcl-a", "gcl-a", 0.0), ("norm", "cosface", 0.0),
    ])
    def test_parse(self, text, family, margin):
        spec = LossSpec.parse(text)
        assert (spec.family, spec.margin) == (family, margin)

    @pytest.mark.parametrize("text", ["focal", "gcl-e:0.3", "cosface:abc"])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigurationError):
            LossSpec.parse(text)

    def test_str_roundtrip(self):
        for text in ALL_FAMILIES:
            assert str(LossSpec.parse(text)) == text

    def test_invalid_values(self):
        with pytest.raises(InvalidArgumentError):
            LossSpec("cosface", margin=-0.1)
        with pytest.raises(InvalidArgumentError):
            LossSpec("ce", scale=0.0)
        with pytest.raises(InvalidArgumentError):
            GaussianCloudConfig(sigma=0.0)
        with pytest.raises(InvalidArgumentError):
            GaussianCloudConfig(angular_scale=-1.0)

    def test_gcl_needs_schedule(self):
        with pytest.raises(ConfigurationError):
            adjusted_logits(LossSpec("gcl-e"), np.zeros((1, 2)), [0], rng=Rng(0))

    def test_ldam_needs_profile(self):
        with pytest.raises(ConfigurationError):
            adjusted_logits(LossSpec("ldam", 0.5), np.zeros((1, 2)), [0])

    def test_gcl_needs_noise_source(self):
        with pytest.raises(InvalidArgumentError):
            adjusted_logits(gcl_spec("gcl-e", [0, 1]), np.zeros((1, 2)), [0])


class TestCosineScores:
    def test_parallel_orthogonal_opposite(self):
        W = np.array([[1.0, 0.0, -2.0], [0.0, 3.0, 0.0]])
        f = np.array([[2.0, 0.0]])
        np.testing.assert_array_equal(cosine_scores(f, W), [[1.0, 0.0, -1.0]])

    def test_zero_feature(self):
        with pytest.raises(DegenerateInputError):
            cosine_scores(np.zeros((1, 2)), np.eye(2))

    def test_zero_anchor(self):
        with pytest.raises(DegenerateInputError):
            cosine_scores(np.ones((1, 2)), np.array([[1.0, 0.0], [0.0, 0.0]]))

    def test_range(self):
        rng = Rng(0)
        s = cosine_scores(rng.normal((20, 5)), rng.normal((5, 7)))
        assert np.all(np.abs(s) <= 1.0)

    def test_backward_matches_finite_differences(self):
        rng = Rng(1)
        f, W, g = rng.normal((3, 4)), rng.normal((4, 5)), rng.normal((3, 5))
        gf, gw = cosine_scores_backward(f, W, g)
        h = 1e-6
        for arr, analytic in ((f, gf), (W, gw)):
            numeric = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = np.sum(g * cosine_scores(f, W))
                arr[idx] = old - h
                down = np.sum(g * cosine_scores(f, W))
                arr[idx] = old
                numeric[idx] = (up - down) / (2 * h)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)


class TestAdjustedLogits:
    def test_gcl_e_example(self):
        out = adjusted_logits(gcl_spec("gcl-e", [0.0, 1.0]), np.array([[0.9, 0.2]]), [0],
                              epsilon=np.array([[-0.6]]))
        np.testing.assert_allclose(out.logits, [[0.9, -0.4]], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("shared", [True, False])
    def test_gcl_a_example(self, shared):
        # cos(pi/3 + pi/4) = -0.25881904510252076 (high-precision oracle)
        eps = np.array([[0.5]]) if shared else np.array([[0.5, 0.5]])
        spec = gcl_spec("gcl-a", [1.0, 1.0], shared=shared)
        out = adjusted_logits(spec, np.array([[math.cos(math.pi / 3)] * 2]), [0], epsilon=eps)
        np.testing.assert_allclose(out.logits, -0.25881904510252076, rtol=0, atol=1e-15)

    def test_cosface_example(self):
        spec = LossSpec("cosface", 0.35, scale=1.0)
        out = adjusted_logits(spec, np.array([[0.8, 0.3, -0.1]]), [0])
        np.testing.assert_allclose(out.logits, [[0.45, 0.3, -0.1]], rtol=0, atol=1e-15)

    def test_arcface_target_only(self):
        spec = LossSpec("arcface", 0.5, scale=1.0)
        c = np.array([[0.6, 0.2]])
        out = adjusted_logits(spec, c, [1])
        np.testing.assert_allclose(out.logits, [[0.6, math.cos(math.acos(0.2) + 0.5)]], atol=1e-15)

    def test_ldam_margins(self):
        m = ldam_margins(ClassProfile((625, 16)), 0.5)
        np.testing.assert_allclose(m, [0.5 * 2 / 5, 0.5], rtol=1e-15)
        spec = LossSpec("ldam", 0.5, scale=1.0)
        out = adjusted_logits(spec, np.array([[0.7, 0.7]]), [0], ClassProfile((625, 16)))
        np.testing.assert_allclose(out.logits, [[0.5, 0.7]], atol=1e-15)

    def test_ce_pass_through(self):
        z = np.array([[3.0, -1.0]])
        out = adjusted_logits(LossSpec("ce"), z, [0])
        np.testing.assert_array_equal(out.logits, z)
        assert out.logits is not z

    @pytest.mark.parametrize("family", ["gcl-e", "gcl-a"])
    def test_zero_clouds_reduce_to_scaled_cosine(self, family):
        rng = Rng(2)
        c = random_scores(rng, 16, 5)
        out = adjusted_logits(gcl_spec(family, np.zeros(5), scale=30.0), c, np.zeros(16, int), rng=rng)
        np.testing.assert_allclose(out.logits, 30.0 * c, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_eval_mode_is_plain(self, family):
        rng = Rng(3)
        profile = exponential_profile(100, 10, 4)
        c = random_scores(rng, 8, 4)
        spec = spec_for(family, profile)
        out = adjusted_logits(spec, c, rng=rng, labels=np.arange(8) % 4, profile=profile, training=False)
        expected = c if family == "ce" else spec.scale * c
        np.testing.assert_array_equal(out.logits, expected)

    def test_gcl_a_series_matches_direct_cosine(self):
        rng = Rng(4)
        delta = np.linspace(0.0, 1.0, 30)
        c = random_scores(rng, 64, 30)
        out = adjusted_logits(gcl_spec("gcl-a", delta), c, np.zeros(64, int), rng=rng)
        a = delta * (math.pi / 2) * np.abs(out.epsilon)
        np.testing.assert_allclose(out.logits, np.cos(np.arccos(c) + a), rtol=0, atol=1e-12)
        np.testing.assert_allclose(out.offset, a, rtol=0, atol=1e-15)

    def test_per_class_noise_mode(self):
        spec = gcl_spec("gcl-e", [0.5, 1.0], shared=False)
        out = adjusted_logits(spec, np.zeros((4, 2)), np.zeros(4, int), rng=Rng(0))
        assert out.epsilon.shape == (4, 2)

    def test_noise_redrawn_each_call(self):
        spec = gcl_spec("gcl-e", [0.5, 1.0])
        rng = Rng(0)
        a = adjusted_logits(spec, np.zeros((4, 2)), np.zeros(4, int), rng=rng)
        b = adjusted_logits(spec, np.zeros((4, 2)), np.zeros(4, int), rng=rng)
        assert not np.array_equal(a.epsilon, b.epsilon)

    def test_clamped_scores_give_finite_zero_slope(self):
        spec = gcl_spec("gcl-a", [0.5, 1.0])
        c = np.array([[1.0, -1.0], [0.3, -0.2]])
        out = adjusted_logits(spec, c, [0, 1], epsilon=np.array([[0.4], [0.4]]))
        g = adjusted_logits_backward(spec, out, np.ones_like(c))
        assert np.all(np.isfinite(out.logits)) and np.all(np.isfinite(g))
        np.testing.assert_array_equal(g[0], 0.0)
        assert np.all(g[1] != 0.0)

    def test_pole_logits_exact(self):
        # cos(0 + a) and cos(pi + a) with a = (pi/2) * 0.4 * delta
        spec = gcl_spec("gcl-a", [0.5, 1.0], scale=1.0)
        out = adjusted_logits(spec, np.array([[1.0, -1.0]]), [0], epsilon=np.array([[0.4]]))
        a = math.pi / 2 * 0.4 * np.array([0.5, 1.0])
        np.testing.assert_allclose(out.logits[0], [math.cos(a[0]), -math.cos(a[1])], rtol=0, atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32), classes=st.integers(2, 12), batch=st.integers(1, 8))
    def test_gcl_invariants(self, seed, classes, batch):
        rng = Rng(seed)
        delta = rng.uniform(classes)
        c = random_scores(rng, batch, classes)
        labels = np.zeros(batch, int)
        e = adjusted_logits(gcl_spec("gcl-e", delta, scale=30.0), c, labels, rng=rng)
        assert np.all(np.abs(e.epsilon) <= 1.0)
        assert np.all(e.logits <= 30.0 * c)
        equal = e.logits == 30.0 * c
        np.testing.assert_array_equal(equal, (delta * np.abs(e.epsilon)) == 0)
        a = adjusted_logits(gcl_spec("gcl-a", delta), c, labels, rng=rng)
        assert np.all((a.offset >= 0) & (a.offset <= math.pi / 2))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32))
    def test_logit_difference_identity(self, seed):
        rng = Rng(seed)
        delta = rng.uniform(6)
        c = random_scores(rng, 10, 6)
        out = adjusted_logits(gcl_spec("gcl-e", delta, scale=30.0), c, np.zeros(10, int), rng=rng)
        eps = np.abs(out.epsilon)
        for y in range(6):
            lhs = out.logits[:, [y]] - out.logits
            rhs = 30.0 * (c[:, [y]] - c - (delta[y] - delta) * eps)
            np.testing.assert_allclose(lhs - rhs, 0.0, rtol=0, atol=1e-12)


class TestAdjustedBackward:
    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_matches_finite_differences(self, family):
        rng = Rng(5)
        profile = exponential_profile(100, 10, 5)
        spec = spec_for(family, profile, scale=4.0)
        c = 0.9 * random_scores(rng, 6, 5)
        labels = np.arange(6) % 5
        eps = draw_epsilon(spec.cloud, rng, 6, 5) if spec.is_gcl else None
        g = rng.normal((6, 5))
        out = adjusted_logits(spec, c, labels, profile, epsilon=eps)
        analytic = adjusted_logits_backward(spec, out, g)
        h = 1e-6
        numeric = np.zeros_like(c)
        for idx in np.ndindex(c.shape):
            cp, cm = c.copy(), c.copy()
            cp[idx] += h
            cm[idx] -= h
            up = np.sum(g * adjusted_logits(spec, cp, labels, profile, epsilon=eps).logits)
            down = np.sum(g * adjusted_logits(spec, cm, labels, profile, epsilon=eps).logits)
            numeric[idx] = (up - down) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-7)

    @pytest.mark.parametrize("family", ALL_FAMILIES)
    def test_end_to_end_gradcheck(self, family):
        assert check_family(family, instances=4, seed=1).passed


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss, probs = softmax_ce(np.zeros((1, 3)), [0])
        assert loss == pytest.approx(math.log(3), abs=1e-15)
        np.testing.assert_allclose(probs, 1 / 3)

    def test_confident_correct(self):
        # log(1 + e^-10) = 4.5398899216864646e-05
        loss, _ = softmax_ce(np.array([[10.0, 0.0]]), [0])
        assert loss == pytest.approx(4.5398899216864646e-05, rel=1e-12)

    def test_confident_wrong(self):
        # 10 + log(1 + e^-10) = 10.000045398899217
        loss, _ = softmax_ce(np.array([[0.0, 10.0]]), [0])
        assert loss == pytest.approx(10.000045398899217, rel=1e-14)

    def test_large_logits_stable(self):
        loss, probs = softmax_ce(np.array([[1000.0, 0.0, -1000.0]]), [2])
        assert loss == pytest.approx(2000.0)
        assert np.all(np.isfinite(probs))

    def test_accepts_perturbed_logits(self):
        out = adjusted_logits(LossSpec("ce"), np.zeros((2, 2)), [0, 1])
        assert softmax_ce(out, [0, 1])[0] == pytest.approx(math.log(2))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=12), st.integers(0, 11))
    def test_probabilities_sum_to_one(self, z, y):
        y = y % len(z)
        _, probs = softmax_ce(np.array([z]), [y])
        assert abs(probs.sum() - 1.0) <= 1e-12


class TestGradWrtLogits:
    def test_binary_tie(self):
        _, probs = softmax_ce(np.zeros((1, 2)), [0])
        np.testing.assert_array_equal(grad_wrt_logits(probs, [0]), [[-0.5, 0.5]])

    def test_ln3(self):
        # softmax([ln 3, 0]) = [3/4, 1/4]
        _, probs = softmax_ce(np.array([[math.log(3), 0.0]]), [0])
        np.testing.assert_allclose(grad_wrt_logits(probs, [0]), [[-0.25, 0.25]], rtol=0, atol=1e-15)

    def test_divided_by_batch(self):
        _, probs = softmax_ce(np.zeros((4, 2)), [0, 0, 1, 1])
        np.testing.assert_allclose(grad_wrt_logits(probs, [0, 0, 1, 1])[0], [-0.125, 0.125])

    def test_saturated_target_stays_open_interval(self):
        z = np.array([[-40.0, 40.0], [40.0, -40.0], [0.0, 800.0]])
        labels = [0, 0, 0]
        _, probs = softmax_ce(z, labels)
        target = grad_wrt_logits(probs, labels, mean=False)[:, 0]
        assert np.all((target > -1) & (target < 0))
        # exp(-80) survives in the small-magnitude case
        assert target[1] == pytest.approx(-math.exp(-80), rel=1e-12)

    def test_mean_false_is_per_sample(self):
        _, probs = softmax_ce(np.zeros((4, 2)), [0, 0, 1, 1])
        np.testing.assert_array_equal(grad_wrt_logits(probs, [0, 0, 1, 1], mean=False)[0], [-0.5, 0.5])

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32), st.integers(2, 20))
    def test_rows_sum_to_zero_and_target_negative(self, seed, classes):
        rng = Rng(seed)
        # logits of the size a scaled cosine produces
        z = 3 * rng.normal((8, classes))
        labels = np.floor(rng.uniform(8) * classes).astype(int)
        _, probs = softmax_ce(z, labels)
        g = grad_wrt_logits(probs, labels) * 8
        np.testing.assert_allclose(g.sum(axis=1), 0.0, rtol=0, atol=1e-12)
        target = g[np.arange(8), labels]
        assert np.all((target > -1) & (target < 0))


class TestLogitCurves:
    @pytest.mark.parametrize("delta", [0.1, 0.5])
    def test_angular_slope_dominates(self, delta):
        theta = np.linspace(0.0, math.pi / 2 - delta * math.pi / 2, 1000)
        ga = logit_curve_slope(theta, delta, 1.0, "gcl-a")
        ge = logit_curve_slope(theta, delta, 1.0, "gcl-e")
        assert np.all(ga <= ge)

    def test_slope_matches_curve(self):
        theta = np.linspace(0.1, 1.2, 50)
        h = 1e-6
        for form in ("gcl-e", "gcl-a"):
            numeric = (logit_curve(theta + h, 0.3, 0.7, form) - logit_curve(theta - h, 0.3, 0.7, form)) / (2 * h)
            np.testing.assert_allclose(logit_curve_slope(theta, 0.3, 0.7, form), numeric, atol=1e-8)

    def test_unknown_form(self):
        with pytest.raises(InvalidArgumentError):
            logit_curve(0.0, 0.1, 1.0, "gcl-x")


def test_cos_clamp_value():
    assert COS_CLAMP == 1.0 - 1e-12
