import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from progen.data import Example
from progen.errors import DatasetError, DimensionMismatch
from progen.features import FeatureConfig, FeatureVector, featurize
from progen.model import (
    LossSpec,
    ModelHyper,
    ModelParams,
    evaluate,
    grad_loss,
    hvp,
    loss,
    predict,
    train,
    zero_params,
)

from conftest import (
    CE_SPEC,
    RCE_SPEC,
    fd_gradient,
    make_hyper,
    random_instance,
    rel_err,
)


def _binary_one_feature_params(w0: float, w1: float, l2: float = 0.0) -> ModelParams:
    cfg = FeatureConfig(dims=1, ngram_min=1, ngram_max=1, hash_seed=0)
    # layout: [W[0,0], W[0,1], b0, b1]
    return ModelParams(np.array([w0, w1, 0.0, 0.0]), 2, l2, cfg)


class TestPredict:
    def test_zero_weights_uniform(self):
        cfg = FeatureConfig(dims=4)
        params = zero_params(3, 0.0, cfg)
        p = predict(params, featurize("anything at all", cfg))
        assert np.allclose(p, [1 / 3] * 3)

    def test_equal_logits_symmetry(self):
        params = _binary_one_feature_params(0.7, 0.7)
        fv = FeatureVector(dims=1, values={0: 1.0})
        assert np.allclose(predict(params, fv), [0.5, 0.5])

    def test_hand_softmax(self):
        # logits (1, 0) -> [e/(e+1), 1/(e+1)]
        params = _binary_one_feature_params(1.0, 0.0)
        fv = FeatureVector(dims=1, values={0: 1.0})
        p = predict(params, fv)
        assert p[0] == pytest.approx(math.e / (math.e + 1), abs=1e-12)
        assert p[1] == pytest.approx(1 / (math.e + 1), abs=1e-12)

    def test_dimension_mismatch(self):
        params = _binary_one_feature_params(1.0, 0.0)
        with pytest.raises(DimensionMismatch):
            predict(params, FeatureVector(dims=2, values={1: 1.0}))

    @settings(max_examples=60, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        scale=st.floats(0.01, 8.0),
        num_classes=st.integers(2, 5),
    )
    def test_simplex_property(self, seed, scale, num_classes):
        params, examples = random_instance(
            seed, n=1, num_classes=num_classes, weight_scale=scale
        )
        p = predict(params, featurize(examples[0].text, params.feature_config))
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(p > 0) and np.all(p < 1)


class TestLoss:
    def test_rce_perfect_prediction_is_zero(self):
        # Saturate the softmax so p(label) == 1 to double precision.
        params = _binary_one_feature_params(60.0, -60.0)
        ex = Example(id=0, text="good", label=0)
        assert loss(params, ex, RCE_SPEC) == pytest.approx(0.0, abs=1e-20)

    def test_rce_uniform_prediction(self):
        params = _binary_one_feature_params(0.0, 0.0)
        ex = Example(id=0, text="good", label=0)
        assert loss(params, ex, RCE_SPEC) == pytest.approx(2.0, abs=1e-12)

    def test_ce_uniform_prediction(self):
        params = _binary_one_feature_params(0.0, 0.0)
        ex = Example(id=0, text="good", label=0)
        assert loss(params, ex, CE_SPEC) == pytest.approx(math.log(2), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 10_000), a=st.floats(-10.0, -0.5))
    def test_rce_closed_form_equals_elementwise_sum(self, seed, a):
        # -sum_c p_c * log(onehot_c) with log(0) := a, versus -a*(1 - p_label).
        params, examples = random_instance(seed, n=1, num_classes=3)
        ex = examples[0]
        p = predict(params, featurize(ex.text, params.feature_config))
        elementwise = -sum(
            p[c] * (0.0 if c == ex.label else a) for c in range(3)
        )
        spec = LossSpec(kind="rce", rce_constant_a=a)
        assert loss(params, ex, spec) == pytest.approx(elementwise, rel=1e-12)
        assert loss(params, ex, spec) >= 0.0


class TestGradLoss:
    def test_ce_gradient_zero_at_one_hot(self):
        params = _binary_one_feature_params(60.0, -60.0)
        ex = Example(id=0, text="good", label=0)
        assert np.allclose(grad_loss(params, ex, CE_SPEC), 0.0, atol=1e-20)

    def test_rce_hand_gradient_one_feature(self):
        # RCE = -a*(1 - p0); d/dw0 = a * dp0/dw0 = a * x * p0 * (1 - p0)
        params = _binary_one_feature_params(0.4, -0.2)
        ex = Example(id=0, text="good", label=0)
        fv = featurize(ex.text, params.feature_config)
        x = fv.values[0]
        p = predict(params, fv)
        a = RCE_SPEC.rce_constant_a
        expected_w0 = a * x * p[0] * (1 - p[0])
        g = grad_loss(params, ex, RCE_SPEC)
        assert g[0] == pytest.approx(expected_w0, rel=1e-12)
        # pushing up the label logit must lower the loss
        assert g[0] < 0

    @pytest.mark.parametrize("spec", [CE_SPEC, RCE_SPEC], ids=["ce", "rce"])
    def test_matches_finite_differences(self, spec):
        for seed in range(25):
            params, examples = random_instance(seed, n=1, dims=8, num_classes=3)
            ex = examples[0]

            def f(w):
                probe = ModelParams(
                    w, params.num_classes, params.l2_lambda, params.feature_config
                )
                return loss(probe, ex, spec)

            g = grad_loss(params, ex, spec)
            fd = fd_gradient(f, params.weights.copy())
            assert rel_err(g, fd) <= 1e-5


class TestHvp:
    def test_zero_vector_maps_to_zero(self, small_instance):
        params, examples = small_instance
        v = np.zeros(params.dim)
        assert np.allclose(hvp(params, examples, v), 0.0)

    def test_empty_feature_dataset_reduces_to_l2_on_weights(self):
        # Empty texts contribute no weight-block curvature, so on vectors
        # supported on the weight coordinates H acts as l2_lambda * I.
        # (The bias block keeps its softmax curvature even for empty inputs.)
        cfg = FeatureConfig(dims=3)
        params = zero_params(2, 2.0, cfg)
        examples = [Example(id=0, text="", label=0), Example(id=1, text="", label=1)]
        v = np.zeros(params.dim)
        v[: cfg.dims * 2] = np.arange(1.0, 7.0)
        out = hvp(params, examples, v, damping=0.0)
        assert np.allclose(out, 2.0 * v, atol=1e-12)

    def test_matches_finite_difference_of_gradients(self):
        # FD of the full training gradient (mean CE + l2 term) along v.
        rng = np.random.default_rng(7)
        params, examples = random_instance(3, n=6, dims=4, num_classes=2, l2_lambda=0.05)
        v = rng.standard_normal(params.dim)

        def train_grad(w):
            probe = ModelParams(w, params.num_classes, params.l2_lambda, params.feature_config)
            g = sum(grad_loss(probe, ex, CE_SPEC) for ex in examples) / len(examples)
            return g + params.l2_lambda * w

        h = 1e-5
        fd = (train_grad(params.weights + h * v) - train_grad(params.weights - h * v)) / (2 * h)
        assert rel_err(hvp(params, examples, v), fd) <= 1e-4

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 5000), damping=st.floats(0.0, 1.0))
    def test_linearity_and_symmetry(self, seed, damping):
        params, examples = random_instance(seed % 50, n=5, dims=6)
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(params.dim)
        v = rng.standard_normal(params.dim)
        a, b = 1.7, -0.3
        left = hvp(params, examples, a * u + b * v, damping)
        right = a * hvp(params, examples, u, damping) + b * hvp(params, examples, v, damping)
        assert np.allclose(left, right, atol=1e-9)
        hu = hvp(params, examples, u, damping)
        hv = hvp(params, examples, v, damping)
        assert float(u @ hv) == pytest.approx(float(v @ hu), abs=1e-9 * (1 + abs(float(u @ hv))))

    def test_positive_definite_with_l2(self):
        params, examples = random_instance(11, n=6, dims=6, l2_lambda=0.3)
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = rng.standard_normal(params.dim)
            quad = float(v @ hvp(params, examples, v, damping=0.0))
            assert quad >= 0.3 * float(v @ v) - 1e-9

    def test_dimension_mismatch(self, small_instance):
        params, examples = small_instance
        with pytest.raises(DimensionMismatch):
            hvp(params, examples, np.zeros(3))


class TestTrain:
    def test_separable_two_points_reach_perfect_accuracy(self):
        hyper = make_hyper(l2_lambda=0.1)
        data = [
            Example(id=0, text="good great", label=1),
            Example(id=1, text="bad awful", label=0),
        ]
        params = train(data, hyper)
        assert evaluate(params, data)["accuracy"] == 1.0

    def test_deterministic_given_seed(self):
        hyper = make_hyper()
        data = [
            Example(id=0, text="good great", label=1),
            Example(id=1, text="bad awful", label=0),
            Example(id=2, text="fine good", label=1),
            Example(id=3, text="dull bad", label=0),
        ]
        a = train(data, hyper)
        b = train(data, hyper)
        assert np.array_equal(a.weights, b.weights)

    def test_empty_dataset_errors(self):
        with pytest.raises(DatasetError):
            train([], make_hyper())

    def test_missing_class_errors(self):
        with pytest.raises(DatasetError):
            train([Example(id=0, text="good", label=1)], make_hyper())

    def test_gradient_small_at_optimum(self):
        hyper = make_hyper(l2_lambda=0.05)
        _, data = random_instance(5, n=20)
        params = train(data, hyper)
        g = sum(grad_loss(params, ex, CE_SPEC) for ex in data) / len(data)
        g = g + hyper.l2_lambda * params.weights
        assert float(np.max(np.abs(g))) <= 1e-6

    def test_objective_nonincreasing_over_iterations(self):
        # L-BFGS-B line search only ever accepts descent steps; verify on a
        # recorded trace of the training objective.
        from scipy.optimize import minimize  # noqa: F401  (documentation import)
        from progen.model import design_matrix
        from scipy.special import logsumexp

        hyper = make_hyper(l2_lambda=0.01)
        _, data = random_instance(9, n=24)
        X, y = design_matrix(data, hyper.feature)
        rows = np.arange(len(data))

        def objective_value(w):
            W = w[: hyper.feature.dims * 2].reshape(hyper.feature.dims, 2)
            b = w[hyper.feature.dims * 2 :]
            logits = X @ W + b
            return float(np.mean(logsumexp(logits, axis=1) - logits[rows, y])) + (
                0.5 * hyper.l2_lambda * float(w @ w)
            )

        trace = []
        import scipy.optimize

        original = scipy.optimize.minimize

        def wrapped(fun, x0, **kwargs):
            kwargs["callback"] = lambda xk: trace.append(objective_value(xk))
            return original(fun, x0, **kwargs)

        scipy.optimize.minimize = wrapped
        import progen.model as model_module

        saved = model_module.minimize
        model_module.minimize = wrapped
        try:
            train(data, hyper)
        finally:
            model_module.minimize = saved
            scipy.optimize.minimize = original
        assert len(trace) >= 2
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


class TestEvaluate:
    def test_perfect_model(self):
        hyper = make_hyper(l2_lambda=0.01)
        data = [
            Example(id=0, text="good great", label=1),
            Example(id=1, text="bad awful", label=0),
        ]
        params = train(data, hyper)
        assert evaluate(params, data)["accuracy"] == 1.0

    def test_zero_weight_model_ties_break_low(self):
        cfg = FeatureConfig(dims=8)
        params = zero_params(2, 0.0, cfg)
        data = [
            Example(id=0, text="good", label=0),
            Example(id=1, text="bad", label=1),
            Example(id=2, text="fine", label=0),
            Example(id=3, text="dull", label=1),
        ]
        stats = evaluate(params, data)
        assert stats["accuracy"] == 0.5  # every tie resolves to class 0
        assert stats["mean_ce_loss"] == pytest.approx(math.log(2), abs=1e-12)

    def test_accuracy_in_range(self):
        params, data = random_instance(21, n=30)
        assert 0.0 <= evaluate(params, data)["accuracy"] <= 1.0

    def test_empty_dataset_errors(self, small_instance):
        params, _ = small_instance
        with pytest.raises(DatasetError):
            evaluate(params, [])
