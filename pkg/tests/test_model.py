import math

import numpy as np
import pytest

from fedsim import Batch, ModelSpec, ShapeError, backward, evaluate, forward, param_init, sgd_step
from fedsim.model import layer_views

from conftest import FD_STEP, fd_safe_instance, finite_diff, naive_batch_loss, random_instance, rel_err


class TestModelSpec:
    def test_param_count(self):
        assert ModelSpec((2, 3, 2)).param_count == (2 + 1) * 3 + (3 + 1) * 2 == 17

    def test_mnist_sized_count(self):
        assert ModelSpec((784, 64, 10)).param_count == 785 * 64 + 65 * 10

    def test_rejects_short_and_nonpositive(self):
        with pytest.raises(ValueError):
            ModelSpec((5,))
        with pytest.raises(ValueError):
            ModelSpec((5, 0, 2))
        with pytest.raises(ValueError):
            ModelSpec((5, 2), activation="sigmoid")


class TestParamInit:
    def test_deterministic(self):
        a = param_init(ModelSpec((2, 2)), seed=7)
        b = param_init(ModelSpec((2, 2)), seed=7)
        assert np.array_equal(a, b)

    def test_seed_changes_weights(self):
        spec = ModelSpec((4, 3))
        assert not np.array_equal(param_init(spec, 0), param_init(spec, 1))

    def test_biases_zero(self):
        spec = ModelSpec((784, 64, 10))
        theta = param_init(spec, seed=0)
        for _w, b in layer_views(spec, theta):
            assert np.all(b == 0.0)

    def test_weight_scale(self):
        spec = ModelSpec((100, 50))
        theta = param_init(spec, seed=3)
        w, _ = layer_views(spec, theta)[0]
        assert np.abs(w).max() <= 1.0 / math.sqrt(100)


class TestForward:
    def test_uniform_softmax_loss(self):
        spec = ModelSpec((4, 10))
        theta = np.zeros(spec.param_count)
        batch = Batch(np.ones((1, 4)), [3])
        _, loss = forward(spec, theta, batch)
        assert loss == pytest.approx(math.log(10), abs=1e-12)

    def test_identical_samples_mean(self):
        rng = np.random.default_rng(0)
        spec, theta, _ = random_instance(rng)
        x = rng.normal(size=(1, spec.input_dim))
        single = Batch(x, [1])
        repeated = Batch(np.repeat(x, 5, axis=0), [1] * 5)
        _, l1 = forward(spec, theta, single)
        _, l5 = forward(spec, theta, repeated)
        assert l5 == pytest.approx(l1, rel=1e-14)

    def test_matches_naive_loop_reference(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            spec, theta, batch = random_instance(rng)
            _, loss = forward(spec, theta, batch)
            assert abs(loss - naive_batch_loss(spec, theta, batch)) < 1e-12

    def test_finite_for_extreme_parameters(self):
        rng = np.random.default_rng(5)
        for act in ("relu", "tanh"):
            spec = ModelSpec((6, 5, 4), act)
            theta = rng.choice([-50.0, 50.0], size=spec.param_count)
            batch = Batch(rng.normal(size=(4, 6)), rng.integers(0, 4, 4))
            _, loss = forward(spec, theta, batch)
            grad = backward(spec, theta, batch)
            assert math.isfinite(loss)
            assert np.all(np.isfinite(grad))

    def test_shape_errors_name_dimension(self):
        spec = ModelSpec((4, 3))
        theta = param_init(spec, 0)
        with pytest.raises(ShapeError, match="input dim 5"):
            forward(spec, theta, Batch(np.zeros((2, 5)), [0, 1]))
        with pytest.raises(ShapeError, match="length"):
            forward(spec, theta[:-1], Batch(np.zeros((2, 4)), [0, 1]))
        with pytest.raises(ShapeError, match="labels"):
            forward(spec, theta, Batch(np.zeros((2, 4)), [0, 1, 2]))
        with pytest.raises(ShapeError, match=r"\[0, 3\)"):
            forward(spec, theta, Batch(np.zeros((2, 4)), [0, 3]))

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        spec, theta, batch = random_instance(rng)
        l1, l2 = forward(spec, theta, batch)[1], forward(spec, theta, batch)[1]
        assert l1 == l2
        assert np.array_equal(backward(spec, theta, batch), backward(spec, theta, batch))


class TestBackward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            spec, theta, batch = fd_safe_instance(rng)
            grad = backward(spec, theta, batch)
            coords = rng.choice(spec.param_count, size=min(20, spec.param_count), replace=False)
            f = lambda t: forward(spec, t, batch)[1]
            for c in coords:
                fd = finite_diff(f, theta, int(c), FD_STEP)
                assert rel_err(grad[c], fd) < 1e-5

    def test_duplicated_batch_same_gradient(self):
        rng = np.random.default_rng(2)
        spec, theta, batch = random_instance(rng)
        doubled = Batch(
            np.concatenate([batch.inputs, batch.inputs]),
            np.concatenate([batch.labels, batch.labels]),
        )
        np.testing.assert_allclose(
            backward(spec, theta, batch), backward(spec, theta, doubled), rtol=1e-13, atol=1e-15
        )

    def test_balanced_zero_input_output_bias_grad(self):
        # zero inputs and zero weights make the softmax uniform; with labels
        # balanced over 4 classes (1/4 is exact in binary) the output bias
        # gradient cancels exactly
        spec = ModelSpec((3, 5, 4))
        theta = np.zeros(spec.param_count)
        batch = Batch(np.zeros((8, 3)), [0, 1, 2, 3, 0, 1, 2, 3])
        grad = backward(spec, theta, batch)
        _, out_bias = layer_views(spec, grad)[-1]
        assert np.all(out_bias == 0.0)
        fd = finite_diff(lambda t: forward(spec, t, batch)[1], theta, spec.param_count - 1)
        assert abs(fd) < 1e-10


class TestSgdStep:
    def test_zero_grad_identity(self):
        theta = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(sgd_step(theta, np.zeros(3), 0.5), theta)

    def test_unit_grad(self):
        out = sgd_step(np.zeros(4), np.ones(4), 0.01)
        assert np.all(out == -0.01)

    def test_two_steps_additive(self):
        rng = np.random.default_rng(3)
        theta = rng.normal(size=10)
        g1, g2 = rng.normal(size=10), rng.normal(size=10)
        stepped = sgd_step(sgd_step(theta, g1, 0.1), g2, 0.1)
        np.testing.assert_allclose(stepped, theta - 0.1 * (g1 + g2), rtol=1e-14, atol=1e-15)

    def test_rejects_mismatch_and_negative_lr(self):
        with pytest.raises(ShapeError):
            sgd_step(np.zeros(3), np.zeros(4), 0.1)
        with pytest.raises(ValueError):
            sgd_step(np.zeros(3), np.zeros(3), -0.1)

    def test_loss_decreases_along_gradient(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            spec, theta, batch = random_instance(rng)
            grad = backward(spec, theta, batch)
            if np.all(grad == 0.0):
                continue
            _, before = forward(spec, theta, batch)
            _, after = forward(spec, sgd_step(theta, grad, 1e-4), batch)
            assert after < before


class TestEvaluate:
    def test_constant_logits_all_correct(self):
        # zero weights, bias favoring class 2 -> every sample predicted as 2
        spec = ModelSpec((4, 3))
        theta = np.zeros(spec.param_count)
        layer_views(spec, theta)[0][1][2] = 1.0
        ds = Batch(np.random.default_rng(0).normal(size=(20, 4)), [2] * 20)
        assert evaluate(spec, theta, ds) == 1.0

    def test_tie_breaks_to_lowest_class(self):
        spec = ModelSpec((4, 3))
        theta = np.zeros(spec.param_count)  # all logits equal
        assert evaluate(spec, theta, Batch(np.ones((3, 4)), [0, 1, 2])) == pytest.approx(1 / 3)

    def test_chance_level_band(self):
        rng = np.random.default_rng(6)
        spec = ModelSpec((20, 10))
        theta = rng.normal(0.0, 0.5, spec.param_count)
        inputs = rng.normal(size=(10000, 20))
        labels = np.tile(np.arange(10), 1000)
        acc = evaluate(spec, theta, Batch(inputs, labels))
        assert 0.05 <= acc <= 0.15

    def test_single_sample(self):
        rng = np.random.default_rng(7)
        spec, theta, _ = random_instance(rng)
        acc = evaluate(spec, theta, Batch(rng.normal(size=(1, spec.input_dim)), [0]))
        assert acc in (0.0, 1.0)

    def test_empty_dataset_rejected(self):
        spec = ModelSpec((4, 3))
        with pytest.raises(ValueError):
            evaluate(spec, param_init(spec, 0), Batch(np.zeros((0, 4)), []))
