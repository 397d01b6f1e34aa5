from __future__ import annotations

import math

import numpy as np
import pytest

from tests.conftest import central_difference
from xmoco.errors import DegenerateEmbeddingError, NonFiniteError, ShapeError
from xmoco.numkit import ParamSet, Tensor, backward, concat, l2_normalize, linear, logsumexp, ordered_matmul, relu, total


class TestOrderedMatmul:
    def test_matches_numpy(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
        np.testing.assert_allclose(ordered_matmul(a, b), a @ b, rtol=1e-12, atol=1e-12)

    def test_rows_are_independent(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((9, 6)), rng.standard_normal((6, 4))
        batched = ordered_matmul(a, b)
        for i in range(len(a)):
            assert np.array_equal(batched[i], ordered_matmul(a[i : i + 1], b)[0])

    def test_rejects_nonconforming(self):
        with pytest.raises(ShapeError):
            ordered_matmul(np.zeros((2, 3)), np.zeros((4, 2)))


class TestOps:
    def test_linear_vector_and_batch_agree(self):
        rng = np.random.default_rng(2)
        w, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
        x = rng.standard_normal((2, 4))
        batch = linear(x, w, b).data
        np.testing.assert_allclose(batch[1], linear(x[1], w, b).data, rtol=0, atol=1e-15)

    def test_linear_is_affine(self):
        rng = np.random.default_rng(4)
        w, b = rng.standard_normal((3, 5)), rng.standard_normal(3)
        x, y = rng.standard_normal(5), rng.standard_normal(5)
        for alpha, beta in ((2.0, -0.5), (0.3, 0.7), (-1.5, 4.0)):
            combined = linear(alpha * x + beta * y, w, b).data
            expected = alpha * linear(x, w, b).data + beta * linear(y, w, b).data - (alpha + beta - 1.0) * b
            np.testing.assert_allclose(combined, expected, rtol=0, atol=1e-12)

    def test_l2_normalize_ignores_positive_scale(self):
        v = np.random.default_rng(5).standard_normal((4, 6))
        unit = l2_normalize(v).data
        for c in (1e-3, 0.5, 7.0, 1e4):
            np.testing.assert_allclose(l2_normalize(c * v).data, unit, rtol=0, atol=1e-12)

    def test_linear_shape_error(self):
        with pytest.raises(ShapeError):
            linear(np.zeros(5), np.zeros((3, 4)), np.zeros(3))

    def test_relu(self):
        np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])

    def test_l2_normalize_rows(self):
        out = l2_normalize(np.array([[3.0, 4.0], [0.0, 2.0]])).data
        np.testing.assert_allclose(out, [[0.6, 0.8], [0.0, 1.0]])

    def test_l2_normalize_degenerate_reports_row(self):
        with pytest.raises(DegenerateEmbeddingError) as info:
            l2_normalize(np.array([[1.0, 0.0], [0.0, 0.0]]))
        assert info.value.index == 1

    def test_logsumexp_single_element_is_exact(self):
        x = np.array([[0.123456789], [-3.5]])
        np.testing.assert_array_equal(logsumexp(x, axis=1).data, x[:, 0])

    def test_logsumexp_is_stable(self):
        out = logsumexp(np.array([1000.0, 1000.0])).item()
        assert out == pytest.approx(1000.0 + math.log(2.0))

    def test_non_finite_result_raises(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([1.0])) / Tensor(np.array([0.0]))


class TestBackward:
    def test_gradient_of_normalized_linear(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 3))
        target = rng.standard_normal((4, 2))
        params = ParamSet({"w": rng.standard_normal((2, 3)), "b": rng.standard_normal(2)})

        def loss(leaves):
            z = l2_normalize(relu(linear(Tensor(x), leaves["w"], leaves["b"])) + 0.1)
            return total(z * Tensor(target))

        grads = backward(loss, params)

        def as_value(name):
            def fn(value):
                changed = dict(params.items())
                changed[name] = value
                return loss({k: Tensor(v) for k, v in changed.items()}).item()

            return fn

        for name in params:
            numeric = central_difference(as_value(name), np.array(params[name]))
            np.testing.assert_allclose(grads[name], numeric, rtol=1e-5, atol=1e-8)

    def test_gradient_through_concat_and_logsumexp(self):
        rng = np.random.default_rng(4)
        params = ParamSet({"u": rng.standard_normal((3, 1)), "v": rng.standard_normal((3, 2))})

        def loss(leaves):
            return total(logsumexp(concat([leaves["u"], leaves["v"]], axis=1), axis=1) - leaves["u"] * 2.0)

        grads = backward(loss, params)
        for name in params:

            def fn(value, name=name):
                changed = {k: Tensor(v) for k, v in params.items()}
                changed[name] = Tensor(value)
                return loss(changed).item()

            np.testing.assert_allclose(grads[name], central_difference(fn, np.array(params[name])), rtol=1e-6, atol=1e-9)

    def test_untouched_parameters_get_zero(self):
        params = ParamSet({"used": np.ones(2), "unused": np.ones(3)})
        grads = backward(lambda leaves: total(leaves["used"] * leaves["used"]), params)
        np.testing.assert_array_equal(grads["unused"], np.zeros(3))
        np.testing.assert_array_equal(grads["used"], [2.0, 2.0])

    def test_backward_needs_scalar(self):
        leaf = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            (leaf * 2.0).backward()


class TestParamSet:
    def test_iterates_in_name_order_and_is_read_only(self):
        params = ParamSet({"b": np.zeros(1), "a": np.ones(2)})
        assert list(params) == ["a", "b"]
        with pytest.raises(ValueError, match="read-only"):
            params["a"][0] = 5.0

    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            ParamSet({"w": np.array([np.nan])})

    def test_layout_mismatch(self):
        params = ParamSet({"w": np.zeros((2, 2))})
        with pytest.raises(ShapeError):
            params.with_tensors({"w": np.zeros(4)})
        with pytest.raises(ShapeError):
            params.with_tensors({"v": np.zeros((2, 2))})

    def test_zip_map_and_counts(self):
        params = ParamSet({"w": np.full((2, 3), 2.0), "b": np.ones(2)})
        doubled = params.zip_map(params, lambda x, y: x + y)
        np.testing.assert_array_equal(doubled["w"], np.full((2, 3), 4.0))
        assert params.num_values() == 8
        assert params.prefixed("q/").keys() == {"q/w", "q/b"}


class TestWorkedExamples:
    def test_linear_examples(self):
        np.testing.assert_array_equal(linear([3.0, 4.0], np.eye(2), np.zeros(2)).data, [3.0, 4.0])
        np.testing.assert_array_equal(linear([5.0, -2.0], np.zeros((2, 2)), [1.0, 2.0]).data, [1.0, 2.0])
        np.testing.assert_array_equal(linear([1.0, 1.0], [[1.0, 2.0], [3.0, 4.0]], np.zeros(2)).data, [3.0, 7.0])

    def test_relu_examples(self):
        np.testing.assert_array_equal(relu([-3.0, -0.5]).data, [0.0, 0.0])
        np.testing.assert_array_equal(relu([0.5, 2.0]).data, [0.5, 2.0])

    def test_normalize_examples(self):
        unit = np.array([0.6, 0.8])
        np.testing.assert_allclose(l2_normalize(unit).data, unit, rtol=0, atol=1e-15)
        with pytest.raises(DegenerateEmbeddingError):
            l2_normalize([0.0, 0.0])

    def test_quadratic_gradient(self):
        grads = backward(lambda leaves: total(leaves["t"] * leaves["t"]), ParamSet({"t": [1.0, 2.0]}))
        np.testing.assert_array_equal(grads["t"], [2.0, 4.0])
