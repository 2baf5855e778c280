import numpy as np
import pytest

from dsae.errors import ContractViolation, DegenerateEmbedding
from dsae.numcore import elementwise, grad_check, l2_normalize, matmul, softmax


def naive_matmul(a, b):
    """Triple-loop oracle, summation left-to-right over k."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), m), m)

    def test_zeros(self):
        out = matmul(np.zeros((2, 3)), np.arange(12.0).reshape(3, 4))
        np.testing.assert_array_equal(out, np.zeros((2, 4)))

    def test_known_product(self):
        # frozen from the triple-loop oracle
        out = matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(out, [[19.0, 22.0], [43.0, 50.0]])

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a = rng.standard_normal((rng.integers(1, 6), rng.integers(1, 6)))
            b = rng.standard_normal((a.shape[1], rng.integers(1, 6)))
            np.testing.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=0, atol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            a = rng.standard_normal((4, 5))
            b = rng.standard_normal((5, 6))
            c = rng.standard_normal((6, 3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            err = np.linalg.norm(left - right) / np.linalg.norm(left)
            assert err < 1e-9


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)

    def test_single_element(self):
        for c in (-17.0, 0.0, 300.0):
            np.testing.assert_array_equal(softmax([c]), [1.0])

    def test_shift_invariance(self):
        v = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(softmax(v + 100.0), softmax(v), atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            v = rng.standard_normal((4, 7)) * rng.uniform(0.1, 50)
            out = softmax(v, axis=1)
            assert out.min() >= 0.0 and out.max() <= 1.0
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_random_shift_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            v = rng.standard_normal(6)
            c = rng.uniform(-200, 200)
            np.testing.assert_allclose(softmax(v + c), softmax(v), atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            softmax([])


class TestElementwise:
    def test_relu(self):
        np.testing.assert_array_equal(elementwise([-1.0, 0.0, 2.0], "relu"), [0.0, 0.0, 2.0])

    def test_sigmoid_center(self):
        np.testing.assert_array_equal(elementwise([0.0], "sigmoid"), [0.5])

    def test_tanh_origin(self):
        np.testing.assert_array_equal(elementwise([0.0], "tanh"), [0.0])

    def test_stable_at_large_inputs(self):
        out = elementwise([700.0, -700.0], "sigmoid")
        assert np.all(np.isfinite(out))
        out = elementwise([700.0, -700.0], "tanh")
        np.testing.assert_allclose(out, [1.0, -1.0])

    def test_unknown_function(self):
        with pytest.raises(ContractViolation):
            elementwise([1.0], "softplus")


class TestL2Normalize:
    def test_three_four_five(self):
        # hand oracle: norm of [3,4] is 5
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)

    def test_unit_vector_unchanged(self):
        v = np.array([1.0, 0.0, 0.0])
        np.testing.assert_array_equal(l2_normalize(v), v)

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateEmbedding):
            l2_normalize([0.0, 0.0])

    def test_unit_norm_and_scale_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            v = rng.standard_normal(8)
            lam = rng.uniform(1e-3, 1e3)
            out = l2_normalize(v)
            assert abs(np.linalg.norm(out) - 1.0) <= 1e-12
            np.testing.assert_allclose(l2_normalize(lam * v), out, atol=1e-12)


class TestGradCheck:
    def test_square_function(self):
        params = {"x": np.array([3.0])}

        def loss(p):
            return float(p["x"][0] ** 2), {"x": 2.0 * p["x"]}

        report = grad_check(loss, params, eps=1e-5, tol=1e-4)
        assert report.passed
        assert report.checked == 1

    def test_constant_loss(self):
        params = {"x": np.arange(5.0)}

        def loss(p):
            return 1.0, {"x": np.zeros(5)}

        report = grad_check(loss, params, eps=1e-5, tol=1e-4)
        assert report.passed
        assert report.max_rel_error == 0.0

    def test_wrong_gradient_fails(self):
        params = {"x": np.array([2.0])}

        def loss(p):
            return float(p["x"][0] ** 2), {"x": 3.0 * p["x"]}  # wrong slope

        assert not grad_check(loss, params).passed

    def test_non_finite_loss_reported(self):
        params = {"x": np.array([1.0])}

        def loss(p):
            x = float(p["x"][0])
            if x != 1.0:
                return float("nan"), {"x": np.zeros(1)}
            return 1.0, {"x": np.zeros(1)}

        report = grad_check(loss, params)
        assert not report.passed
        assert report.failures and report.failures[0][0] == "x"

    def test_eps_range_enforced(self):
        with pytest.raises(ContractViolation):
            grad_check(lambda p: (0.0, {"x": np.zeros(1)}), {"x": np.zeros(1)}, eps=0.5)

    def test_sampling_covers_all_small_params(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((3, 4))

        def loss(p):
            return float((p["w"] * a).sum()), {"w": a.copy()}

        report = grad_check(loss, {"w": rng.standard_normal((3, 4))})
        assert report.checked == 12
        assert report.passed
