import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lean import tensor as tc
from lean.errors import ContractError, DimensionError, DomainError, NumericError
from lean.tensor import (AdamState, GradCheckReport, Param, Tape, Tensor,
                         adam_step, backward, bce_loss, concat, glorot_uniform,
                         grad_check, init_params, lstm_kernel, matmul, mul,
                         orthogonal, sigmoid, slice_cols, softmax, sum_all,
                         sum_axis1, tanh)


def fd_grad(f, x, h=1e-5):
    """Central finite differences of scalar f at flat float64 array x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = f()
        flat[i] = orig - h
        lm = f()
        flat[i] = orig
        g.reshape(-1)[i] = (lp - lm) / (2 * h)
    return g


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(a, b).data, b.data)

    def test_basis_selection(self):
        a = Tensor([[1.0, 0.0]])
        b = Tensor([[5.0], [7.0]])
        np.testing.assert_array_equal(matmul(a, b).data, [[5.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(0)
        a = Param(rng.standard_normal((3, 4)), "a", dtype=np.float64)
        b = Param(rng.standard_normal((4, 2)), "b", dtype=np.float64)

        def forward():
            return sum_all(tanh(matmul(a.value, b.value)))

        report = grad_check(forward, [a, b], tol=1e-6)
        assert report.passed, report.entries


class TestSoftmax:
    def test_symmetry(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_single_element(self):
        np.testing.assert_array_equal(softmax(Tensor([17.3])).data, [1.0])

    def test_stability_large_values(self):
        out = softmax(Tensor([1000.0, 0.0]))
        ref = np.exp([0.0, -1000.0]) / np.exp([0.0, -1000.0]).sum()  # 64-bit
        np.testing.assert_allclose(out.data, ref, atol=1e-12)
        assert np.all(np.isfinite(out.data))

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            softmax(Tensor(np.zeros(0)))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=16))
    def test_sums_to_one(self, xs):
        out = softmax(Tensor(xs, dtype=np.float64))
        assert abs(out.data.sum() - 1.0) <= 1e-6
        assert np.all(out.data > 0)

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=8),
           st.randoms(use_true_random=False))
    def test_permutation_equivariant(self, xs, rnd):
        perm = list(range(len(xs)))
        rnd.shuffle(perm)
        base = softmax(Tensor(xs, dtype=np.float64)).data
        permuted = softmax(Tensor([xs[i] for i in perm], dtype=np.float64)).data
        np.testing.assert_allclose(permuted, base[perm], atol=1e-12)


class TestBce:
    def test_perfect_prediction_near_zero(self):
        loss = bce_loss(Tensor([1.0 - 1e-7]), Tensor([1.0]))
        assert 0.0 <= loss.item() < 1e-6

    def test_half_scores(self):
        loss = bce_loss(Tensor([0.5, 0.5]), Tensor([1.0, 0.0]))
        assert loss.item() == pytest.approx(math.log(2.0), rel=1e-6)

    def test_confident_wrong(self):
        loss = bce_loss(Tensor([0.9]), Tensor([0.0]))
        assert loss.item() == pytest.approx(-math.log(0.1), rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            bce_loss(Tensor([0.5, 0.5]), Tensor([1.0]))

    @given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=8),
           st.lists(st.integers(0, 1), min_size=8, max_size=8))
    def test_nonnegative(self, scores, labels):
        labels = labels[:len(scores)]
        loss = bce_loss(Tensor(scores, dtype=np.float64),
                        Tensor([float(v) for v in labels], dtype=np.float64))
        assert loss.item() >= 0.0

    def test_gradient(self):
        p = Param([0.3, 0.8, 0.5], "p", dtype=np.float64)
        y = Tensor([1.0, 0.0, 1.0], dtype=np.float64)

        def forward():
            return bce_loss(sigmoid(p.value), y)

        assert grad_check(forward, [p], tol=1e-6).passed


class TestBackward:
    def test_sum_gives_ones(self):
        w = Param([1.0, 2.0, 3.0], "w")
        with Tape() as tape:
            loss = sum_all(w.value)
        backward(tape, loss)
        np.testing.assert_array_equal(w.grad, [1.0, 1.0, 1.0])

    def test_sigmoid_at_zero(self):
        x = Param([0.0], "x", dtype=np.float64)
        with Tape() as tape:
            loss = sum_all(sigmoid(x.value))
        backward(tape, loss)
        assert x.grad[0] == pytest.approx(0.25, abs=1e-12)

    def test_non_scalar_rejected(self):
        w = Param([1.0, 2.0], "w")
        with Tape() as tape:
            out = mul(w.value, w.value)
        with pytest.raises(ContractError):
            backward(tape, out)

    def test_frozen_param_grad_stays_zero(self):
        w = Param([1.0, 2.0], "w", trainable=False)
        u = Param([3.0, 4.0], "u")
        with Tape() as tape:
            loss = sum_all(mul(w.value, u.value))
        backward(tape, loss)
        np.testing.assert_array_equal(w.grad, [0.0, 0.0])
        np.testing.assert_array_equal(u.grad, [1.0, 2.0])

    def test_reused_tensor_accumulates(self):
        w = Param([2.0], "w", dtype=np.float64)
        with Tape() as tape:
            loss = sum_all(mul(w.value, w.value))  # d(w^2)/dw = 2w
        backward(tape, loss)
        assert w.grad[0] == pytest.approx(4.0)

    def test_concat_and_slice_roundtrip_grads(self):
        a = Param(np.ones((2, 3)), "a", dtype=np.float64)
        b = Param(np.ones((2, 2)), "b", dtype=np.float64)

        def forward():
            joined = concat([a.value, b.value], axis=1)
            return sum_all(mul(slice_cols(joined, 1, 4), slice_cols(joined, 1, 4)))

        assert grad_check(forward, [a, b], tol=1e-6).passed


class TestAdam:
    def test_first_step_magnitude(self):
        w = Param([0.0], "w")
        w.grad[...] = 1.0
        state = AdamState(lr=1e-4)
        adam_step(state, [w])
        assert w.data[0] == pytest.approx(-1e-4, abs=1e-10)
        np.testing.assert_array_equal(w.grad, [0.0])

    def test_frozen_param_unchanged(self):
        w = Param([5.0], "w", trainable=False)
        before = w.data.copy()
        state = AdamState(lr=0.1)
        adam_step(state, [w])
        np.testing.assert_array_equal(w.data, before)

    def test_identical_params_identical_updates(self):
        a = Param([1.0, -2.0], "a")
        b = Param([1.0, -2.0], "b")
        a.grad[...] = [0.5, -0.25]
        b.grad[...] = [0.5, -0.25]
        state = AdamState(lr=1e-3)
        adam_step(state, [a, b])
        np.testing.assert_array_equal(a.data, b.data)

    def test_nan_grad_rejected_with_name(self):
        w = Param([0.0], "bad_param")
        w.grad[...] = np.nan
        with pytest.raises(NumericError, match="bad_param"):
            adam_step(AdamState(), [w])


class TestInit:
    def test_seed_determinism(self):
        one = init_params({"kind": "lstm", "input": 12, "hidden": 8}, seed=42)
        two = init_params({"kind": "lstm", "input": 12, "hidden": 8}, seed=42)
        for key in one:
            np.testing.assert_array_equal(one[key], two[key])

    def test_glorot_bound(self):
        out = init_params({"kind": "dense", "in": 256, "out": 128}, seed=3)
        assert np.abs(out["w"]).max() <= math.sqrt(6.0 / 384)

    def test_orthogonal_square(self):
        q = orthogonal(np.random.default_rng(0), 128, 128, dtype=np.float64)
        np.testing.assert_allclose(q.T @ q, np.eye(128), atol=1e-5)

    def test_lstm_forget_bias(self):
        w, b = lstm_kernel(np.random.default_rng(1), 10, 4)
        np.testing.assert_array_equal(b[4:8], np.ones(4))
        assert np.all(b[:4] == 0) and np.all(b[8:] == 0)

    def test_zero_dim_rejected(self):
        with pytest.raises(DimensionError):
            init_params({"kind": "dense", "in": 0, "out": 4}, seed=0)


class TestGradCheck:
    def test_dense_layer_passes(self):
        rng = np.random.default_rng(7)
        w = Param(rng.standard_normal((5, 3)), "w", dtype=np.float64)
        b = Param(np.zeros(3), "b", dtype=np.float64)
        x = Tensor(rng.standard_normal((2, 5)), dtype=np.float64)
        y = Tensor(rng.integers(0, 2, size=(2, 3)).astype(np.float64))

        def forward():
            return bce_loss(sigmoid(tc.add(matmul(x, w.value), b.value)), y)

        report = grad_check(forward, [w, b], tol=1e-6)
        assert report.passed and report.max_rel_err <= 1e-6

    def test_corrupted_gradient_flagged(self):
        w = Param([0.7, -0.4], "w", dtype=np.float64)

        def double_grad(t):
            # op computing identity but reporting a 2x-too-large gradient
            return tc._make_out(t.data.copy(), (t,), lambda g: (2.0 * g,))

        def forward():
            return sum_all(mul(double_grad(w.value), w.value))

        report = grad_check(forward, [w], tol=1e-6)
        assert not report.passed

    def test_float32_rejected(self):
        w = Param([1.0], "w")
        with pytest.raises(ContractError):
            grad_check(lambda: sum_all(w.value), [w], tol=1e-4)


class TestStrictFinite:
    def test_nan_input_rejected(self):
        with pytest.raises(NumericError):
            Tensor([np.nan, 1.0])

    def test_toggle_restores(self):
        prev = tc.set_strict_finite(False)
        try:
            t = Tensor([np.inf])
            assert not np.isfinite(t.data[0])
        finally:
            tc.set_strict_finite(prev)


class TestDeterminism:
    def test_identical_seeds_identical_training_steps(self):
        def run():
            rng = np.random.default_rng(9)
            w = Param(glorot_uniform(rng, (4, 2), 4, 2), "w")
            x = Tensor(np.random.default_rng(1).standard_normal((3, 4)),
                       dtype=np.float32)
            y = Tensor(np.array([[1, 0], [0, 1], [1, 1]], dtype=np.float32))
            state = AdamState(lr=1e-2)
            for _ in range(5):
                with Tape() as tape:
                    loss = bce_loss(sigmoid(matmul(x, w.value)), y)
                backward(tape, loss)
                adam_step(state, [w])
            return w.data.copy()

        np.testing.assert_array_equal(run(), run())
