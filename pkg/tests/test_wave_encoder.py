import numpy as np
import pytest

from lean import tensor as tc
from lean.errors import DimensionError
from lean.tensor import Param, Tape, Tensor
from lean.wave_encoder import (BiLstmLayer, encode, encode_array, init_bilstm,
                               lstm_cell_step, param_count,
                               param_count_formula)


def make_layers(input_size=6, hidden=4, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return [init_bilstm(input_size, hidden, rng, "wave/l0", dtype),
            init_bilstm(2 * hidden, hidden, rng, "wave/l1", dtype)]


class TestCellStep:
    def test_zero_weights_zero_state(self):
        w = Param(np.zeros((7, 12), dtype=np.float32), "w")
        b = Param(np.zeros(12, dtype=np.float32), "b")
        x = Tensor(np.ones((2, 4), dtype=np.float32))
        h0 = Tensor(np.zeros((2, 3), dtype=np.float32))
        h, c = lstm_cell_step(x, h0, h0, w, b)
        np.testing.assert_array_equal(h.data, np.zeros((2, 3)))

    def test_output_bounded(self):
        rng = np.random.default_rng(1)
        w = Param(rng.standard_normal((10, 16)).astype(np.float32) * 3, "w")
        b = Param(rng.standard_normal(16).astype(np.float32), "b")
        x = Tensor(rng.standard_normal((5, 6)).astype(np.float32) * 10)
        h0 = Tensor(np.zeros((5, 4), dtype=np.float32))
        h, _ = lstm_cell_step(x, h0, h0, w, b)
        assert np.all(np.abs(h.data) <= 1.0)

    def test_dimension_mismatch(self):
        w = Param(np.zeros((9, 12), dtype=np.float32), "w")
        b = Param(np.zeros(12, dtype=np.float32), "b")
        x = Tensor(np.zeros((1, 4), dtype=np.float32))
        h0 = Tensor(np.zeros((1, 3), dtype=np.float32))
        with pytest.raises(DimensionError):
            lstm_cell_step(x, h0, h0, w, b)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        kernel, bias = tc.lstm_kernel(rng, 3, 2, dtype=np.float64)
        w = Param(kernel, "w", dtype=np.float64)
        b = Param(bias, "b", dtype=np.float64)
        x = Tensor(rng.standard_normal((2, 3)))
        h0 = Tensor(np.zeros((2, 2), dtype=np.float64))

        def forward():
            h, c = lstm_cell_step(x, h0, h0, w, b)
            return tc.sum_all(tc.mul(h, h))

        assert tc.grad_check(forward, [w, b], tol=1e-6).passed


class TestEncode:
    def test_shape_contract(self):
        layers = make_layers(input_size=400, hidden=128, seed=5)
        seq = np.random.default_rng(0).uniform(-1, 1, (40, 400)).astype(np.float32)
        h_matrix, context = encode_array(seq, layers)
        assert h_matrix.shape == (40, 256)
        assert context.shape == (256,)
        # context = concat(last forward state, first-row backward state)
        np.testing.assert_array_equal(context[:128], h_matrix[-1, :128])
        np.testing.assert_array_equal(context[128:], h_matrix[0, 128:])

    def test_hidden_strictly_inside_unit_box(self):
        layers = make_layers(seed=3)
        seq = np.random.default_rng(1).uniform(-1, 1, (9, 6)).astype(np.float32)
        h_matrix, _ = encode_array(seq, layers)
        assert np.all(np.abs(h_matrix) < 1.0)

    def test_deterministic(self):
        layers = make_layers(seed=4)
        seq = np.random.default_rng(2).uniform(-1, 1, (7, 6)).astype(np.float32)
        a, ca = encode_array(seq, layers)
        b, cb = encode_array(seq, layers)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(ca, cb)

    def test_single_timestep_context_equals_row(self):
        layers = make_layers(seed=6)
        seq = np.random.default_rng(3).uniform(-1, 1, (1, 6)).astype(np.float32)
        h_matrix, context = encode_array(seq, layers)
        assert h_matrix.shape[0] == 1
        np.testing.assert_array_equal(context, h_matrix[0])

    def test_reversal_symmetry(self):
        """Reversing the input while swapping each layer's direction params
        reproduces the reversed hidden matrix with halves exchanged. Layer 2
        sees half-swapped inputs, so its kernels swap input-row blocks too."""
        layers = make_layers(seed=7)
        hidden = layers[0].hidden

        def swap_input_halves(param):
            w = param.data.copy()
            w[:hidden], w[hidden:2 * hidden] = (param.data[hidden:2 * hidden],
                                                param.data[:hidden])
            return Param(w, param.name)

        l0, l1 = layers
        swapped = [
            BiLstmLayer(l0.input_size, hidden, l0.bwd_w, l0.bwd_b,
                        l0.fwd_w, l0.fwd_b),
            BiLstmLayer(l1.input_size, hidden,
                        swap_input_halves(l1.bwd_w), l1.bwd_b,
                        swap_input_halves(l1.fwd_w), l1.fwd_b),
        ]
        seq = np.random.default_rng(4).uniform(-1, 1, (5, 6)).astype(np.float32)
        h_fwd, _ = encode_array(seq, layers)
        h_rev, _ = encode_array(seq[::-1].copy(), swapped)
        recovered = np.concatenate([h_rev[::-1, hidden:], h_rev[::-1, :hidden]],
                                   axis=1)
        np.testing.assert_allclose(recovered, h_fwd, atol=1e-6)

    def test_width_mismatch(self):
        layers = make_layers(input_size=6)
        with pytest.raises(DimensionError):
            encode_array(np.zeros((4, 7), dtype=np.float32), layers)


class TestParamCount:
    def test_paper_configuration(self):
        assert param_count_formula(400, 128) == 541_696
        assert param_count_formula(256, 128) == 394_240
        layers = make_layers(input_size=400, hidden=128, seed=0)
        assert param_count(layers) == 541_696 + 394_240 == 935_936

    def test_tiny_by_hand(self):
        assert param_count_formula(1, 1) == 2 * 4 * ((1 + 1) * 1 + 1)

    def test_superlinear_in_hidden(self):
        assert param_count_formula(400, 256) > 2 * param_count_formula(400, 128)

    def test_matches_tensor_enumeration(self):
        layers = make_layers(input_size=10, hidden=3, seed=1)
        manual = sum(p.data.size for layer in layers for p in layer.params())
        assert param_count(layers) == manual


class TestGradientFlow:
    def test_all_gate_blocks_receive_gradient(self):
        rng = np.random.default_rng(11)
        layers = make_layers(input_size=5, hidden=3, seed=11, dtype=np.float64)
        seq = rng.standard_normal((4, 5))
        rows = [Tensor(seq[t:t + 1]) for t in range(4)]
        with Tape() as tape:
            hs, context = encode(rows, layers)
            loss = tc.sum_all(tc.mul(context, context))
        tape.backward(loss)
        hidden = 3
        for layer in layers:
            for w in (layer.fwd_w, layer.bwd_w):
                for gate in range(4):
                    block = w.grad[:, gate * hidden:(gate + 1) * hidden]
                    assert np.linalg.norm(block) > 0, (w.name, gate)

    def test_full_encoder_gradcheck(self):
        layers = make_layers(input_size=4, hidden=2, seed=12, dtype=np.float64)
        seq = np.random.default_rng(13).standard_normal((3, 4))
        rows = [Tensor(seq[t:t + 1]) for t in range(3)]

        def forward():
            hs, context = encode(rows, layers)
            total = context
            for h in hs:
                total = tc.add(total, h)
            return tc.sum_all(tc.mul(total, total))

        params = [p for layer in layers for p in layer.params()]
        report = tc.grad_check(forward, params, tol=1e-6)
        assert report.passed, [(e.name, e.max_rel_err) for e in report.entries]
