import numpy as np
import pytest

from lean import extractor as ex
from lean import tensor as tc
from lean.errors import ConfigError, DimensionError, LoadError
from lean.extractor import (ExtractorConfig, forward_embed, init_extractor,
                            init_projection, load_weights, param_count,
                            project, projection_param_count, save_weights)
from lean.tensor import Param, Tape, Tensor


class TestConfig:
    def test_full_width_embedding(self):
        assert ExtractorConfig.mobilenet(1.0).embedding_dim == 1024

    def test_quarter_width_embedding(self):
        assert ExtractorConfig.mobilenet(0.25).embedding_dim == 256

    def test_too_small_rejected(self):
        with pytest.raises(ConfigError):
            ExtractorConfig(4, 2, ((4, 2),))

    def test_full_width_param_count(self):
        # conv weights + folded-BN biases at width 1.0
        count = param_count(ExtractorConfig.mobilenet(1.0))
        assert count == 3_195_456
        assert abs(count - 3.2e6) < 1e5


class TestForward:
    def test_zero_weights_zero_embedding(self):
        config = ExtractorConfig.small(64)
        weights = init_extractor(config, seed=0)
        for name in weights.arrays:
            weights.arrays[name] = np.zeros_like(weights.arrays[name])
        emb = forward_embed(np.zeros((96, 64), dtype=np.float32), weights)
        np.testing.assert_array_equal(emb, np.zeros(64))

    def test_embedding_shape_and_determinism(self):
        weights = init_extractor(ExtractorConfig.small(32), seed=3)
        patch = np.random.default_rng(0).standard_normal((96, 64)).astype(np.float32)
        a = forward_embed(patch, weights)
        b = forward_embed(patch, weights)
        assert a.shape == (32,)
        np.testing.assert_array_equal(a, b)

    def test_batched_matches_single(self):
        weights = init_extractor(ExtractorConfig.small(16), seed=1)
        rng = np.random.default_rng(7)
        patches = rng.standard_normal((3, 96, 64)).astype(np.float32)
        batched = forward_embed(patches, weights)
        for i in range(3):
            np.testing.assert_allclose(batched[i], forward_embed(patches[i],
                                                                 weights),
                                       rtol=1e-5, atol=1e-6)

    def test_constant_map_pool_invariance(self):
        # global average pooling: a spatially constant input with 1x1-like
        # behaviour yields the same embedding as any spatial permutation
        weights = init_extractor(ExtractorConfig.small(16), seed=2)
        patch = np.full((96, 64), 0.3, dtype=np.float32)
        emb1 = forward_embed(patch, weights)
        emb2 = forward_embed(patch.copy(), weights)
        np.testing.assert_array_equal(emb1, emb2)


class TestProjection:
    def test_identity_like_selection(self):
        w = Param(np.eye(8, 3, dtype=np.float32), "projection/w")
        b = Param(np.zeros(3, dtype=np.float32), "projection/b")
        e = np.arange(8, dtype=np.float32)
        out = project(e, w, b)
        np.testing.assert_allclose(out.data[0], e[:3])

    def test_paper_param_count(self):
        assert projection_param_count(1024, 256) == 262_400

    def test_dimension_mismatch(self):
        w = Param(np.zeros((8, 3), dtype=np.float32), "projection/w")
        b = Param(np.zeros(3, dtype=np.float32), "projection/b")
        with pytest.raises(DimensionError):
            project(np.zeros(9, dtype=np.float32), w, b)

    def test_gradient(self):
        rng = np.random.default_rng(0)
        w, b = init_projection(6, 4, rng, dtype=np.float64)
        e = np.random.default_rng(1).standard_normal((2, 6))

        def forward():
            return tc.sum_all(tc.tanh(project(e, w, b)))

        assert tc.grad_check(forward, [w, b], tol=1e-6).passed


class TestPersistence:
    def test_roundtrip_bit_identical(self, tmp_path):
        weights = init_extractor(ExtractorConfig.small(32), seed=11)
        path = tmp_path / "ext.bin"
        save_weights(weights, path)
        loaded = load_weights(path)
        assert loaded.config == weights.config
        for name, arr in weights.arrays.items():
            np.testing.assert_array_equal(loaded.arrays[name], arr)

    def test_wrong_magic_no_partial_state(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"WRONGMAG" + b"\x00" * 100)
        with pytest.raises(LoadError):
            load_weights(path)

    def test_shape_mismatch_names_layer(self, tmp_path):
        weights = init_extractor(ExtractorConfig.small(32), seed=11)
        weights.arrays["stem/w"] = np.zeros((3, 3, 1, 99), dtype=np.float32)
        path = tmp_path / "ext.bin"
        save_weights(weights, path)
        with pytest.raises(LoadError, match="stem/w"):
            load_weights(path)

    def test_file_size_accounting(self, tmp_path):
        weights = init_extractor(ExtractorConfig.small(32), seed=4)
        path = tmp_path / "ext.bin"
        save_weights(weights, path)
        n_params = weights.param_count()
        size = path.stat().st_size
        assert 4 * n_params < size < 4 * n_params + 2048


def test_frozen_stack_never_on_tape():
    weights = init_extractor(ExtractorConfig.small(16), seed=0)
    patch = np.zeros((96, 64), dtype=np.float32)
    with Tape() as tape:
        forward_embed(patch, weights)
    assert len(tape) == 0
