"""Verification of the embedding encoders."""

import numpy as np
import pytest

from protorefine.autodiff import ParamSet, Tensor
from protorefine.encoders import (IdentityEncoder, SmallMlpEncoder,
                                  build_encoder)

from conftest import check_gradients


class TestIdentityEncoder:
    def test_passthrough(self, rng):
        enc = IdentityEncoder(8)
        x = rng.normal(size=(5, 8))
        np.testing.assert_array_equal(enc.encode(x).data, x)

    def test_shape_validation(self, rng):
        enc = IdentityEncoder(8)
        with pytest.raises(ValueError, match="expects"):
            enc.encode(rng.normal(size=(5, 4)))
        with pytest.raises(ValueError, match="expects"):
            enc.encode(rng.normal(size=8))


class TestSmallMlpEncoder:
    def test_zeroed_parameters_give_zero_output(self, rng):
        params = ParamSet()
        enc = SmallMlpEncoder(params, (4, 4, 1), out_dim=6, hidden=(8, 8), rng=rng)
        for _, t in params.items():
            t.data[...] = 0.0
        img = rng.integers(0, 256, size=(3, 4, 4, 1), dtype=np.uint8)
        np.testing.assert_array_equal(enc.encode(img).data, np.zeros((3, 6)))

    def test_batch_equals_per_instance(self, rng):
        params = ParamSet()
        enc = SmallMlpEncoder(params, (4, 4, 3), out_dim=5, hidden=(16, 8), rng=rng)
        imgs = rng.integers(0, 256, size=(6, 4, 4, 3), dtype=np.uint8)
        batch = enc.encode(imgs).data
        singles = np.vstack([enc.encode(imgs[i:i + 1]).data for i in range(6)])
        np.testing.assert_allclose(batch, singles, atol=1e-12)

    def test_uint8_scaled_to_unit_range(self, rng):
        params = ParamSet()
        enc = SmallMlpEncoder(params, (2, 2, 1), out_dim=3, hidden=(4, 4), rng=rng)
        full = np.full((1, 2, 2, 1), 255, dtype=np.uint8)
        as_float = np.ones((1, 2, 2, 1), dtype=np.float64)
        np.testing.assert_allclose(enc.encode(full).data, enc.encode(as_float).data,
                                   atol=1e-12)

    def test_gradients_match_finite_differences(self, rng):
        params = ParamSet()
        enc = SmallMlpEncoder(params, (3, 3, 1), out_dim=4, hidden=(8, 6), rng=rng)
        imgs = rng.integers(0, 256, size=(4, 3, 3, 1), dtype=np.uint8)
        target = rng.normal(size=(4, 4))

        def loss_fn():
            diff = enc.encode(imgs) - Tensor(target)
            return (diff * diff).mean()

        check_gradients(params, loss_fn, n_points=60, rng=rng, tol=1e-4)

    def test_deterministic_given_seed(self):
        a = ParamSet()
        SmallMlpEncoder(a, (4, 4, 1), rng=np.random.default_rng(5))
        b = ParamSet()
        SmallMlpEncoder(b, (4, 4, 1), rng=np.random.default_rng(5))
        for name, t in a.items():
            np.testing.assert_array_equal(t.data, b[name].data)

    def test_input_shape_validation(self, rng):
        params = ParamSet()
        enc = SmallMlpEncoder(params, (4, 4, 1), rng=rng)
        with pytest.raises(ValueError, match="expects"):
            enc.encode(rng.integers(0, 256, size=(2, 5, 4, 1), dtype=np.uint8))


class TestBuildEncoder:
    def test_identity(self):
        enc = build_encoder("identity", ParamSet(), feature_dim=7)
        assert isinstance(enc, IdentityEncoder) and enc.out_dim == 7

    def test_mlp_requires_shape(self):
        with pytest.raises(ValueError, match="input_shape"):
            build_encoder("mlp", ParamSet(), feature_dim=8)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown encoder"):
            build_encoder("resnet", ParamSet(), feature_dim=8)
