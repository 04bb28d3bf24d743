"""Verification of the temperature-scaled metric and prototype scoring."""

import math

import numpy as np
import pytest

from protorefine.autodiff import ParamSet, Tensor
from protorefine.metric import (TemperatureNet, classify, distance,
                                predict_labels, rescale)

from conftest import check_gradients


def constant_temperature_net(feature_dim: int, value: float,
                             floor: float = 1e-3) -> tuple[ParamSet, TemperatureNet]:
    """Net with zeroed weights and output bias solving softplus(b) + floor = value."""
    params = ParamSet()
    net = TemperatureNet(params, feature_dim, hidden=(6, 4), floor=floor,
                         rng=np.random.default_rng(0))
    for _, t in params.items():
        t.data[...] = 0.0
    net.l3.b.data[...] = math.log(math.expm1(value - floor))
    return params, net


def distance_loops(x1, x2, net_params, hidden, floor) -> float:
    """Pure-python evaluation of the full distance formula (oracle)."""
    def forward_scalar_net(x):
        w1, b1 = net_params["temperature.l1.w"], net_params["temperature.l1.b"]
        w2, b2 = net_params["temperature.l2.w"], net_params["temperature.l2.b"]
        w3, b3 = net_params["temperature.l3.w"], net_params["temperature.l3.b"]
        h1 = [max(0.0, sum(x[i] * w1[i][j] for i in range(len(x))) + b1[j])
              for j in range(hidden[0])]
        h2 = [max(0.0, sum(h1[i] * w2[i][j] for i in range(hidden[0])) + b2[j])
              for j in range(hidden[1])]
        out = sum(h2[i] * w3[i][0] for i in range(hidden[1])) + b3[0]
        return math.log1p(math.exp(out)) if out < 30 else out

    def transform(x):
        norm = math.sqrt(sum(v * v for v in x))
        g = forward_scalar_net(x) + floor
        return [v / (norm * g) for v in x]

    z1, z2 = transform(list(x1)), transform(list(x2))
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(z1, z2)))


class TestTemperatureNet:
    def test_constant_net_value(self, rng):
        _, net = constant_temperature_net(5, 0.7)
        x = Tensor(rng.normal(size=(9, 5)))
        np.testing.assert_allclose(net(x).data, 0.7, atol=1e-12)

    def test_strictly_positive_on_random_inputs(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 6, hidden=(16, 8), floor=1e-3, rng=rng)
        for _ in range(20):
            x = Tensor(rng.normal(scale=5.0, size=(12, 6)))
            assert np.all(net(x).data >= 1e-3)

    def test_floor_validation(self, rng):
        with pytest.raises(ValueError, match="floor"):
            TemperatureNet(ParamSet(), 4, floor=0.0, rng=rng)

    def test_gradients(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 4, hidden=(10, 6), rng=rng)
        x = rng.normal(size=(5, 4))

        def loss_fn():
            return (net(Tensor(x)) ** 2.0).mean()

        check_gradients(params, loss_fn, n_points=50, rng=rng, tol=1e-4)


class TestDistance:
    def test_identical_inputs_zero(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 6, hidden=(8, 4), rng=rng)
        x = Tensor(rng.normal(size=6))
        assert distance(x, x, net).item() < 1e-12

    def test_unit_temperature_orthogonal_vectors(self):
        # g == 1: rescaled vectors are unit, so distance((1,0),(0,1)) = sqrt(2)
        _, net = constant_temperature_net(2, 1.0)
        d = distance(Tensor([1.0, 0.0]), Tensor([0.0, 1.0]), net)
        np.testing.assert_allclose(d.item(), math.sqrt(2.0), atol=1e-12)

    def test_scalar_loop_oracle(self, rng):
        params = ParamSet()
        hidden = (8, 5)
        net = TemperatureNet(params, 7, hidden=hidden, floor=1e-3, rng=rng)
        values = {k: t.data.tolist() for k, t in params.items()}
        for _ in range(10):
            x1, x2 = rng.normal(size=7), rng.normal(size=7)
            got = distance(Tensor(x1), Tensor(x2), net).item()
            want = distance_loops(x1, x2, values, hidden, 1e-3)
            np.testing.assert_allclose(got, want, atol=1e-10)

    def test_symmetry(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 5, hidden=(8, 4), rng=rng)
        for _ in range(10):
            a, b = Tensor(rng.normal(size=5)), Tensor(rng.normal(size=5))
            np.testing.assert_allclose(distance(a, b, net).item(),
                                       distance(b, a, net).item(), atol=1e-12)

    def test_triangle_inequality(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 4, hidden=(8, 4), rng=rng)
        for _ in range(25):
            a, b, c = (Tensor(rng.normal(size=4)) for _ in range(3))
            dab = distance(a, b, net).item()
            dbc = distance(b, c, net).item()
            dac = distance(a, c, net).item()
            assert dac <= dab + dbc + 1e-12

    def test_zero_norm_rejected(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 3, hidden=(4, 4), rng=rng)
        with pytest.raises(ValueError, match="zero-norm"):
            distance(Tensor([0.0, 0.0, 0.0]), Tensor([1.0, 0.0, 0.0]), net)


class TestClassify:
    def test_rows_are_distributions(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 6, hidden=(8, 4), rng=rng)
        feats = Tensor(rng.normal(size=(7, 3, 6)))
        protos = Tensor(rng.normal(size=(4, 6)))
        scores = classify(feats, protos, net)
        assert scores.shape == (7, 3, 4)
        np.testing.assert_allclose(scores.data.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(scores.data >= 0.0)

    def test_equidistant_query_uniform_scores(self):
        _, net = constant_temperature_net(3, 1.0)
        protos = Tensor(np.eye(3))
        query = Tensor(np.full((1, 1, 3), 1.0 / math.sqrt(3.0)))
        scores = classify(query, protos, net)
        np.testing.assert_allclose(scores.data, 1.0 / 3.0, atol=1e-12)

    def test_two_way_chord_formula(self):
        # unit temperature: rescaled points live on the unit circle, so
        # score = softmax(-chord) with chord(p, x) = 2 sin(|dtheta| / 2)
        _, net = constant_temperature_net(2, 1.0)
        theta_p = np.array([0.0, np.pi / 2])
        protos = Tensor(np.stack([np.cos(theta_p), np.sin(theta_p)], axis=1))
        theta_x = 0.3
        query = Tensor(np.array([[[np.cos(theta_x), np.sin(theta_x)]]]))
        scores = classify(query, protos, net).data[0, 0]
        chords = 2.0 * np.sin(np.abs(theta_x - theta_p) / 2.0)
        expected = np.exp(-chords) / np.exp(-chords).sum()
        np.testing.assert_allclose(scores, expected, atol=1e-12)

    def test_argmax_is_nearest_prototype(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 5, hidden=(8, 4), rng=rng)
        for _ in range(10):
            feats = Tensor(rng.normal(size=(6, 1, 5)))
            protos = Tensor(rng.normal(size=(4, 5)))
            scores = classify(feats, protos, net).data[:, 0, :]
            z = rescale(Tensor(np.vstack([feats.data.reshape(6, 5), protos.data])), net).data
            zq, zp = z[:6], z[6:]
            dists = np.linalg.norm(zq[:, None, :] - zp[None, :, :], axis=2)
            np.testing.assert_array_equal(np.argmax(scores, axis=1),
                                          np.argmin(dists, axis=1))

    def test_doubling_constant_temperature_preserves_argmax(self, rng):
        _, net1 = constant_temperature_net(6, 0.8)
        _, net2 = constant_temperature_net(6, 1.6)
        for _ in range(10):
            feats = Tensor(rng.normal(size=(8, 1, 6)))
            protos = Tensor(rng.normal(size=(5, 6)))
            s1 = classify(feats, protos, net1).data[:, 0, :]
            s2 = classify(feats, protos, net2).data[:, 0, :]
            np.testing.assert_array_equal(np.argmax(s1, axis=1), np.argmax(s2, axis=1))

    def test_gradients_through_classify(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 4, hidden=(8, 5), rng=rng)
        feats = rng.normal(size=(3, 2, 4))
        protos = rng.normal(size=(3, 4))
        labels = np.array([0, 1, 2])

        def loss_fn():
            scores = classify(Tensor(feats), Tensor(protos), net)
            picked = scores[np.arange(3), 0, labels]
            return -(picked.log().mean())

        check_gradients(params, loss_fn, n_points=50, rng=rng, tol=1e-4)

    def test_shape_errors(self, rng):
        params = ParamSet()
        net = TemperatureNet(params, 4, hidden=(6, 4), rng=rng)
        with pytest.raises(ValueError, match="features"):
            classify(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(2, 4))), net)
        with pytest.raises(ValueError, match="incompatible"):
            classify(Tensor(rng.normal(size=(3, 2, 4))),
                     Tensor(rng.normal(size=(2, 5))), net)


class TestPredictLabels:
    def test_ties_resolve_to_lowest_index(self):
        scores = np.array([[0.4, 0.4, 0.2], [0.2, 0.4, 0.4], [0.3, 0.3, 0.4]])
        np.testing.assert_array_equal(predict_labels(scores), [0, 1, 2])
