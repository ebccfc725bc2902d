"""Tests for the classifier, EMA pair and conditional VAE."""

import numpy as np
import pytest

from sslcalib.core.tensor import Tensor, backward, cross_entropy, one_hot
from sslcalib.nn import (
    Linear,
    MlpClassifier,
    ModelPair,
    VaeNet,
    cross_feature_forward,
    ema_update,
    mlp_forward,
    predict_proba,
    reparameterize,
    vae_decode,
    vae_encode,
)


@pytest.fixture
def model(rng):
    return MlpClassifier.init(2, 3, rng, hidden=(8, 6))


class TestMlpClassifier:
    def test_shapes_and_probabilities(self, model, rng):
        x = rng.normal(size=(5, 2))
        assert mlp_forward(model, Tensor(x)).shape == (5, 3)
        probs = predict_proba(model, x)
        assert probs.sum(axis=1) == pytest.approx(np.ones(5))

    def test_logistic_regression_without_hidden(self, rng):
        model = MlpClassifier.init(4, 2, rng, hidden=())
        assert model.backbone_parameters() == []
        assert model.features(Tensor(np.ones((1, 4)))).shape == (1, 4)

    def test_wrong_input_width(self, model):
        with pytest.raises(ValueError):
            model.features(Tensor(np.ones((2, 5))))

    def test_named_parameters_round_trip(self, model, rng):
        arrays = {k: v.data.copy() for k, v in model.named_parameters().items()}
        assert "clf.backbone.0.weight" in arrays and "clf.head.bias" in arrays
        other = MlpClassifier.init(2, 3, rng, hidden=(8, 6))
        other.load(arrays)
        x = rng.normal(size=(4, 2))
        np.testing.assert_array_equal(predict_proba(model, x), predict_proba(other, x))

    def test_load_rejects_wrong_shape(self, model):
        arrays = {k: v.data for k, v in model.named_parameters().items()}
        arrays["clf.head.weight"] = np.zeros((2, 2))
        with pytest.raises(ValueError):
            model.load(arrays)

    def test_dropout_only_in_train_mode(self, model, rng):
        x = Tensor(rng.normal(size=(3, 2)))
        eval_a = mlp_forward(model, x, dropout_rate=0.5, rng=rng).data
        eval_b = mlp_forward(model, x, dropout_rate=0.5, rng=rng).data
        np.testing.assert_array_equal(eval_a, eval_b)
        with pytest.raises(ValueError):
            mlp_forward(model, x, dropout_rate=0.5, train_mode=True, rng=None)

    def test_batch_of_one_matches_batch_of_eight(self, model, rng):
        x = rng.normal(size=(8, 2))
        logits = mlp_forward(model, Tensor(x)).data
        probs = predict_proba(model, x)
        for i in range(8):
            np.testing.assert_allclose(mlp_forward(model, Tensor(x[i:i + 1])).data[0], logits[i], rtol=0, atol=1e-12)
            np.testing.assert_allclose(predict_proba(model, x[i:i + 1])[0], probs[i], rtol=0, atol=1e-12)

    def test_training_reduces_loss(self, model, rng):
        x = rng.normal(size=(30, 2))
        y = (x[:, 0] > 0).astype(int)
        targets = one_hot(y, 3)

        def loss():
            return cross_entropy(mlp_forward(model, Tensor(x)), targets)

        before = loss().item()
        for _ in range(50):
            value = loss()
            backward(value)
            for p in model.parameters():
                p.data = p.data - 0.1 * p.grad
                p.grad = None
        assert loss().item() < before


class TestModelPair:
    def test_ema_starts_as_copy_and_is_frozen(self, model):
        pair = ModelPair.from_live(model)
        for live_p, ema_p in zip(pair.live.parameters(), pair.ema.parameters()):
            np.testing.assert_array_equal(live_p.data, ema_p.data)
            assert not ema_p.requires_grad
            assert live_p is not ema_p

    def test_ema_update_blend(self, model):
        pair = ModelPair.from_live(model, beta=0.25)
        old = [p.data.copy() for p in pair.ema.parameters()]
        for p in pair.live.parameters():
            p.data = p.data + 1.0
        ema_update(pair)
        for before, live_p, ema_p in zip(old, pair.live.parameters(), pair.ema.parameters()):
            np.testing.assert_allclose(ema_p.data, 0.25 * live_p.data + 0.75 * before)

    def test_beta_range(self, model):
        with pytest.raises(ValueError):
            ModelPair.from_live(model, beta=1.5)

    def test_cross_feature_predictions(self, model, rng):
        pair = ModelPair.from_live(model)
        x = Tensor(rng.normal(size=(4, 2)))
        y, y_ema = cross_feature_forward(pair, x)
        # identical weights: both crossings equal the plain prediction
        np.testing.assert_allclose(y.data, predict_proba(model, x.data))
        np.testing.assert_allclose(y_ema.data, y.data)
        pair.ema.head.bias.data = np.array([5.0, 0.0, 0.0])
        y, y_ema = cross_feature_forward(pair, x)
        assert np.all(y.data[:, 0] > y_ema.data[:, 0])

    def test_cross_feature_head_wiring(self, model, rng):
        pair = ModelPair.from_live(model)
        for p in pair.ema.parameters():
            p.data = p.data + rng.normal(scale=0.2, size=p.shape)
        x = Tensor(rng.normal(size=(6, 2)))
        y0, y_ema0 = cross_feature_forward(pair, x)

        pair.ema.head.weight.data = pair.ema.head.weight.data + rng.normal(size=pair.ema.head.weight.shape)
        y1, y_ema1 = cross_feature_forward(pair, x)
        assert not np.allclose(y1.data, y0.data)
        np.testing.assert_array_equal(y_ema1.data, y_ema0.data)

        pair.live.head.weight.data = pair.live.head.weight.data + rng.normal(size=pair.live.head.weight.shape)
        y2, y_ema2 = cross_feature_forward(pair, x)
        np.testing.assert_array_equal(y2.data, y1.data)
        assert not np.allclose(y_ema2.data, y_ema1.data)


class TestVae:
    @pytest.fixture
    def net(self, rng):
        return VaeNet.init(3, 2, rng, z_dim=4, hidden=(8, 6))

    def test_shapes(self, net, rng):
        c = np.full((5, 3), 1 / 3)
        x = rng.normal(size=(5, 2))
        mu, sigma = vae_encode(net, c, x)
        assert mu.shape == sigma.shape == (5, 4)
        assert np.all(sigma.data > 0)
        z = reparameterize(mu, sigma, rng.normal(size=(5, 4)))
        r = vae_decode(net, c, z, x)
        assert r.shape == (5,)
        assert np.all((r.data > 0) & (r.data < 1))

    def test_zero_output_starts_neutral(self, rng):
        net = VaeNet.init(2, 2, rng, z_dim=3, zero_output=True)
        c = np.array([[0.9, 0.1], [0.2, 0.8]])
        mu, sigma = vae_encode(net, c, np.zeros((2, 2)))
        np.testing.assert_allclose(mu.data, 0.0)
        np.testing.assert_allclose(sigma.data, 1.0)
        r = vae_decode(net, c, mu, np.zeros((2, 2)))
        np.testing.assert_allclose(r.data, 0.5)

    def test_rejects_non_simplex_confidence(self, net):
        with pytest.raises(ValueError):
            vae_encode(net, np.full((2, 3), 0.5), np.zeros((2, 2)))

    def test_reparameterize_shape_check(self):
        with pytest.raises(ValueError):
            reparameterize(Tensor(np.zeros((2, 3))), Tensor(np.ones((2, 3))), np.zeros((2, 2)))

    def test_named_parameters_cover_every_layer(self, net):
        names = net.named_parameters()
        assert len(names) == len(net.parameters())
        assert "vae.encoder.mu.weight" in names and "vae.decoder.out.bias" in names


class TestLinear:
    def test_zero_init(self, rng):
        layer = Linear.init(3, 2, rng, zero=True)
        assert not layer.weight.data.any()
        assert layer(Tensor(np.ones((4, 3)))).shape == (4, 2)
