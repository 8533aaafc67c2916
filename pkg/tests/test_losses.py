import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from biganlab.losses import (
    ENCODER_PAIR,
    GENERATOR_PAIR,
    PairBatch,
    autoencoder_loss,
    bigan_losses,
    bigan_value,
    discriminator_loss,
    gan_losses,
    ge_inverse_loss,
    latent_regressor_loss,
    sigmoid_ce,
)
from biganlab.nn import build_preset, numeric_grad, param_grad_pairs, relative_error

LOG2 = np.log(2.0)


def small_d(kind="mnist_D_bigan", seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    D = build_preset(kind, latent_dim=3, data_dim=5, hidden_dim=6)
    for layer in D.layers:
        for key in layer.params:
            layer.params[key] = rng.normal(0, scale, layer.params[key].shape)
    return D, rng


def zero_logit_d():
    D, _ = small_d()
    head = D.layers[-1]
    head.params["W"][:] = 0.0
    head.params["b"][:] = 0.0
    return D


def pairs(rng, n=4):
    enc = PairBatch(rng.normal(size=(n, 5)), rng.normal(size=(n, 3)), ENCODER_PAIR)
    gen = PairBatch(rng.normal(size=(n, 5)), rng.normal(size=(n, 3)), GENERATOR_PAIR)
    return enc, gen


class TestSigmoidCE:
    def test_half_target(self):
        loss = sigmoid_ce(np.zeros(3), 0.5)
        assert loss.value == pytest.approx(LOG2, abs=1e-12)
        assert np.all(loss.grads["logits"] == 0)

    def test_saturated_no_overflow(self):
        assert sigmoid_ce(np.array([20.0]), 1.0).value < 1e-8
        assert np.isfinite(sigmoid_ce(np.array([1e4, -1e4]), np.array([0.0, 1.0])).value)

    def test_frozen_value(self):
        loss = sigmoid_ce(np.array([1.0, -2.0]), np.array([1.0, 0.0]))
        assert loss.value == pytest.approx(0.2200948492805977, abs=1e-12)

    def test_targets_out_of_range(self):
        with pytest.raises(ValueError):
            sigmoid_ce(np.zeros(2), np.array([0.0, 1.5]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(-30, 30)),
           arrays(np.float64, 6, elements=st.floats(0, 1)))
    def test_nonnegative(self, logits, targets):
        assert sigmoid_ce(logits, targets).value >= 0

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        logits, targets = rng.normal(size=7), rng.uniform(size=7)
        num = numeric_grad(lambda: sigmoid_ce(logits, targets).value, logits)
        assert relative_error(sigmoid_ce(logits, targets).grads["logits"], num) < 1e-6


class TestBiganValue:
    def test_zero_logits(self):
        assert bigan_value(np.zeros(4), np.zeros(4)) == pytest.approx(-2 * LOG2, abs=1e-12)

    def test_perfect_discrimination(self):
        assert bigan_value(np.array([60.0]), np.array([-60.0])) == pytest.approx(0.0, abs=1e-20)

    def test_frozen_value(self):
        assert bigan_value(np.array([1.0]), np.array([-1.0])) == pytest.approx(-0.6265233750364456, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 5, elements=st.floats(-20, 20)),
           arrays(np.float64, 5, elements=st.floats(-20, 20)))
    def test_identity_with_discriminator_loss(self, enc, gen):
        ce = sigmoid_ce(np.concatenate([enc, gen]), np.concatenate([np.ones(5), np.zeros(5)]))
        assert ce.value == pytest.approx(-0.5 * bigan_value(enc, gen), abs=1e-12)


class TestBiganLosses:
    def test_zero_logit_discriminator(self):
        D = zero_logit_d()
        enc, gen = pairs(np.random.default_rng(1))
        d_loss, ge_loss, logits = bigan_losses(D, enc, gen)
        assert np.all(logits == 0)
        assert d_loss.value == pytest.approx(LOG2, abs=1e-12)
        assert ge_loss.value == pytest.approx(LOG2, abs=1e-12)

    def test_label_swap_at_half(self):
        # at sigma = 1/2 the two logit gradients are exact negatives
        D = zero_logit_d()
        enc, gen = pairs(np.random.default_rng(2))
        n = len(enc.x)
        d = sigmoid_ce(np.zeros((2 * n, 1)), np.r_[np.ones(n), np.zeros(n)][:, None])
        g = sigmoid_ce(np.zeros((2 * n, 1)), np.r_[np.zeros(n), np.ones(n)][:, None])
        np.testing.assert_array_equal(d.grads["logits"], -g.grads["logits"])
        assert discriminator_loss(enc, gen, D).value == ge_inverse_loss(enc, gen, D).value

    def test_values_match_bigan_value(self):
        D, rng = small_d()
        enc, gen = pairs(rng)
        d_loss, ge_loss, logits = bigan_losses(D, enc, gen)
        assert d_loss.value == pytest.approx(-0.5 * bigan_value(logits[:4], logits[4:]), abs=1e-12)
        assert set(d_loss.grads) == {"D"}
        assert set(ge_loss.grads) == {"E", "G"}
        assert ge_loss.grads["E"].shape == enc.z.shape
        assert ge_loss.grads["G"].shape == gen.x.shape

    def test_discriminator_param_gradients(self):
        D, rng = small_d()
        enc, gen = pairs(rng)
        grads = discriminator_loss(enc, gen, D).grads["D"]
        for _, _, p, g in param_grad_pairs(D, grads):
            num = numeric_grad(lambda: discriminator_loss(enc, gen, D).value, p)
            assert relative_error(g, num) < 1e-4

    def test_encoder_gradient_through_composition(self):
        D, rng = small_d()
        E, _ = small_d("mnist_E", seed=3)
        G, _ = small_d("mnist_G", seed=4)
        x, z = rng.normal(size=(4, 5)), rng.uniform(-1, 1, size=(4, 3))

        def loss():
            enc = PairBatch(x, E.forward(x)[0], ENCODER_PAIR)
            gen = PairBatch(G.forward(z)[0], z, GENERATOR_PAIR)
            return ge_inverse_loss(enc, gen, D).value

        ex, e_tape = E.forward(x)
        gz, g_tape = G.forward(z)
        ge = ge_inverse_loss(PairBatch(x, ex, ENCODER_PAIR), PairBatch(gz, z, GENERATOR_PAIR), D)
        e_grads = E.backward(e_tape, ge.grads["E"])[0]
        g_grads = G.backward(g_tape, ge.grads["G"])[0]
        for net, grads in ((E, e_grads), (G, g_grads)):
            for _, _, p, g in param_grad_pairs(net, grads):
                assert relative_error(g, numeric_grad(loss, p)) < 1e-4

    def test_perfect_discriminator_keeps_signal(self):
        D = zero_logit_d()
        D.layers[-1].params["b"][:] = 30.0
        enc, gen = pairs(np.random.default_rng(0))
        d_loss, ge_loss, _ = bigan_losses(D, enc, gen)
        assert ge_loss.value > 10


class TestGanLosses:
    def test_zero_logits(self):
        D, rng = small_d("mnist_D_gan")
        D.layers[-1].params["W"][:] = 0
        D.layers[-1].params["b"][:] = 0
        d_loss, g_loss = gan_losses(rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), D)
        assert d_loss.value == pytest.approx(LOG2)
        assert g_loss.value == pytest.approx(LOG2)

    def test_generator_gradient(self):
        D, rng = small_d("mnist_D_gan")
        G, _ = small_d("mnist_G", seed=5)
        x, z = rng.normal(size=(4, 5)), rng.uniform(-1, 1, size=(4, 3))
        xg, tape = G.forward(z)
        _, g_loss = gan_losses(x, xg, D)
        grads = G.backward(tape, g_loss.grads["G"])[0]

        def loss():
            return gan_losses(x, G.forward(z)[0], D)[1].value

        for _, _, p, g in param_grad_pairs(G, grads):
            assert relative_error(g, numeric_grad(loss, p)) < 1e-4


class TestOtherLosses:
    def test_regressor_zero(self):
        assert latent_regressor_loss(np.zeros((2, 3)), np.zeros((2, 3))).value == pytest.approx(LOG2)

    def test_regressor_saturated(self):
        assert latent_regressor_loss(np.full((1, 2), 20.0), np.ones((1, 2))).value < 1e-8

    def test_regressor_frozen(self):
        loss = latent_regressor_loss(np.array([[-3.0, 3.0]]), np.array([[-1.0, 1.0]]))
        assert loss.value == pytest.approx(0.04858735157374206, abs=1e-12)
        assert set(loss.grads) == {"E"}

    def test_autoencoder_identity(self):
        x = np.arange(4.0)
        loss = autoencoder_loss(x, x, "l2")
        assert loss.value == 0 and np.all(loss.grads["x_hat"] == 0)

    def test_autoencoder_examples(self):
        x, x_hat = np.array([1.0, -1.0]), np.zeros(2)
        assert autoencoder_loss(x, x_hat, "l1").value == 1.0
        assert autoencoder_loss(x, x_hat, "l2").value == 1.0
        g = autoencoder_loss(np.zeros(2), np.array([0.5, -0.5]), "l1").grads["x_hat"]
        np.testing.assert_array_equal(g, [0.5, -0.5])  # sign(d) / 2 elements

    def test_autoencoder_l1_tie_subgradient(self):
        assert np.all(autoencoder_loss(np.ones(3), np.ones(3), "l1").grads["x_hat"] == 0)

    def test_autoencoder_bad_norm(self):
        with pytest.raises(ValueError):
            autoencoder_loss(np.zeros(1), np.zeros(1), "l3")
