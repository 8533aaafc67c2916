import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from biganlab.evaluation import (
    cosine_neighbors,
    extract_features,
    image_grid,
    nearest_indices,
    one_nn_accuracy,
    read_pgm,
    reconstruction_error,
    write_pgm,
)
from biganlab.training import TrainConfig, new_bundle, run


def bundle_for(kind, data_dim=16, **kw):
    cfg = TrainConfig(model_kind=kind, latent_dim=3, hidden_dim=8, epochs=1, batch_size=16, **kw)
    return new_bundle(cfg, data_dim)


def data(n=48, d=16, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=(n, d))


class TestFeatures:
    @pytest.mark.parametrize("kind,dim", [("bigan", 3), ("lr", 3), ("jlr", 3), ("ae_l1", 3), ("gan", 8)])
    def test_shapes(self, kind, dim):
        b = bundle_for(kind)
        run(b, data())
        assert extract_features(b, data(10)).shape == (10, dim)

    def test_deterministic_and_batch_invariant(self):
        b = bundle_for("gan")
        run(b, data())
        X = data(37, seed=1)
        full = extract_features(b, X)
        np.testing.assert_array_equal(full, extract_features(b, X))
        np.testing.assert_allclose(extract_features(b, X, batch_size=5), full, rtol=0, atol=1e-12)

    def test_gan_features_leave_generator_untouched(self):
        b = bundle_for("gan")
        run(b, data())
        before = [p.copy() for _, p in b.nets["G"].named_params()]
        extract_features(b, data(20))
        for p, (_, q) in zip(before, b.nets["G"].named_params()):
            np.testing.assert_array_equal(p, q)

    def test_gan_features_are_second_hidden_activations(self):
        b = bundle_for("gan")
        D = b.nets["D"].eval()
        X = data(4)
        h = X
        for layer in D.layers[: D.feature_index]:
            h = layer.forward(h, None, False)[0]
        np.testing.assert_array_equal(extract_features(b, X), h)
        kinds = [l.kind for l in D.layers[: D.feature_index]]
        assert kinds[-2:] == ["batch_norm", "activation"]
        assert h.shape == (4, 8)


class TestOneNN:
    def test_self(self):
        X = data(30)
        y = np.arange(30) % 3
        assert one_nn_accuracy(X, y, X, y) == 100.0

    def test_hand_example(self):
        train = np.array([[0.0, 0.0], [1.0, 1.0]])
        test = np.array([[0.1, 0.1], [0.9, 0.9]])
        assert one_nn_accuracy(train, ["A", "B"], test, ["A", "B"]) == 100.0

    def test_ties_go_to_lowest_index(self):
        train = np.array([[1.0], [-1.0], [1.0]])
        assert list(nearest_indices(train, np.array([[0.0], [1.0]]))) == [0, 0]

    def test_empty_train(self):
        with pytest.raises(ValueError):
            one_nn_accuracy(np.zeros((0, 2)), [], np.zeros((1, 2)), [0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        train, test = rng.normal(size=(60, 5)), rng.normal(size=(25, 5))
        brute = [int(np.argmin([np.sum((t - r) ** 2) for r in train])) for t in test]
        assert list(nearest_indices(train, test, block=7)) == brute

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_orthogonal_invariance(self, seed):
        rng = np.random.default_rng(seed)
        train, test = rng.normal(size=(40, 6)), rng.normal(size=(20, 6))
        ytr, yte = rng.integers(0, 3, 40), rng.integers(0, 3, 20)
        Q = ortho_group.rvs(6, random_state=seed % 2**31)
        assert one_nn_accuracy(train, ytr, test, yte) == one_nn_accuracy(train @ Q, ytr, test @ Q, yte)


class TestReconstruction:
    def test_untrained_zero_input(self):
        b = bundle_for("bigan")
        err = reconstruction_error(b, np.zeros((5, 16)))
        g = b.nets["G"].predict(b.nets["E"].predict(np.zeros((1, 16))))
        # zero biases at init send 0 to 0 through both nets
        assert np.isfinite(err) and err == pytest.approx(np.linalg.norm(g))

    def test_untrained_random_input(self):
        err = reconstruction_error(bundle_for("bigan"), data(5))
        assert np.isfinite(err) and err > 0

    def test_gan_has_no_reconstruction(self):
        with pytest.raises(ValueError):
            reconstruction_error(bundle_for("gan"), data(4))

    def test_perfect_inverse_pair(self):
        # linear toy: E = identity code, decoder = identity, so G(E(x)) = x
        from biganlab.nn import Activation, DenseNet
        b = bundle_for("ae_l2")
        b.nets["E"] = DenseNet([Activation("identity")])
        b.nets["A"] = DenseNet([Activation("identity")])
        assert reconstruction_error(b, data(6)) == 0.0


class TestCosine:
    def test_self_is_first(self):
        corpus = data(10, 4)
        idx, dist = cosine_neighbors(corpus[3], corpus, 2)
        assert idx[0, 0] == 3 and dist[0, 0] == pytest.approx(0, abs=1e-12)

    def test_scaled_copies(self):
        q = np.array([1.0, 2.0, -0.5])
        idx, dist = cosine_neighbors(q, np.stack([2 * q, -q, 0.5 * q]), 3)
        assert list(idx[0]) == [0, 2, 1]
        np.testing.assert_allclose(dist[0], [0, 0, 2], atol=1e-12)

    def test_zero_row(self):
        with pytest.raises(ValueError):
            cosine_neighbors(np.ones(3), np.zeros((2, 3)), 1)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        corpus, queries = rng.normal(size=(100, 50)), rng.normal(size=(10, 50))
        idx, _ = cosine_neighbors(queries, corpus, 5)
        for qi, q in enumerate(queries):
            d = []
            for ci, c in enumerate(corpus):
                d.append((1 - q @ c / np.sqrt(q @ q) / np.sqrt(c @ c), ci))
            assert [ci for _, ci in sorted(d)[:5]] == list(idx[qi])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_rescaling_invariance(self, seed):
        rng = np.random.default_rng(seed)
        corpus, queries = rng.normal(size=(30, 4)), rng.normal(size=(5, 4))
        idx, dist = cosine_neighbors(queries, corpus, 6)
        idx2, dist2 = cosine_neighbors(queries * rng.uniform(0.1, 10, (5, 1)),
                                       corpus * rng.uniform(0.1, 10, (30, 1)), 6)
        np.testing.assert_array_equal(idx, idx2)
        np.testing.assert_allclose(dist, dist2, atol=1e-12)


class TestImages:
    def test_black_and_white_tiles(self):
        assert np.all(image_grid(-np.ones(784), 1, 1) == 0)
        white = image_grid(np.ones(784), 1, 1)
        assert white.shape == (28, 28) and np.all(white == 255)

    def test_pgm_layout(self, tmp_path):
        samples = np.random.default_rng(0).uniform(-1, 1, (20, 784))
        grid = image_grid(samples, 2, 10)
        write_pgm(tmp_path / "g.pgm", grid)
        raw = (tmp_path / "g.pgm").read_bytes()
        assert raw.startswith(b"P5\n280 56\n255\n")
        assert len(raw) == len(b"P5\n280 56\n255\n") + 280 * 56
        np.testing.assert_array_equal(read_pgm(tmp_path / "g.pgm"), grid)
        np.testing.assert_array_equal(grid[28:56, 28:56], image_grid(samples[11], 1, 1))

    def test_grid_errors(self):
        with pytest.raises(ValueError):
            image_grid(np.zeros((1, 10)), 1, 1)
        with pytest.raises(ValueError):
            image_grid(np.zeros((3, 4)), 1, 2)
