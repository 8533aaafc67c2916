"""Feature evaluation: 1NN accuracy, reconstructions, cosine retrieval, image grids."""
from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from .training import default_gx, reconstruct


def extract_features(bundle, X, batch_size=1024):
    """Inference-mode features of ``X`` for a trained bundle.

    Encoder models return the encoder's linear outputs; the plain GAN returns
    the discriminator's second hidden layer (after normalization and
    nonlinearity).
    """
    X = np.asarray(X, dtype=np.float64)
    nets = bundle.nets
    if "E" in nets:
        return nets["E"].predict(X, batch_size=batch_size)
    D = nets["D"]
    outs = [D.forward(X[s:s + batch_size], training=False, until=D.feature_index)[0]
            for s in range(0, len(X), batch_size)]
    return np.concatenate(outs)


def _sq_norms(a):
    return np.einsum("ij,ij->i", a, a)


def nearest_indices(train, test, block=1024):
    """Index of the Euclidean-nearest train row for every test row (ties: lowest index)."""
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if len(train) == 0:
        raise ValueError("empty training set")
    if train.shape[1] != test.shape[1]:
        raise ValueError("feature dimensions differ")
    tn = _sq_norms(train)
    out = np.empty(len(test), dtype=np.int64)
    for s in range(0, len(test), block):
        q = test[s:s + block]
        d2 = _sq_norms(q)[:, None] - 2.0 * q @ train.T + tn[None, :]
        out[s:s + block] = np.argmin(d2, axis=1)
    return out


def one_nn_accuracy(train_feats, train_labels, test_feats, test_labels):
    """Percentage of test rows whose nearest training row shares their label."""
    idx = nearest_indices(train_feats, test_feats)
    pred = np.asarray(train_labels)[idx]
    return 100.0 * float(np.mean(pred == np.asarray(test_labels)))


def reconstruction_error(bundle, X):
    """Mean Euclidean distance between inputs and their reconstructions."""
    out = reconstruct(bundle, np.asarray(X, dtype=np.float64), default_gx(bundle.config))
    if out is None:
        raise ValueError(f"{bundle.kind} model has no encoder/decoder pair")
    recon, target = out
    return float(np.mean(np.linalg.norm(target - recon, axis=1)))


def cosine_neighbors(query, corpus, k):
    """Indices of the ``k`` corpus rows nearest each query by cosine distance.

    Returns ``(indices, distances)``, ascending; equal distances keep corpus order.
    """
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    corpus = np.atleast_2d(np.asarray(corpus, dtype=np.float64))
    qn = np.linalg.norm(query, axis=1)
    cn = np.linalg.norm(corpus, axis=1)
    if np.any(qn == 0) or np.any(cn == 0):
        raise ValueError("cosine distance is undefined for zero-norm rows")
    dist = 1.0 - (query / qn[:, None]) @ (corpus / cn[:, None]).T
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(dist, order, axis=1)


def image_grid(vectors, rows, cols):
    """Tile flat square images (values in [-1, 1]) into one uint8 array, no padding."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    n, d = vectors.shape
    s = int(round(np.sqrt(d)))
    if s * s != d:
        raise ValueError(f"vector length {d} is not a square")
    if n > rows * cols:
        raise ValueError(f"{n} images do not fit a {rows}x{cols} grid")
    pixels = np.clip(np.rint((vectors + 1.0) * 127.5), 0, 255).astype(np.uint8)
    grid = np.zeros((rows * s, cols * s), dtype=np.uint8)
    for i, img in enumerate(pixels):
        r, c = divmod(i, cols)
        grid[r * s:(r + 1) * s, c * s:(c + 1) * s] = img.reshape(s, s)
    return grid


def write_pgm(path, image):
    """Write a uint8 array as binary PGM (P5), atomically."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())
    os.replace(tmp, path)


def read_pgm(path):
    raw = Path(path).read_bytes()
    match = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", raw)
    if match is None:
        raise ValueError("not a binary 8-bit PGM file")
    w, h = int(match.group(1)), int(match.group(2))
    return np.frombuffer(raw[match.end():], dtype=np.uint8).reshape(h, w)
