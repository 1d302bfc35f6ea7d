"""Two-layer GCN encoder, deterministic (GAE) and variational (VGAE) forms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import nn

LOGSIG_MIN, LOGSIG_MAX = -10.0, 10.0


@dataclass
class Embedding:
    z: nn.Tensor
    mu: nn.Tensor | None = None
    logsig: nn.Tensor | None = None
    eps: np.ndarray | None = None

    @property
    def variational(self):
        return self.mu is not None


def init_encoder(store, n_features, rng, hidden=32, latent=32, variational=True):
    """Glorot-initialized encoder weights added to ``store`` under ``enc.*``."""
    store.add("enc.W0", nn.glorot_uniform(rng, (n_features, hidden)))
    if variational:
        store.add("enc.W1_mu", nn.glorot_uniform(rng, (hidden, latent)))
        store.add("enc.W1_logsig", nn.glorot_uniform(rng, (hidden, latent)))
    else:
        store.add("enc.W1", nn.glorot_uniform(rng, (hidden, latent)))
    return store


def _check(a_norm, x, w0):
    n = a_norm.shape[0]
    if a_norm.shape != (n, n) or x.shape[0] != n:
        raise ValueError(f"adjacency {a_norm.shape} does not match features {x.shape}")
    if x.shape[1] != w0.shape[0]:
        raise ValueError(f"features have width {x.shape[1]} but W0 expects {w0.shape[0]}")


def _hidden(a_norm, x, store):
    w0 = store["enc.W0"]
    _check(a_norm, x, w0)
    xw = nn.matmul(x if sp.issparse(x) else np.asarray(x, dtype=np.float64), w0)
    return nn.relu(nn.spmm(a_norm, xw))


def _head(a_norm, h, w, relu_output):
    out = nn.spmm(a_norm, nn.matmul(h, w))
    return nn.relu(out) if relu_output else out


def encode_deterministic(a_norm, x, store, relu_output=False):
    """Z = A_n relu(A_n X W0) W1; ``relu_output`` applies relu to layer 2 too."""
    h = _hidden(a_norm, x, store)
    return Embedding(z=_head(a_norm, h, store["enc.W1"], relu_output))


def encode_variational(a_norm, x, store, rng, relu_output=False):
    """Reparameterized sample Z = mu + exp(logsig) * eps, eps ~ N(0, I) from ``rng``.

    Both heads share the first layer. logsig is clamped to [-10, 10].
    """
    h = _hidden(a_norm, x, store)
    mu = _head(a_norm, h, store["enc.W1_mu"], relu_output)
    logsig = nn.clip(_head(a_norm, h, store["enc.W1_logsig"], relu_output), LOGSIG_MIN, LOGSIG_MAX)
    eps = rng.standard_normal(mu.shape)
    z = nn.add(mu, nn.mul(nn.exp(logsig), eps))
    return Embedding(z=z, mu=mu, logsig=logsig, eps=eps)


def encode_mean(a_norm, x, store, relu_output=False):
    """Deterministic embedding for evaluation: mu in variational stores, Z otherwise."""
    if "enc.W1" in store:
        return encode_deterministic(a_norm, x, store, relu_output)
    h = _hidden(a_norm, x, store)
    mu = _head(a_norm, h, store["enc.W1_mu"], relu_output)
    logsig = nn.clip(_head(a_norm, h, store["enc.W1_logsig"], relu_output), LOGSIG_MIN, LOGSIG_MAX)
    return Embedding(z=mu, mu=mu, logsig=logsig)


def kl_to_standard_normal(mu, logsig):
    """KL(N(mu, exp(logsig)^2) || N(0, I)) summed over nodes and dimensions."""
    terms = nn.sub(nn.add(nn.mul(mu, mu), nn.exp(nn.mul(logsig, 2.0))), nn.add(nn.mul(logsig, 2.0), 1.0))
    return nn.mul(nn.sum(terms), 0.5)
