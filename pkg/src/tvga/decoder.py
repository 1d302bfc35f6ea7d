"""Triad decoder and the pairwise inner-product decoder.

The triad decoder reads three node embeddings (z_i, z_j, z_k) and returns
the three edge probabilities in slot order (ij, ik, jk):

    conv[f, l] = relu(w_i^f z_il + w_j^f z_jl + w_k^f z_kl)
    F          = relu(fc_W . flatten(conv) + fc_b)
    e          = sigmoid(F + [z_i.z_j, z_i.z_k, z_j.z_k])

With every decoder weight at zero it collapses to sigmoid(z_x . z_y).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn

SLOTS = ((0, 1), (0, 2), (1, 2))


@dataclass(frozen=True)
class TriadPrediction:
    e_ij: float
    e_ik: float
    e_jk: float

    def as_tuple(self):
        return (self.e_ij, self.e_ik, self.e_jk)


def init_triad_decoder(store, rng, latent=32, n_filters=4):
    store.add("dec.conv_w", nn.glorot_uniform(rng, (n_filters, 3)))
    store.add("dec.fc_W", nn.glorot_uniform(rng, (n_filters * latent, 3)))
    store.add("dec.fc_b", np.zeros(3))
    return store


def _pair_dot(a, b):
    return nn.sum(nn.mul(a, b), axis=1)


def triad_logits(zi, zj, zk, store):
    """Pre-sigmoid outputs, shape (B, 3), for batches of triad embeddings (B, d)."""
    shapes = {nn.shape_of(t) for t in (zi, zj, zk)}
    if len(shapes) != 1 or len(shapes.pop()) != 2:
        raise ValueError("triad embeddings must be (B, d) arrays of one shape")
    conv_w, fc_w, fc_b = store["dec.conv_w"], store["dec.fc_W"], store["dec.fc_b"]
    b, d = nn.shape_of(zi)
    if fc_w.shape[0] != conv_w.shape[0] * d:
        raise ValueError(f"embedding width {d} does not match decoder input {fc_w.shape[0]}")
    positions = nn.stack([zi, zj, zk], axis=1)              # (B, 3, d)
    conv = nn.relu(nn.matmul(conv_w, positions))            # (B, filters, d)
    flat = nn.reshape(conv, (b, -1))                        # filter-major flatten
    residual = nn.relu(nn.add(nn.matmul(flat, fc_w), fc_b))  # (B, 3)
    dots = nn.stack([_pair_dot(zi, zj), _pair_dot(zi, zk), _pair_dot(zj, zk)], axis=1)
    return nn.add(residual, dots)


def decode_triads(zi, zj, zk, store):
    """Edge probabilities (B, 3) in slot order (ij, ik, jk)."""
    return nn.sigmoid(triad_logits(zi, zj, zk, store))


def decode_triad(z_i, z_j, z_k, store):
    """Single-triad convenience wrapper returning a :class:`TriadPrediction`."""
    rows = [np.atleast_2d(np.asarray(nn.value_of(z), dtype=np.float64)) for z in (z_i, z_j, z_k)]
    out = decode_triads(*rows, store).value[0]
    return TriadPrediction(*map(float, out))


def decode_inner_product(zi, zj):
    """sigmoid(z_i . z_j); batched over rows for 2-D inputs."""
    zi_v, zj_v = nn.value_of(zi), nn.value_of(zj)
    if np.ndim(zi_v) == 1 and np.ndim(zj_v) == 1:
        return float(nn.sigmoid(np.asarray(np.dot(zi_v, zj_v))).value)
    return nn.sigmoid(_pair_dot(zi, zj))
