import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tvga import nn
from tvga.decoder import decode_inner_product, decode_triad, decode_triads, init_triad_decoder
from tvga.encoder import (
    encode_deterministic, encode_mean, encode_variational, init_encoder, kl_to_standard_normal,
)
from tvga.graph import normalize_adjacency
from conftest import numeric_grad, rel_err, sbm_graph


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# -- encoder -----------------------------------------------------------------

def test_zero_weights_give_zero_embedding(toy_graph):
    store = nn.ParameterStore()
    init_encoder(store, toy_graph.n_features, np.random.default_rng(0), variational=False)
    for name in store:
        store.values(name)[...] = 0.0
    z = encode_deterministic(normalize_adjacency(toy_graph), toy_graph.features, store).z.value
    assert z.shape == (toy_graph.n_nodes, 32) and not z.any()


@pytest.mark.parametrize("c,d", [(0.7, -1.3), (-0.4, 2.0)])
def test_single_node_encoder(c, d):
    store = nn.ParameterStore()
    store.add("enc.W0", np.array([[c]]))
    store.add("enc.W1", np.array([[d]]))
    z = encode_deterministic(sp.identity(1, format="csr"), np.array([[1.0]]), store).z.value
    assert z[0, 0] == pytest.approx(max(c, 0.0) * d)


def test_encoder_matches_dense_formula(toy_graph, rng):
    store = nn.ParameterStore()
    init_encoder(store, toy_graph.n_features, rng, hidden=8, latent=4, variational=False)
    a = normalize_adjacency(toy_graph).toarray()
    x = toy_graph.features.toarray()
    expected = a @ np.maximum(a @ x @ store.values("enc.W0"), 0) @ store.values("enc.W1")
    z = encode_deterministic(normalize_adjacency(toy_graph), toy_graph.features, store).z.value
    assert np.allclose(z, expected)


def variational_store(g, seed=0):
    store = nn.ParameterStore()
    init_encoder(store, g.n_features, np.random.default_rng(seed), hidden=8, latent=4)
    return store


def test_variational_determinism(toy_graph):
    a = normalize_adjacency(toy_graph)
    store = variational_store(toy_graph)
    z1 = encode_variational(a, toy_graph.features, store, np.random.default_rng(5)).z.value
    z2 = encode_variational(a, toy_graph.features, store, np.random.default_rng(5)).z.value
    assert np.array_equal(z1, z2)


def test_clamped_logsig_collapses_to_mean(toy_graph):
    a = normalize_adjacency(toy_graph)
    store = variational_store(toy_graph)
    store.values("enc.W1_logsig")[...] = -1e6
    emb = encode_variational(a, toy_graph.features, store, np.random.default_rng(1))
    assert np.allclose(emb.z.value, emb.mu.value, atol=1e-3)


def test_monte_carlo_mean():
    store = nn.ParameterStore()
    store.add("enc.W0", np.array([[1.0, 0.5]]))
    store.add("enc.W1_mu", np.array([[0.3], [1.0]]))
    store.add("enc.W1_logsig", np.array([[0.2], [-0.6]]))
    a, x = sp.identity(1, format="csr"), np.array([[1.0]])
    rng = np.random.default_rng(7)
    draws = np.array([encode_variational(a, x, store, rng).z.value[0, 0] for _ in range(10_000)])
    mean = encode_mean(a, x, store)
    sigma = np.exp(mean.logsig.value[0, 0])
    assert abs(draws.mean() - mean.z.value[0, 0]) < 3 * sigma / 100


def test_kl_examples():
    assert kl_to_standard_normal(np.zeros((3, 2)), np.zeros((3, 2))).item() == 0.0
    assert kl_to_standard_normal(np.ones((1, 1)), np.zeros((1, 1))).item() == pytest.approx(0.5)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 2), elements=st.floats(-5, 5)),
       arrays(np.float64, (3, 2), elements=st.floats(-5, 5)))
def test_kl_non_negative(mu, logsig):
    kl = kl_to_standard_normal(mu, logsig).item()
    assert kl >= -1e-12
    if kl < 1e-12:
        assert np.allclose(mu, 0, atol=1e-5) and np.allclose(logsig, 0, atol=1e-5)


def test_kl_gradient(rng):
    mu, ls = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    t = nn.Tensor(mu, requires_grad=True)
    s = nn.Tensor(ls, requires_grad=True)
    with nn.Tape() as tape:
        loss = kl_to_standard_normal(t, s)
    nn.backward(tape, loss)
    assert np.allclose(t.grad, mu)
    assert np.allclose(s.grad, np.exp(2 * ls) - 1)


# -- decoder -----------------------------------------------------------------

def decoder_store(seed=0, latent=6):
    store = nn.ParameterStore()
    init_triad_decoder(store, np.random.default_rng(seed), latent=latent)
    store.values("dec.fc_b")[...] = np.random.default_rng(seed + 1).normal(size=3)
    return store


def reference_triad(zi, zj, zk, conv_w, fc_w, fc_b):
    """Loop-based evaluation of one triad."""
    filters, d = conv_w.shape[0], len(zi)
    conv = np.zeros((filters, d))
    for f in range(filters):
        for l in range(d):
            conv[f, l] = max(0.0, conv_w[f, 0] * zi[l] + conv_w[f, 1] * zj[l] + conv_w[f, 2] * zk[l])
    flat = [conv[f, l] for f in range(filters) for l in range(d)]
    out = []
    for s, (a, b) in enumerate([(zi, zj), (zi, zk), (zj, zk)]):
        acc = fc_b[s]
        for m, v in enumerate(flat):
            acc += fc_w[m, s] * v
        dot = sum(a[l] * b[l] for l in range(d))
        out.append(1.0 / (1.0 + np.exp(-(max(0.0, acc) + dot))))
    return out


def test_zero_params_reduce_to_inner_product(rng):
    store = decoder_store()
    for name in store:
        store.values(name)[...] = 0.0
    z = rng.normal(size=(3, 6))
    pred = decode_triad(z[0], z[1], z[2], store).as_tuple()
    assert pred == (decode_inner_product(z[0], z[1]), decode_inner_product(z[0], z[2]),
                    decode_inner_product(z[1], z[2]))
    zero = decode_triad(np.zeros(6), np.zeros(6), np.zeros(6), store).as_tuple()
    assert zero == (0.5, 0.5, 0.5)


def test_triad_decoder_matches_reference(rng):
    store = decoder_store(3)
    z = rng.normal(size=(5, 3, 6)) * 0.5
    got = decode_triads(z[:, 0], z[:, 1], z[:, 2], store).value
    for b in range(5):
        want = reference_triad(*z[b], store.values("dec.conv_w"), store.values("dec.fc_W"), store.values("dec.fc_b"))
        assert np.allclose(got[b], want, rtol=0, atol=1e-12)


def test_residual_never_lowers_probability(rng):
    store = decoder_store(4)
    z = rng.normal(size=(50, 3, 6))
    probs = decode_triads(z[:, 0], z[:, 1], z[:, 2], store).value
    dots = np.stack([(z[:, 0] * z[:, 1]).sum(1), (z[:, 0] * z[:, 2]).sum(1), (z[:, 1] * z[:, 2]).sum(1)], 1)
    assert (probs >= sigmoid(dots) - 1e-15).all()


def test_tied_position_weights_give_symmetric_slots(rng):
    store = decoder_store(5)
    conv = store.values("dec.conv_w")
    conv[:, 1] = conv[:, 0]
    fc = store.values("dec.fc_W")
    fc[:, 2] = fc[:, 1]
    store.values("dec.fc_b")[2] = store.values("dec.fc_b")[1]
    zi, zj, zk = rng.normal(size=(3, 6))
    a = decode_triad(zi, zj, zk, store)
    b = decode_triad(zj, zi, zk, store)
    assert a.e_ij == pytest.approx(b.e_ij, abs=1e-15)
    assert sorted([a.e_ik, a.e_jk]) == pytest.approx(sorted([b.e_ik, b.e_jk]), abs=1e-15)


def test_inner_product_examples(rng):
    assert decode_inner_product(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 0.5
    z = np.array([1.0, 1.0])
    assert decode_inner_product(z, z) == pytest.approx(0.8808, abs=1e-4)
    u, v = rng.normal(size=(2, 5))
    assert decode_inner_product(u, v) == decode_inner_product(v, u)


def test_triad_decoder_gradient(rng):
    store = decoder_store(6, latent=4)
    z = rng.normal(size=(3, 3, 4)) * 0.7
    weight = rng.normal(size=(3, 3))

    def value(zv, **override):
        params = {n: override.get(n.replace(".", "_"), store.values(n)) for n in store}
        tmp = nn.ParameterStore()
        for n, v in params.items():
            tmp.add(n, v)
        return float(np.sum(decode_triads(zv[:, 0], zv[:, 1], zv[:, 2], tmp).value * weight))

    zt = nn.Tensor(z, requires_grad=True)
    with nn.Tape() as tape:
        flat = nn.reshape(zt, (9, 4))
        out = decode_triads(nn.take_rows(flat, [0, 3, 6]), nn.take_rows(flat, [1, 4, 7]),
                            nn.take_rows(flat, [2, 5, 8]), store)
        loss = nn.sum(nn.mul(out, weight))
    nn.backward(tape, loss, store)
    assert rel_err(zt.grad, numeric_grad(value, z)) < 1e-4
    for name in store:
        key = name.replace(".", "_")
        num = numeric_grad(lambda v: value(z, **{key: v}), store.values(name))
        assert rel_err(store.entry(name).grad, num) < 1e-4
