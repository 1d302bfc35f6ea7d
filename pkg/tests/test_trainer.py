import itertools

import numpy as np
import pytest

from tvga import nn
from tvga.graph import Graph, normalize_adjacency, split_edges
from tvga.encoder import encode_deterministic, encode_variational
from tvga.sampler import SamplingConfig, sample_batch, tabulate
from tvga.trainer import (
    TrainConfig, aggregate_edge_probs, elbo_loss, features_of, init_model, pair_map,
    reconstruction_loss, train, training_loss,
)
from conftest import numeric_grad, rel_err, sbm_graph


def test_aggregation_examples():
    g = Graph.from_edges(4, [[0, 1], [1, 2], [2, 3]])
    batch = tabulate(g, np.array([[0, 1, 2], [1, 0, 3]]))
    preds = np.array([[0.2, 0.8, 0.9], [0.6, 0.3, 0.4]])
    got = pair_map(batch, aggregate_edge_probs(batch, preds))
    assert got[(0, 1)] == pytest.approx(0.4)
    assert got[(0, 2)] == pytest.approx(0.8)
    assert got[(1, 2)] == pytest.approx(0.9)
    assert got[(1, 3)] == pytest.approx(0.3)
    assert got[(0, 3)] == pytest.approx(0.4)
    assert (2, 3) not in got


def test_aggregation_matches_hand_oracle(rng):
    g = sbm_graph(40, seed=2)
    batch = sample_batch(g, SamplingConfig(p=0.7, batch_size=200), rng)
    preds = rng.random((batch.size, 3))
    sums, counts = {}, {}
    for b, triad in enumerate(batch.triads):
        for s, (x, y) in enumerate(((0, 1), (0, 2), (1, 2))):
            key = tuple(sorted((int(triad[x]), int(triad[y]))))
            sums[key] = sums.get(key, 0.0) + preds[b, s]
            counts[key] = counts.get(key, 0) + 1
    got = pair_map(batch, aggregate_edge_probs(batch, preds))
    assert got.keys() == sums.keys()
    for key in sums:
        assert got[key] == pytest.approx(sums[key] / counts[key], abs=1e-14)


def test_aggregation_shape_check():
    batch = tabulate(Graph.from_edges(3, [[0, 1], [1, 2]]), np.array([[0, 1, 2]]))
    with pytest.raises(ValueError):
        aggregate_edge_probs(batch, np.zeros((2, 3)))


def test_reconstruction_examples(rng):
    assert reconstruction_loss(np.full(3, 0.5), [1, 0, 1]).item() == pytest.approx(3 * np.log(2))
    assert reconstruction_loss(np.array([1.0, 0.0]), [1, 0]).item() == pytest.approx(0, abs=1e-6)
    e = rng.uniform(0.01, 0.99, size=50)
    t = (rng.random(50) < 0.5).astype(float)
    oracle = 0.0
    for ei, ti in zip(e, t):
        oracle -= np.log(ei) if ti else np.log(1 - ei)
    assert reconstruction_loss(e, t).item() == pytest.approx(oracle, rel=1e-12)


def test_elbo_examples():
    assert elbo_loss(nn.Tensor(np.array(1.0)), nn.Tensor(np.array(2.0)), 1.0).item() == 3.0
    recon = nn.Tensor(np.array(1.7))
    assert elbo_loss(recon, nn.Tensor(np.array(9.0)), 0.0) is recon


def test_zero_kl_scale_equals_triad_objective(toy_graph, rng):
    a, x = normalize_adjacency(toy_graph), features_of(toy_graph)
    cfg_v = TrainConfig(mode="tvga", kl_scale=0.0, hidden=8, latent=4)
    cfg_t = TrainConfig(mode="tga", hidden=8, latent=4)
    store = init_model(cfg_v, x.shape[1], np.random.default_rng(0))
    emb = encode_variational(a, x, store, np.random.default_rng(1))
    batch = sample_batch(toy_graph, SamplingConfig(p=0.7, batch_size=300), rng)
    with_kl = training_loss(emb.z, batch, store, cfg_v, emb, toy_graph.n_nodes).item()
    without = training_loss(emb.z, batch, store, cfg_t).item()
    assert with_kl == without
    cfg_kl = TrainConfig(mode="tvga", hidden=8, latent=4)
    assert training_loss(emb.z, batch, store, cfg_kl, emb, toy_graph.n_nodes).item() > without


def test_full_tvga_loss_gradient():
    g = Graph.from_edges(6, [[0, 1], [1, 2], [0, 2], [2, 3], [3, 4], [4, 5], [3, 5]])
    a, x = normalize_adjacency(g), np.random.default_rng(3).normal(size=(6, 3))
    cfg = TrainConfig(mode="tvga", hidden=5, latent=4, n_filters=2)
    store = init_model(cfg, 3, np.random.default_rng(4))
    batch = sample_batch(g, SamplingConfig(p=0.6, batch_size=8), np.random.default_rng(5))

    def loss_of(s):
        emb = encode_variational(a, x, s, np.random.default_rng(6))
        return training_loss(emb.z, batch, s, cfg, emb, g.n_nodes)

    with nn.Tape() as tape:
        loss = loss_of(store)
    nn.backward(tape, loss, store)
    for name in store:
        def f(v, name=name):
            tmp = nn.ParameterStore()
            for n in store:
                tmp.add(n, v if n == name else store.values(n))
            return loss_of(tmp).item()
        assert rel_err(store.entry(name).grad, numeric_grad(f, store.values(name))) < 1e-4, name


def test_gae_overfits_tiny_graph():
    rng = np.random.default_rng(0)
    g = Graph.from_edges(10, [[0, 1], [1, 2], [2, 0], [3, 4], [4, 5], [5, 3], [6, 7], [7, 8], [8, 9], [9, 6], [2, 3], [5, 6]])
    cfg = TrainConfig(mode="gae", hidden=16, latent=16)
    a, x = normalize_adjacency(g), features_of(g)
    store = init_model(cfg, x.shape[1], rng)
    batch = tabulate(g, np.array(list(itertools.combinations(range(10), 3))))
    assert batch.n_pairs == 45
    for _ in range(500):
        with nn.Tape() as tape:
            loss = training_loss(encode_deterministic(a, x, store).z, batch, store, cfg)
        nn.backward(tape, loss, store)
        nn.adam_step(store, cfg.lr)
    assert loss.item() / batch.n_pairs < 0.3


@pytest.fixture(scope="module")
def toy_split():
    return split_edges(sbm_graph(), seed=0)


def quick_config(**kw):
    base = dict(mode="tvga", max_iters=60, batch_size=300, eval_every=20, hidden=8, latent=8, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic(toy_split):
    a = train(toy_split, quick_config())
    b = train(toy_split, quick_config())
    assert a.report == b.report
    for name in a.store:
        assert np.array_equal(a.store.values(name), b.store.values(name))
    c = train(toy_split, quick_config(seed=4))
    assert c.report.losses != a.report.losses


def test_live_pairs_bounded(toy_split):
    cfg = quick_config(max_iters=40)
    report = train(toy_split, cfg).report
    n = toy_split.train_graph.n_nodes
    assert 0 < report.max_live_pairs <= 3 * max(n, cfg.batch_size)
    assert report.max_live_pairs <= n * (n - 1) // 2


@pytest.mark.parametrize("mode", ["tvga", "tga", "vgae", "gae"])
def test_loss_decreases(toy_split, mode):
    report = train(toy_split, quick_config(mode=mode, lr=0.01, max_iters=50, eval_every=50)).report
    assert np.mean(report.losses[-10:]) < np.mean(report.losses[:10])
    assert report.evaluations[-1]["iter"] == 50


def test_early_stopping_restores_best(toy_split):
    res = train(toy_split, quick_config(max_iters=400, eval_every=10, patience=2, lr=0.02))
    assert res.report.stop_reason in ("early_stop", "max_iters")
    best = max(e["val_auc"] for e in res.report.evaluations)
    assert res.report.best_val_auc == best


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="foo")
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    assert TrainConfig(mode="TVGA").mode == "tvga"
