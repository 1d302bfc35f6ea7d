"""Mini-batch training of TVGA / TGA and the GAE / VGAE baselines.

Each iteration encodes the whole training graph, samples a batch of
triads, averages the per-triad edge predictions per node pair, and takes
one Adam step on the reconstruction loss (plus the scaled KL term for the
variational models). Validation AUC is tracked for early stopping and the
best parameters are returned.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .decoder import decode_inner_product, decode_triads, init_triad_decoder
from .encoder import (
    encode_deterministic, encode_mean, encode_variational, init_encoder, kl_to_standard_normal,
)
from .graph import normalize_adjacency
from .metrics import average_precision, roc_auc
from .sampler import SamplingConfig, balance_p_for_graph, sample_batch
from .seeding import make_rng
from .tasks import predict_links, predict_links_inner

log = logging.getLogger(__name__)

MODES = ("tvga", "tga", "vgae", "gae")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


@dataclass
class TrainConfig:
    mode: str = "tvga"
    lr: float = 0.0005
    batch_size: int = 5000
    max_iters: int = 20000
    patience: int = 10
    eval_every: int = 50
    seed: int = 0
    hidden: int = 32
    latent: int = 32
    n_filters: int = 4
    p: float | None = None
    clustering_kind: str = "mean_local"
    kl_scale: float | None = None
    relu_output: bool = False

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1 or self.eval_every < 1 or self.max_iters < 1 or self.batch_size < 1:
            raise ValueError("patience, eval_every, max_iters and batch_size must be positive")

    @property
    def variational(self):
        return self.mode in ("tvga", "vgae")

    @property
    def triad(self):
        return self.mode in ("tvga", "tga")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    evaluations: list = field(default_factory=list)
    best_iter: int = 0
    best_val_auc: float = float("-inf")
    best_val_ap: float = float("nan")
    p: float = float("nan")
    max_live_pairs: int = 0
    stop_reason: str = ""
    wall_clock: float = field(default=0.0, compare=False)

    def records(self):
        """One JSON-ready record per validation evaluation."""
        return [dict(e) for e in self.evaluations]

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def summary(self):
        return {
            "best_iter": self.best_iter,
            "best_val_auc": self.best_val_auc,
            "best_val_ap": self.best_val_ap,
            "p": self.p,
            "iterations": len(self.losses),
            "final_loss": self.losses[-1] if self.losses else None,
            "max_live_pairs": self.max_live_pairs,
            "stop_reason": self.stop_reason,
        }


@dataclass
class TrainResult:
    store: nn.ParameterStore
    embedding: object
    report: TrainReport


# -- loss pieces -------------------------------------------------------------

def aggregate_edge_probs(batch, preds):
    """Average the per-slot predictions of each distinct pair (aligned with ``batch.pairs``)."""
    shape = nn.shape_of(preds)
    if shape != (batch.size, 3):
        raise ValueError(f"predictions of shape {shape} do not match {batch.size} triads")
    return nn.segment_mean(nn.reshape(preds, (-1,)), batch.slot_pair.reshape(-1), batch.n_pairs)


def pair_map(batch, e_hat):
    values = nn.value_of(e_hat)
    return {(int(u), int(v)): float(p) for (u, v), p in zip(batch.pairs, values)}


def reconstruction_loss(e_hat, targets):
    """Summed BCE over the distinct pairs of a batch, each pair counted once."""
    return nn.binary_cross_entropy(e_hat, np.asarray(targets, dtype=np.float64))


def elbo_loss(recon, kl, kl_scale):
    """Negative lower bound: reconstruction error plus ``kl_scale`` times KL."""
    if kl_scale == 0:
        return recon
    return nn.add(recon, nn.mul(kl, float(kl_scale)))


def batch_edge_probs(z, batch, store, triad):
    if triad:
        t = batch.triads
        preds = decode_triads(nn.take_rows(z, t[:, 0]), nn.take_rows(z, t[:, 1]), nn.take_rows(z, t[:, 2]), store)
        return aggregate_edge_probs(batch, preds)
    return decode_inner_product(nn.take_rows(z, batch.pairs[:, 0]), nn.take_rows(z, batch.pairs[:, 1]))


def training_loss(z, batch, store, config, embedding=None, n_nodes=None):
    e_hat = batch_edge_probs(z, batch, store, config.triad)
    recon = reconstruction_loss(e_hat, batch.indicator)
    if not config.variational:
        return recon
    kl = kl_to_standard_normal(embedding.mu, embedding.logsig)
    scale = config.kl_scale if config.kl_scale is not None else 1.0 / n_nodes
    return elbo_loss(recon, kl, scale)


# -- model setup and evaluation ----------------------------------------------

def features_of(graph):
    if graph.features is not None:
        return graph.features
    import scipy.sparse as sp
    return sp.identity(graph.n_nodes, format="csr")


def init_model(config, n_features, rng):
    store = nn.ParameterStore()
    init_encoder(store, n_features, rng, hidden=config.hidden, latent=config.latent,
                 variational=config.variational)
    if config.triad:
        init_triad_decoder(store, rng, latent=config.latent, n_filters=config.n_filters)
    return store


def score_pairs(pairs, z, graph, store, triad):
    if triad:
        return predict_links(pairs, z, graph, store)
    return predict_links_inner(pairs, z, graph.n_nodes)


def evaluate_link(pos, neg, z, graph, store, triad):
    scores = score_pairs(np.vstack([pos, neg]), z, graph, store, triad)
    labels = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
    return roc_auc(scores, labels), average_precision(scores, labels)


def embed(store, graph, config, a_norm=None):
    a_norm = normalize_adjacency(graph) if a_norm is None else a_norm
    return encode_mean(a_norm, features_of(graph), store, relu_output=config.relu_output)


# -- training loop -----------------------------------------------------------

def train(split, config):
    """Train on ``split.train_graph`` and keep the parameters with the best validation AUC.

    Returns a :class:`TrainResult` whose embedding is the deterministic
    (mean) embedding of the training graph under the best parameters.
    """
    started = time.perf_counter()
    graph = split.train_graph
    a_norm = normalize_adjacency(graph)
    x = features_of(graph)
    store = init_model(config, x.shape[1], make_rng(config.seed, "init"))
    sampler_rng = make_rng(config.seed, "sampler")
    noise_rng = make_rng(config.seed, "noise")
    p = config.p if config.p is not None else balance_p_for_graph(graph, config.clustering_kind)
    sampling = SamplingConfig(p=p, batch_size=config.batch_size)
    report = TrainReport(p=p)
    has_val = len(split.val_pos) > 0 and len(split.val_neg) > 0
    best = store.snapshot()
    stale = 0
    log.info("training %s: N=%d, p=%.4f, batch=%d", config.mode, graph.n_nodes, p, config.batch_size)

    for it in range(1, config.max_iters + 1):
        with nn.Tape() as tape:
            if config.variational:
                emb = encode_variational(a_norm, x, store, noise_rng, relu_output=config.relu_output)
            else:
                emb = encode_deterministic(a_norm, x, store, relu_output=config.relu_output)
            batch = sample_batch(graph, sampling, sampler_rng)
            loss = training_loss(emb.z, batch, store, config, emb, graph.n_nodes)
        report.max_live_pairs = max(report.max_live_pairs, batch.n_pairs)
        value = loss.item()
        report.losses.append(value)
        if not np.isfinite(value):
            report.stop_reason = "diverged"
            report.wall_clock = time.perf_counter() - started
            raise TrainingDiverged(f"non-finite loss at iteration {it}", report)
        nn.backward(tape, loss, store)
        try:
            nn.adam_step(store, config.lr)
        except FloatingPointError as exc:
            report.stop_reason = "diverged"
            report.wall_clock = time.perf_counter() - started
            raise TrainingDiverged(str(exc), report) from exc

        if it % config.eval_every == 0 or it == config.max_iters:
            z = embed(store, graph, config, a_norm).z.value
            if has_val:
                auc, ap = evaluate_link(split.val_pos, split.val_neg, z, graph, store, config.triad)
            else:
                auc, ap = -value, float("nan")
            report.evaluations.append({"iter": it, "loss": value, "val_auc": auc, "val_ap": ap})
            log.debug("iter %d loss %.4f val auc %.4f ap %.4f", it, value, auc, ap)
            if auc > report.best_val_auc:
                report.best_val_auc, report.best_val_ap, report.best_iter = auc, ap, it
                best = store.snapshot()
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    report.stop_reason = "early_stop"
                    break
    else:
        report.stop_reason = "max_iters"

    store.restore(best)
    embedding = embed(store, graph, config, a_norm)
    report.wall_clock = time.perf_counter() - started
    return TrainResult(store=store, embedding=embedding, report=report)
