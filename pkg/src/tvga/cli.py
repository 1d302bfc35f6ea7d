"""Command-line entry point: ``tvga <command> [options]``.

Commands: prepare, train, eval-link, cluster, generate, stats, report.
Settings come from flags, optionally layered over a JSON ``--config`` file
(flags win). Every command writes its resolved settings to
``<out>/config.json``. Exit codes: 0 ok, 2 input error, 3 training failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .graph import (
    EdgeSplit, GraphFormatError, InfeasibleSplitError, ReferentialError, graph_density,
    load_graph, load_linqs, load_saved_graph, save_graph, split_edges, write_edge_file,
)
from .metrics import cluster_metrics, graph_stats
from .nn import ParameterStore
from .sampler import SamplingConfig, balance_p_for_graph, clustering_coefficient, sample_batch
from .seeding import make_rng, stream_seed
from .tasks import GenerationConfig, cluster_nodes, generate_graph, random_distinct_triads
from .trainer import TrainConfig, TrainingDiverged, embed, score_pairs, train

log = logging.getLogger("tvga")

EXIT_INPUT, EXIT_TRAIN = 2, 3


class InputError(Exception):
    pass


# -- helpers -----------------------------------------------------------------

def _require(path, what):
    if path is None:
        raise InputError(f"missing required {what}")
    path = Path(path)
    if not path.exists():
        raise InputError(f"{what} not found: {path}")
    return path


def _out_dir(path):
    if path is None:
        raise InputError("--out is required")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_dataset(data_dir):
    data_dir = _require(data_dir, "dataset directory (--data)")
    graph = load_saved_graph(_require(data_dir / "graph", "prepared graph directory"))
    split = EdgeSplit.load(_require(data_dir / "split.json", "split file"), graph)
    return graph, split


def load_model(model_dir):
    model_dir = _require(model_dir, "model directory (--model)")
    store = ParameterStore.load(_require(model_dir / "checkpoint.bin", "checkpoint"))
    cfg = json.loads(_require(model_dir / "config.json", "model config").read_text())
    return store, TrainConfig(**cfg["train"])


def table1_stats(g):
    out = {"N": g.n_nodes, "E": g.n_edges, "density": graph_density(g)}
    if g.n_nodes >= 3:
        out["mean_local_clustering"] = clustering_coefficient(g, "mean_local")
    if g.labels is not None:
        out["n_classes"] = g.n_classes
    if g.features is not None:
        out["n_features"] = g.n_features
    return out


# -- commands ----------------------------------------------------------------

def cmd_prepare(opts):
    out = _out_dir(opts["out"])
    if opts.get("linqs"):
        directory = _require(opts["linqs"], "LINQS directory")
        g = load_linqs(directory, opts.get("name") or directory.name.lower())
    else:
        edges = _require(opts.get("edges"), "edge file (--edges)")
        feats = _require(opts["features"], "feature file") if opts.get("features") else None
        labels = _require(opts["labels"], "label file") if opts.get("labels") else None
        g = load_graph(edges, feats, labels)
    save_graph(out / "graph", g)
    split = split_edges(g, tuple(opts["ratios"]), seed=stream_seed(opts["seed"], "split"))
    split.save(out / "split.json")
    _write_json(out / "stats.json", table1_stats(g))
    _write_json(out / "config.json", opts)
    print(json.dumps(table1_stats(g), sort_keys=True))
    return 0


def _train_config(opts):
    keys = TrainConfig.__dataclass_fields__
    return TrainConfig(**{k: opts[k] for k in keys if opts.get(k) is not None})


def cmd_train(opts):
    out = _out_dir(opts["out"])
    _, split = load_dataset(opts.get("data"))
    config = _train_config(opts)
    _write_json(out / "config.json", {"command": "train", "data": str(opts["data"]), "train": config.to_dict()})
    try:
        result = train(split, config)
    except TrainingDiverged as exc:
        exc.report.write_jsonl(out / "train_report.jsonl")
        _write_json(out / "train_summary.json", exc.report.summary())
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    result.store.save(out / "checkpoint.bin")
    result.report.write_jsonl(out / "train_report.jsonl")
    _write_json(out / "train_summary.json", result.report.summary())
    emb = result.embedding
    arrays = {"z": emb.z.value}
    if emb.mu is not None:
        arrays.update(mu=emb.mu.value, logsig=emb.logsig.value)
    np.savez(out / "embedding.npz", **arrays)
    log.info("trained in %.1fs", result.report.wall_clock)
    print(json.dumps(result.report.summary(), sort_keys=True))
    return 0


def cmd_eval_link(opts):
    out = _out_dir(opts["out"])
    graph, split = load_dataset(opts.get("data"))
    store, config = load_model(opts.get("model"))
    z = embed(store, split.train_graph, config).z.value
    pairs = np.vstack([split.test_pos, split.test_neg])
    pairs = np.sort(pairs, axis=1)
    scores = score_pairs(pairs, z, split.train_graph, store, config.triad)
    labels = np.r_[np.ones(len(split.test_pos)), np.zeros(len(split.test_neg))]
    from .metrics import average_precision, roc_auc
    result = {"auc": roc_auc(scores, labels), "ap": average_precision(scores, labels),
              "n_pos": len(split.test_pos), "n_neg": len(split.test_neg), "mode": config.mode}
    with open(out / "link_predictions.tsv", "w", encoding="utf-8") as fh:
        for (i, j), s in zip(pairs, scores):
            fh.write(f"{i}\t{j}\t{s!r}\n")
    _write_json(out / "link_metrics.json", result)
    _write_json(out / "config.json", opts)
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_cluster(opts):
    out = _out_dir(opts["out"])
    graph, split = load_dataset(opts.get("data"))
    store, config = load_model(opts.get("model"))
    z = embed(store, split.train_graph, config).z.value
    k = opts.get("k") or (graph.n_classes if graph.labels is not None else None)
    if not k:
        raise InputError("--k is required when the graph has no labels")
    assign = cluster_nodes(z, int(k), opts["restarts"], make_rng(opts["seed"], "kmeans"))
    with open(out / "clusters.tsv", "w", encoding="utf-8") as fh:
        for node, c in enumerate(assign):
            fh.write(f"{node}\t{int(c)}\n")
    result = {"k": int(k), "n_nodes": len(assign)}
    if graph.labels is not None:
        result.update(cluster_metrics(assign, graph.labels).to_dict())
    _write_json(out / "cluster_metrics.json", result)
    _write_json(out / "config.json", opts)
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_generate(opts):
    out = _out_dir(opts["out"])
    graph, split = load_dataset(opts.get("data"))
    store, config = load_model(opts.get("model"))
    if not (config.variational and config.triad):
        raise InputError(f"graph generation needs a TVGA model, got mode {config.mode!r}")
    emb = embed(store, split.train_graph, config)
    gen_cfg = GenerationConfig(
        n_nodes=opts.get("n_nodes") or graph.n_nodes,
        target_edges=opts.get("target_edges") or graph.n_edges,
        n_triads=opts.get("n_triads"),
        latent_source=opts.get("latent_source") or "node_posteriors",
    )
    generated = generate_graph(store, emb, gen_cfg, make_rng(opts["seed"], "generation"))
    write_edge_file(out / "generated_edges.tsv", generated.graph.edges())
    stats = graph_stats(generated.graph).to_dict()
    _write_json(out / "generated_stats.json", stats)
    _write_json(out / "config.json", opts)
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_stats(opts):
    if opts.get("data"):
        g = load_saved_graph(_require(Path(opts["data"]) / "graph", "prepared graph directory"))
    else:
        g = load_graph(_require(opts.get("edges"), "edge file (--edges)"))
    result = {**table1_stats(g), **graph_stats(g).to_dict()}
    if opts.get("out"):
        out = _out_dir(opts["out"])
        _write_json(out / "stats.json", result)
        _write_json(out / "config.json", opts)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def balance_sweep(g, ps, n_triads, rng):
    fractions = []
    for p in ps:
        batch = sample_batch(g, SamplingConfig(p=float(p), batch_size=n_triads), rng)
        fractions.append(batch.edge_fraction())
    return fractions


def uniform_edge_fraction(g, n_triads, rng):
    t = random_distinct_triads(g.n_nodes, n_triads, rng)
    hits = [g.has_edges(np.minimum(t[:, a], t[:, b]), np.maximum(t[:, a], t[:, b])) for a, b in ((0, 1), (0, 2), (1, 2))]
    return float(np.mean(hits))


def cmd_report(opts):
    from . import plotting

    out = _out_dir(opts["out"])
    if opts.get("data"):
        g = load_saved_graph(_require(Path(opts["data"]) / "graph", "prepared graph directory"))
    else:
        g = load_graph(_require(opts.get("edges"), "edge file (--edges)"))
    rng = make_rng(opts["seed"], "sampler")
    ps = np.round(np.arange(0.05, 1.0, 0.05), 2)
    n_triads = opts["n_triads"] or 33_334
    fractions = balance_sweep(g, ps, n_triads, rng)
    solved = balance_p_for_graph(g)
    solved_fraction = balance_sweep(g, [solved], n_triads, rng)[0]
    uniform = uniform_edge_fraction(g, n_triads, rng)
    with open(out / "balance.tsv", "w", encoding="utf-8") as fh:
        fh.write("p\tedge_fraction\tkind\n")
        fh.write(f"0\t{uniform!r}\tuniform\n")
        for p, f in zip(ps, fractions):
            fh.write(f"{p!r}\t{f!r}\tsweep\n")
        fh.write(f"{solved!r}\t{solved_fraction!r}\tbalanced\n")
    plotting.plot_balance(ps, fractions, out / "balance.png", solved=(solved, solved_fraction),
                          random_fraction=uniform)

    degree_sets = {"input": g.degrees}
    if opts.get("generated"):
        degree_sets["generated"] = load_graph(_require(opts["generated"], "generated edge file")).degrees
    with open(out / "degrees.tsv", "w", encoding="utf-8") as fh:
        fh.write("graph\tnode\tdegree\n")
        for name, deg in degree_sets.items():
            for node, d in enumerate(deg):
                fh.write(f"{name}\t{node}\t{int(d)}\n")
    plotting.plot_degree_distributions(degree_sets, out / "degrees.png")

    if opts.get("model"):
        report = Path(opts["model"]) / "train_report.jsonl"
        evals = [json.loads(line) for line in _require(report, "training report").read_text().splitlines()]
        if evals:
            plotting.plot_training_curve(evals, out / "training.png")
    _write_json(out / "config.json", opts)
    summary = {"balanced_p": solved, "balanced_edge_fraction": solved_fraction,
               "uniform_edge_fraction": uniform}
    _write_json(out / "report.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval-link": cmd_eval_link,
    "cluster": cmd_cluster,
    "generate": cmd_generate,
    "stats": cmd_stats,
    "report": cmd_report,
}

DEFAULTS = {
    "seed": 0,
    "ratios": [0.85, 0.10, 0.05],
    "restarts": 10,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="tvga", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with option values (flags override it)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("prepare", help="load raw files, keep the largest component, split edges")
    common(p)
    p.add_argument("--edges")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--linqs", help="directory with <name>.cites and <name>.content")
    p.add_argument("--name")
    p.add_argument("--ratios", type=float, nargs=3, default=None)

    p = sub.add_parser("train", help="train a model on a prepared dataset")
    common(p)
    p.add_argument("--data")
    p.add_argument("--mode", choices=["tvga", "tga", "vgae", "gae"], type=str.lower, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
    p.add_argument("--p", type=float, default=None, help="fixed sampling probability")
    p.add_argument("--kl-scale", dest="kl_scale", type=float, default=None)
    p.add_argument("--clustering-kind", dest="clustering_kind", choices=["mean_local", "global"], default=None)
    p.add_argument("--relu-output", dest="relu_output", action="store_const", const=True, default=None)

    p = sub.add_parser("eval-link", help="test-split AUC/AP of a trained model")
    common(p)
    p.add_argument("--data")
    p.add_argument("--model")

    p = sub.add_parser("cluster", help="k-means on the learned embedding")
    common(p)
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--restarts", type=int, default=None)

    p = sub.add_parser("generate", help="sample a graph from a trained TVGA model")
    common(p)
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--n-nodes", dest="n_nodes", type=int, default=None)
    p.add_argument("--n-triads", dest="n_triads", type=int, default=None)
    p.add_argument("--target-edges", dest="target_edges", type=int, default=None)
    p.add_argument("--latent-source", dest="latent_source", choices=["node_posteriors", "prior"], default=None)

    p = sub.add_parser("stats", help="graph statistics of an edge file or prepared dataset")
    common(p)
    p.add_argument("--edges")
    p.add_argument("--data")

    p = sub.add_parser("report", help="sampling-balance and degree figures with their data")
    common(p)
    p.add_argument("--edges")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--generated")
    p.add_argument("--n-triads", dest="n_triads", type=int, default=None)
    return parser


def resolve_options(args):
    """Defaults, then the --config file, then explicit flags."""
    opts = dict(DEFAULTS)
    if args.config:
        path = _require(args.config, "config file")
        try:
            opts.update(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None
    for key, value in vars(args).items():
        if key in ("config", "verbose") or value is None:
            continue
        opts[key] = value
    return opts


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except (InputError, FileNotFoundError, GraphFormatError, ReferentialError,
            InfeasibleSplitError, ValueError) as exc:
        print(f"tvga {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
