"""Command-line interface: ingest, repair, embed, evaluate, pipeline, compare, project."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .embed import (
    EmbeddingMatrix,
    edge_features,
    load_embedding,
    load_embedding_text,
    random_walks,
    save_embedding,
    save_embedding_text,
    skipgram_train,
)
from .graph import load_dataset, save_graph, split_edges
from .metrics import (
    ClassifierConfig,
    assortativity,
    assumption_diagnostics,
    dber,
    ddi,
    dyadic_rb,
    link_prediction_eval,
    min_dber_bound,
    representation_bias,
)
from .pipeline import (
    EmbedParams,
    PipelineConfig,
    StageError,
    compare_runs,
    emit_projection,
    expand_report_columns,
    load_report,
    run_pipeline,
    write_projection_csv,
    _jsonable,
)
from .repair import RepairConfig, repair_graph

# Keys accepted in a config file; every one is overridable by a CLI flag.
CONFIG_KEYS = {
    "dataset",
    "nodes",
    "edges",
    "out",
    "eta",
    "mode",
    "solver",
    "epsilon",
    "threshold",
    "symmetrize",
    "normalize_attributes",
    "barycenter_iters",
    "repair_seed",
    "dim",
    "num_walks",
    "walk_length",
    "window",
    "negatives",
    "epochs",
    "lr",
    "p",
    "q",
    "combiner",
    "test_fraction",
    "seeds",
    "jobs",
    "classifier_epochs",
    "classifier_reg",
}


def load_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` config file ('#' starts a comment)."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value
    return values


def _parse_seeds(text: str) -> tuple[int, ...]:
    seeds = tuple(int(s) for s in text.replace(",", " ").split())
    if not seeds:
        raise ValueError("seeds must list at least one integer")
    return seeds


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def resolve_dataset(dataset: str | None, nodes: str | None, edges: str | None) -> tuple[str, str]:
    """Resolve node/edge file paths from explicit flags or a --dataset location.

    ``--dataset`` may be a directory holding ``nodes.tsv``/``edges.tsv`` or a
    single ``*.content``/``*.cites`` pair, or a path prefix for those suffixes.
    """
    if nodes and edges:
        return nodes, edges
    if nodes or edges:
        raise ValueError("provide both --dataset-nodes and --dataset-edges")
    if not dataset:
        raise ValueError("provide --dataset or --dataset-nodes/--dataset-edges")
    p = Path(dataset)
    if p.is_dir():
        if (p / "nodes.tsv").exists() and (p / "edges.tsv").exists():
            return str(p / "nodes.tsv"), str(p / "edges.tsv")
        content = sorted(p.glob("*.content*"))
        cites = sorted(p.glob("*.cites*"))
        if content and cites:
            return str(content[0]), str(cites[0])
        raise ValueError(f"no nodes.tsv/edges.tsv or .content/.cites pair under {p}")
    for node_ext, edge_ext in ((".content", ".cites"), (".content.gz", ".cites.gz")):
        node_path, edge_path = Path(str(p) + node_ext), Path(str(p) + edge_ext)
        if node_path.exists() and edge_path.exists():
            return str(node_path), str(edge_path)
    raise ValueError(f"cannot resolve dataset files from {dataset!r}")


def _build_pipeline_config(args) -> PipelineConfig:
    values: dict[str, str] = {}
    if args.config:
        values.update(load_config_file(args.config))

    def pick(key, flag_value, cast, default):
        if flag_value is not None:
            return flag_value
        if key in values:
            return cast(values[key])
        return default

    dataset = pick("dataset", args.dataset, str, None)
    nodes = pick("nodes", args.dataset_nodes, str, None)
    edges = pick("edges", args.dataset_edges, str, None)
    out = pick("out", args.out, str, None)
    nodes, edges = resolve_dataset(dataset, nodes, edges)
    if not out:
        raise ValueError("out must be provided (flag or config)")

    repair = RepairConfig(
        eta=pick("eta", args.eta, float, 0.5),
        mode=pick("mode", args.mode, str, "auto"),
        solver=pick("solver", args.solver, str, "auto"),
        epsilon=pick("epsilon", args.epsilon, float, None),
        threshold=pick("threshold", args.threshold, float, None),
        symmetrize=pick("symmetrize", None, _bool, True),
        normalize_attributes=pick("normalize_attributes", None, _bool, True),
        seed=pick("repair_seed", None, int, 0),
        barycenter_iters=pick("barycenter_iters", args.barycenter_iters, int, 10),
    )
    embed = EmbedParams(
        dim=pick("dim", args.dim, int, 128),
        num_walks=pick("num_walks", args.num_walks, int, 10),
        walk_length=pick("walk_length", args.walk_length, int, 80),
        window=pick("window", args.window, int, 10),
        negatives=pick("negatives", args.negatives, int, 5),
        epochs=pick("epochs", args.epochs, int, 1),
        lr=pick("lr", args.lr, float, 0.025),
        p=pick("p", args.p, float, 1.0),
        q=pick("q", args.q, float, 1.0),
    )
    classifier = ClassifierConfig(
        epochs=pick("classifier_epochs", None, int, 500),
        reg=pick("classifier_reg", None, float, 1e-3),
    )
    return PipelineConfig(
        nodes=nodes,
        edges=edges,
        out=out,
        repair=repair,
        embed=embed,
        classifier=classifier,
        test_fraction=pick("test_fraction", args.test_fraction, float, 0.1),
        seeds=pick("seeds", _parse_seeds(args.seeds) if args.seeds else None, _parse_seeds, (0, 1, 2, 3, 4)),
        combiner=pick("combiner", args.combiner, str, "hadamard"),
        jobs=pick("jobs", args.jobs, int, 1),
    )


def _add_dataset_flags(parser):
    parser.add_argument(
        "--dataset", help="dataset directory or path prefix (.content/.cites)"
    )
    parser.add_argument("--dataset-nodes", help="node file: id, attributes..., label")
    parser.add_argument("--dataset-edges", help="edge file: id, id[, weight]")


def _add_repair_flags(parser):
    parser.add_argument("--eta", type=float, help="attribute/adjacency cost trade-off in [0, 1]")
    parser.add_argument("--mode", choices=("auto", "binary", "multiclass"))
    parser.add_argument("--solver", choices=("auto", "exact", "entropic"))
    parser.add_argument("--epsilon", type=float, help="entropic regularization strength")
    parser.add_argument("--threshold", type=float, help="re-binarize repaired edges at this weight")
    parser.add_argument("--barycenter-iters", type=int, dest="barycenter_iters")


def _add_embed_flags(parser):
    parser.add_argument("--dim", type=int)
    parser.add_argument("--num-walks", type=int, dest="num_walks")
    parser.add_argument("--walk-length", type=int, dest="walk_length")
    parser.add_argument("--window", type=int)
    parser.add_argument("--negatives", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--p", type=float)
    parser.add_argument("--q", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairlink",
        description="Repair attributed graphs with optimal transport and "
        "evaluate fairness/utility of downstream link prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="load a dataset and write it back in canonical form")
    _add_dataset_flags(p_ingest)
    p_ingest.add_argument("--out", required=True, help="output directory")

    p_repair = sub.add_parser("repair", help="repair a graph and write the weighted result")
    _add_dataset_flags(p_repair)
    _add_repair_flags(p_repair)
    p_repair.add_argument("--out", required=True)
    p_repair.add_argument("--seed", type=int, default=0)

    p_embed = sub.add_parser("embed", help="random walks + skip-gram embedding of a graph")
    _add_dataset_flags(p_embed)
    _add_embed_flags(p_embed)
    p_embed.add_argument("--out", required=True)
    p_embed.add_argument("--seed", type=int, default=0)

    p_eval = sub.add_parser("evaluate", help="score a stored embedding on one edge split")
    _add_dataset_flags(p_eval)
    p_eval.add_argument("--embedding", required=True, help=".npz or text embedding file")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--test-fraction", type=float, dest="test_fraction", default=0.1)
    p_eval.add_argument("--combiner", choices=("hadamard", "concat"), default="hadamard")

    p_pipe = sub.add_parser("pipeline", help="full run: load, repair, embed, predict, measure")
    p_pipe.add_argument("--config", help="flat key=value config file")
    _add_dataset_flags(p_pipe)
    _add_repair_flags(p_pipe)
    _add_embed_flags(p_pipe)
    p_pipe.add_argument("--out")
    p_pipe.add_argument("--seeds", help="comma-separated integer seeds")
    p_pipe.add_argument("--test-fraction", type=float, dest="test_fraction")
    p_pipe.add_argument("--combiner", choices=("hadamard", "concat"))
    p_pipe.add_argument("--jobs", type=int, help="parallel workers for per-seed evaluations")

    p_cmp = sub.add_parser("compare", help="side-by-side table of pipeline reports")
    p_cmp.add_argument("reports", nargs="+", help="report.json files")
    p_cmp.add_argument(
        "--variant",
        choices=("original", "repaired", "both"),
        default="both",
        help="which run of each report becomes a column",
    )

    p_proj = sub.add_parser("project", help="2-D PCA table of a stored embedding")
    _add_dataset_flags(p_proj)
    p_proj.add_argument("--embedding", required=True)
    p_proj.add_argument("--out", required=True, help="output CSV file")
    p_proj.add_argument("--pairs", action="store_true", help="project edge-pair embeddings")
    p_proj.add_argument("--k", type=int, default=2)

    return parser


def _load_embedding_any(path: str) -> EmbeddingMatrix:
    if path.endswith(".npz"):
        return load_embedding(path)
    _, vectors = load_embedding_text(path)
    return EmbeddingMatrix(vectors=vectors, dim=vectors.shape[1])


def _load_graph(args):
    nodes, edges = resolve_dataset(args.dataset, args.dataset_nodes, args.dataset_edges)
    return load_dataset(nodes, edges)


def _cmd_ingest(args) -> int:
    g = _load_graph(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(g, out / "nodes.tsv", out / "edges.tsv")
    print(
        f"nodes={g.n_nodes} edges={g.n_edges} attributes={g.n_attributes} "
        f"groups={len(np.unique(g.sensitive))}"
    )
    return 0


def _cmd_repair(args) -> int:
    g = _load_graph(args)
    cfg = RepairConfig(
        eta=args.eta if args.eta is not None else 0.5,
        mode=args.mode or "auto",
        solver=args.solver or "auto",
        epsilon=args.epsilon,
        threshold=args.threshold,
        seed=args.seed,
        barycenter_iters=args.barycenter_iters or 10,
    )
    repaired = repair_graph(g, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(repaired.graph, out / "repaired_nodes.tsv", out / "repaired_edges.tsv")
    (out / "repair_meta.json").write_text(
        json.dumps(_jsonable(repaired.repair_meta), indent=2, sort_keys=True) + "\n"
    )
    print(f"repaired graph written to {out}")
    return 0


def _cmd_embed(args) -> int:
    g = _load_graph(args)
    corpus = random_walks(
        g,
        num_walks=args.num_walks or 10,
        walk_length=args.walk_length or 80,
        p=args.p or 1.0,
        q=args.q or 1.0,
        seed=args.seed,
    )
    emb = skipgram_train(
        corpus,
        dim=args.dim or 128,
        window=args.window or 10,
        negatives=args.negatives or 5,
        epochs=args.epochs if args.epochs is not None else 1,
        lr=args.lr or 0.025,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_embedding_text(out / "embedding.txt", emb, g.node_ids)
    save_embedding(out / "embedding.npz", emb)
    print(f"embedding ({emb.n_nodes}x{emb.dim}) written to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    g = _load_graph(args)
    emb = _load_embedding_any(args.embedding)
    split = split_edges(g, args.test_fraction, args.seed)
    accuracy, sample = link_prediction_eval(
        emb, g, split, combiner=args.combiner, seed=args.seed
    )
    report = {
        "acc": accuracy,
        "ddi": ddi(sample),
        "dber": dber(sample),
        "rb": representation_bias(emb, g.sensitive, seed=args.seed),
        "dyadic_rb": dyadic_rb(emb, g.edge_list(), g.sensitive, seed=args.seed),
        "assortativity": assortativity(g),
        "min_dber_bound": min_dber_bound(g),
        "diagnostics": _jsonable(assumption_diagnostics(sample).__dict__),
        "seed": args.seed,
        "test_fraction": args.test_fraction,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    return 0


def _cmd_pipeline(args) -> int:
    cfg = _build_pipeline_config(args)
    artifact = run_pipeline(cfg)
    print(f"report written to {artifact.report_path}")
    for variant in ("original", "repaired"):
        agg = artifact.report["runs"][variant]["aggregate"]
        summary = " ".join(f"{k}={agg[k]['mean']:.3f}" for k in ("acc", "ddi", "rb", "dyadic_rb"))
        print(f"{variant}: {summary} ac={agg['assortativity']['mean']:.3f}")
    return 0


def _cmd_compare(args) -> int:
    variants = ("original", "repaired") if args.variant == "both" else (args.variant,)
    summaries = []
    for path in args.reports:
        report = load_report(path)
        summaries.extend(expand_report_columns(report, Path(path).parent.name or path, variants))
    print(compare_runs(summaries))
    return 0


def _cmd_project(args) -> int:
    g = _load_graph(args)
    emb = _load_embedding_any(args.embedding)
    if args.pairs:
        edges = g.edge_list()
        xor = g.sensitive[edges[:, 0]] != g.sensitive[edges[:, 1]]
        rows = emit_projection(
            edge_features(emb, edges, combiner="concat"),
            np.where(xor, "different", "same"),
            ids=[f"{g.node_ids[u]}--{g.node_ids[v]}" for u, v in edges],
            k=args.k,
        )
    else:
        rows = emit_projection(
            emb,
            [g.sensitive_names[s] for s in g.sensitive],
            ids=g.node_ids,
            k=args.k,
        )
    write_projection_csv(args.out, rows, k=args.k)
    print(f"projection written to {args.out}")
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "repair": _cmd_repair,
    "embed": _cmd_embed,
    "evaluate": _cmd_evaluate,
    "pipeline": _cmd_pipeline,
    "compare": _cmd_compare,
    "project": _cmd_project,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
