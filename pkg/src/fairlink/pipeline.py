"""End-to-end orchestration: load, repair, embed, predict, measure, report."""

from __future__ import annotations

import csv
import json
import subprocess
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .embed import (
    EmbeddingMatrix,
    edge_features,
    pca_project,
    random_walks,
    save_embedding,
    save_embedding_text,
    skipgram_train,
)
from .graph import Graph, load_dataset, save_graph, split_edges
from .metrics import (
    AssumptionDiagnostics,
    ClassifierConfig,
    MetricsReport,
    assortativity,
    assumption_diagnostics,
    dber,
    ddi,
    dyadic_rb,
    link_prediction_eval,
    min_dber_bound,
    representation_bias,
)
from .repair import RepairConfig, repair_graph

__all__ = [
    "EmbedParams",
    "PipelineConfig",
    "RunArtifact",
    "StageError",
    "run_pipeline",
    "emit_projection",
    "write_projection_csv",
    "compare_runs",
    "load_report",
]

VARIANTS = ("original", "repaired")


class StageError(RuntimeError):
    """Failure of a named pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class EmbedParams:
    """Walk and skip-gram settings for the embedding stage."""

    dim: int = 128
    num_walks: int = 10
    walk_length: int = 80
    window: int = 10
    negatives: int = 5
    epochs: int = 1
    lr: float = 0.025
    p: float = 1.0
    q: float = 1.0


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one full run needs; every field is echoed into the report."""

    nodes: str
    edges: str
    out: str
    repair: RepairConfig = field(default_factory=RepairConfig)
    embed: EmbedParams = field(default_factory=EmbedParams)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    test_fraction: float = 0.1
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    combiner: str = "hadamard"
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in [0, 1)")
        if self.combiner not in ("hadamard", "concat"):
            raise ValueError(f"unknown combiner {self.combiner!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

    def echo(self) -> dict:
        return _jsonable(asdict(self))


@dataclass(frozen=True, eq=False)
class RunArtifact:
    """Locations and contents of everything a pipeline run produced."""

    out_dir: Path
    report_path: Path
    report: dict
    reports: dict                 # variant -> list[MetricsReport]
    repaired_graph_paths: tuple[Path, Path]
    embedding_paths: dict         # (variant, seed) -> {"text": Path, "binary": Path}
    projection_paths: dict        # variant -> {"nodes": Path, "pairs": Path}


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


def code_version() -> str:
    """Git description of the running code, falling back to the package version."""
    try:
        out = subprocess.run(
            ["git", "-C", str(Path(__file__).resolve().parent), "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"fairlink-{__version__}"


def _without_edges(g: Graph, pairs: np.ndarray) -> Graph:
    adjacency = np.array(g.adjacency)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    adjacency[pairs[:, 0], pairs[:, 1]] = 0.0
    adjacency[pairs[:, 1], pairs[:, 0]] = 0.0
    return g.with_adjacency(adjacency)


def _aggregate(reports: list[MetricsReport]) -> dict:
    out = {}
    for name in MetricsReport.SCORE_FIELDS:
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        out[name] = {"mean": float(values.mean()), "std": std}
    return out


def _evaluate_seed(
    variant_graph: Graph,
    original: Graph,
    seed: int,
    cfg: PipelineConfig,
    graph_stats: dict,
) -> tuple[MetricsReport, AssumptionDiagnostics, EmbeddingMatrix]:
    """One seeded evaluation: split, embed on the train graph, predict, measure."""
    split = split_edges(original, cfg.test_fraction, seed)
    train_graph = _without_edges(variant_graph, split.test_pos)
    corpus = random_walks(
        train_graph,
        num_walks=cfg.embed.num_walks,
        walk_length=cfg.embed.walk_length,
        p=cfg.embed.p,
        q=cfg.embed.q,
        seed=seed,
    )
    emb = skipgram_train(
        corpus,
        dim=cfg.embed.dim,
        window=cfg.embed.window,
        negatives=cfg.embed.negatives,
        epochs=cfg.embed.epochs,
        lr=cfg.embed.lr,
        seed=seed,
    )
    accuracy, sample = link_prediction_eval(
        emb, original, split, combiner=cfg.combiner, seed=seed, cfg=cfg.classifier
    )
    report = MetricsReport(
        acc=accuracy,
        ddi=ddi(sample),
        dber=dber(sample),
        rb=representation_bias(emb, original.sensitive, seed=seed, cfg=cfg.classifier),
        dyadic_rb=dyadic_rb(
            emb, original.edge_list(), original.sensitive, seed=seed, cfg=cfg.classifier
        ),
        assortativity=graph_stats["assortativity"],
        min_dber_bound=graph_stats["min_dber_bound"],
        config=cfg.echo(),
        seeds=(seed,),
    )
    return report, assumption_diagnostics(sample), emb


def emit_projection(data, labels, ids=None, k: int = 2) -> list[tuple]:
    """Rows (id, proj_1..proj_k, label) of the PCA projection of ``data``."""
    if data is None:
        raise ValueError("missing embedding")
    matrix = data.vectors if isinstance(data, EmbeddingMatrix) else np.asarray(data, dtype=np.float64)
    labels = list(labels)
    if len(labels) != len(matrix):
        raise ValueError("one label per row is required")
    if ids is None:
        ids = [str(i) for i in range(len(matrix))]
    ids = [str(i) for i in ids]
    if len(ids) != len(matrix):
        raise ValueError("one id per row is required")
    projected = pca_project(matrix, k).projected
    return [
        (ids[i], *(float(v) for v in projected[i]), str(labels[i]))
        for i in range(len(matrix))
    ]


def write_projection_csv(path: str | Path, rows: list[tuple], k: int = 2) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *(f"proj_{i + 1}" for i in range(k)), "label"])
        writer.writerows(rows)


def run_pipeline(cfg: PipelineConfig) -> RunArtifact:
    """Execute the full repair/evaluation pipeline and write every artifact.

    The repaired run and its unrepaired control share the same per-seed edge
    splits, so metric deltas are free of split noise. Any stage failure leaves
    a FAILED marker in the output directory and raises a StageError naming the
    stage.
    """
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failed_marker = out_dir / "FAILED"
    stage = "setup"
    try:
        stage = "load"
        for path in (cfg.nodes, cfg.edges):
            if not Path(path).exists():
                raise FileNotFoundError(f"dataset file not found: {path}")
        original = load_dataset(cfg.nodes, cfg.edges)

        stage = "repair"
        repaired = repair_graph(original, cfg.repair)
        repaired_nodes = out_dir / "repaired_nodes.tsv"
        repaired_edges = out_dir / "repaired_edges.tsv"
        save_graph(repaired.graph, repaired_nodes, repaired_edges)

        stage = "evaluate"
        graphs = {"original": original, "repaired": repaired.graph}
        graph_stats = {
            name: {
                "assortativity": assortativity(g),
                "min_dber_bound": min_dber_bound(g),
            }
            for name, g in graphs.items()
        }
        tasks = [(variant, seed) for variant in VARIANTS for seed in cfg.seeds]

        def run_task(task):
            variant, seed = task
            return _evaluate_seed(graphs[variant], original, seed, cfg, graph_stats[variant])

        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(run_task, tasks))
        else:
            results = [run_task(t) for t in tasks]

        reports: dict[str, list[MetricsReport]] = {v: [] for v in VARIANTS}
        diagnostics: dict[str, list[AssumptionDiagnostics]] = {v: [] for v in VARIANTS}
        embeddings: dict[tuple[str, int], EmbeddingMatrix] = {}
        for (variant, seed), (report, diag, emb) in zip(tasks, results):
            reports[variant].append(report)
            diagnostics[variant].append(diag)
            embeddings[(variant, seed)] = emb

        stage = "artifacts"
        embedding_paths = {}
        for (variant, seed), emb in embeddings.items():
            text_path = out_dir / f"embedding_{variant}_seed{seed}.txt"
            binary_path = out_dir / f"embedding_{variant}_seed{seed}.npz"
            save_embedding_text(text_path, emb, original.node_ids)
            save_embedding(binary_path, emb)
            embedding_paths[(variant, seed)] = {"text": text_path, "binary": binary_path}

        projection_paths = {}
        first_seed = cfg.seeds[0]
        edges = original.edge_list()
        xor_names = np.where(
            original.sensitive[edges[:, 0]] != original.sensitive[edges[:, 1]],
            "different",
            "same",
        )
        for variant in VARIANTS:
            emb = embeddings[(variant, first_seed)]
            node_rows = emit_projection(
                emb,
                [original.sensitive_names[s] for s in original.sensitive],
                ids=original.node_ids,
            )
            node_path = out_dir / f"projection_nodes_{variant}.csv"
            write_projection_csv(node_path, node_rows)
            pair_rows = emit_projection(
                edge_features(emb, edges, combiner="concat"),
                xor_names,
                ids=[f"{original.node_ids[u]}--{original.node_ids[v]}" for u, v in edges],
            )
            pair_path = out_dir / f"projection_pairs_{variant}.csv"
            write_projection_csv(pair_path, pair_rows)
            projection_paths[variant] = {"nodes": node_path, "pairs": pair_path}

        stage = "report"
        report = {
            "dataset": {
                "name": Path(cfg.nodes).stem,
                "nodes": str(cfg.nodes),
                "edges": str(cfg.edges),
                "n_nodes": original.n_nodes,
                "n_edges": int(original.n_edges),
                "n_attributes": original.n_attributes,
                "n_groups": int(len(np.unique(original.sensitive))),
            },
            "code_version": code_version(),
            "config": cfg.echo(),
            "seeds": list(cfg.seeds),
            "repair_meta": _jsonable(repaired.repair_meta),
            "runs": {
                variant: {
                    "per_seed": [r.to_dict() for r in reports[variant]],
                    "aggregate": _aggregate(reports[variant]),
                }
                for variant in VARIANTS
            },
            "diagnostics": {
                variant: [_jsonable(asdict(d)) for d in diagnostics[variant]]
                for variant in VARIANTS
            },
        }
        report_path = out_dir / "report.json"
        report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

        csv_path = out_dir / "metrics.csv"
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("variant,seed," + MetricsReport.csv_header() + "\n")
            for variant in VARIANTS:
                for r in reports[variant]:
                    fh.write(f"{variant},{r.seeds[0]}," + r.to_csv_row() + "\n")

        failed_marker.unlink(missing_ok=True)
        return RunArtifact(
            out_dir=out_dir,
            report_path=report_path,
            report=report,
            reports=reports,
            repaired_graph_paths=(repaired_nodes, repaired_edges),
            embedding_paths=embedding_paths,
            projection_paths=projection_paths,
        )
    except Exception as exc:
        failed_marker.write_text(
            f"stage: {stage}\nerror: {exc}\n\n{traceback.format_exc()}"
        )
        raise StageError(stage, exc) from exc


def load_report(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


_COMPARE_ROWS = (
    ("ACC", "acc"),
    ("DDI", "ddi"),
    ("RB", "rb"),
    ("DyadicRB", "dyadic_rb"),
    ("AC", "assortativity"),
)


def compare_runs(summaries: list[dict]) -> str:
    """Side-by-side mean±std table for runs on the same dataset.

    Each summary is ``{"label", "dataset", "aggregate"}`` where ``aggregate``
    maps metric names to mean/std pairs (one column per summary).
    """
    if len(summaries) < 2:
        raise ValueError("need at least 2 runs to compare")
    datasets = {s["dataset"] for s in summaries}
    if len(datasets) > 1:
        raise ValueError(f"dataset mismatch across reports: {sorted(datasets)}")
    labels = [s["label"] for s in summaries]
    header = ["metric", *labels]
    table = [header]
    for display, key in _COMPARE_ROWS:
        row = [display]
        for s in summaries:
            cell = s["aggregate"][key]
            row.append(f"{cell['mean']:.3f}±{cell['std']:.3f}")
        table.append(row)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
        if idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def expand_report_columns(report: dict, label: str, variants=VARIANTS) -> list[dict]:
    """Flatten a pipeline report into compare_runs column summaries."""
    out = []
    for variant in variants:
        if variant in report.get("runs", {}):
            out.append(
                {
                    "label": f"{label}:{variant}",
                    "dataset": report["dataset"]["name"],
                    "aggregate": report["runs"][variant]["aggregate"],
                }
            )
    return out
