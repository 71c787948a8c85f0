import json
from pathlib import Path

import numpy as np
import pytest

from fairlink import (
    EmbedParams,
    PipelineConfig,
    RepairConfig,
    StageError,
    compare_runs,
    run_pipeline,
    save_graph,
)
from fairlink.cli import load_config_file, main, resolve_dataset
from fairlink.embed import load_embedding_text, pca_project
from fairlink.pipeline import expand_report_columns, load_report
from synth import make_attributed_graph


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    g = make_attributed_graph(40, groups=2, d=4, homophily=0.9, avg_degree=6, seed=21)
    nodes, edges = root / "synthetic.content", root / "synthetic.cites"
    save_graph(g, nodes, edges)
    return g, str(nodes), str(edges)


def small_config(nodes, edges, out, seeds=(0, 1), jobs=1):
    return PipelineConfig(
        nodes=nodes,
        edges=edges,
        out=str(out),
        repair=RepairConfig(barycenter_iters=4),
        embed=EmbedParams(
            dim=12, num_walks=3, walk_length=8, window=3, negatives=3, epochs=1
        ),
        test_fraction=0.15,
        seeds=seeds,
        jobs=jobs,
    )


class TestRunPipeline:
    def test_full_run_artifacts(self, dataset, tmp_path):
        g, nodes, edges = dataset
        cfg = small_config(nodes, edges, tmp_path / "run")
        artifact = run_pipeline(cfg)
        assert artifact.report_path.exists()
        assert not (artifact.out_dir / "FAILED").exists()
        for path in artifact.repaired_graph_paths:
            assert path.exists()
        report = artifact.report
        assert set(report["runs"]) == {"original", "repaired"}
        assert len(report["runs"]["original"]["per_seed"]) == 2
        agg = report["runs"]["original"]["aggregate"]
        assert set(agg) >= {"acc", "ddi", "rb", "dyadic_rb", "assortativity"}
        # control pairing: both variants evaluated on the same seeds
        assert report["seeds"] == [0, 1]

    def test_repair_reduces_assortativity(self, dataset, tmp_path):
        g, nodes, edges = dataset
        cfg = small_config(nodes, edges, tmp_path / "run")
        artifact = run_pipeline(cfg)
        runs = artifact.report["runs"]
        ac_orig = runs["original"]["aggregate"]["assortativity"]["mean"]
        ac_rep = runs["repaired"]["aggregate"]["assortativity"]["mean"]
        assert ac_rep < ac_orig

    def test_byte_identical_reports(self, dataset, tmp_path):
        g, nodes, edges = dataset
        cfg = small_config(nodes, edges, tmp_path / "run")
        first = run_pipeline(cfg).report_path.read_bytes()
        second = run_pipeline(cfg).report_path.read_bytes()
        assert first == second

    def test_jobs_parallel_matches_sequential(self, dataset, tmp_path):
        g, nodes, edges = dataset
        seq = run_pipeline(small_config(nodes, edges, tmp_path / "a", jobs=1))
        par = run_pipeline(small_config(nodes, edges, tmp_path / "a", jobs=2))
        assert seq.report_path.read_bytes() == par.report_path.read_bytes()

    def test_failure_leaves_marker(self, dataset, tmp_path):
        g, nodes, edges = dataset
        cfg = small_config(nodes, "/nonexistent/edges.tsv", tmp_path / "bad")
        with pytest.raises(StageError, match="load"):
            run_pipeline(cfg)
        marker = tmp_path / "bad" / "FAILED"
        assert marker.exists()
        assert "load" in marker.read_text()

    def test_projection_tables(self, dataset, tmp_path):
        g, nodes, edges = dataset
        artifact = run_pipeline(small_config(nodes, edges, tmp_path / "run"))
        node_csv = artifact.projection_paths["original"]["nodes"].read_text().splitlines()
        assert len(node_csv) == g.n_nodes + 1  # header + one row per node
        pair_csv = artifact.projection_paths["original"]["pairs"].read_text().splitlines()
        labels = {line.rsplit(",", 1)[1] for line in pair_csv[1:]}
        assert labels <= {"same", "different"}
        # projection columns reproduce pca_project on the stored embedding
        emb_path = artifact.embedding_paths[("original", 0)]["text"]
        _, vectors = load_embedding_text(emb_path)
        expected = pca_project(vectors, 2).projected
        got = np.array(
            [[float(line.split(",")[1]), float(line.split(",")[2])] for line in node_csv[1:]]
        )
        assert np.abs(got - expected).max() < 1e-10


@pytest.mark.slow
class TestSyntheticTrends:
    """End-to-end repair trends on a generated homophilous graph.

    Synthetic stand-in for the dataset-dependent acceptance trends: the
    repaired pipeline should trade link accuracy for fairness across every
    reported metric.
    """

    @pytest.fixture(scope="class")
    @staticmethod
    def trend_report(tmp_path_factory):
        root = tmp_path_factory.mktemp("trend")
        g = make_attributed_graph(
            70, groups=3, d=6, homophily=0.92, avg_degree=8,
            attr_separation=3.0, seed=33,
        )
        save_graph(g, root / "g.content", root / "g.cites")
        cfg = PipelineConfig(
            nodes=str(root / "g.content"),
            edges=str(root / "g.cites"),
            out=str(root / "run"),
            repair=RepairConfig(barycenter_iters=6),
            embed=EmbedParams(
                dim=24, num_walks=10, walk_length=20, window=4, negatives=5,
                epochs=3, lr=0.05,
            ),
            test_fraction=0.15,
            seeds=(0, 1, 2),
        )
        artifact = run_pipeline(cfg)
        return {v: artifact.report["runs"][v]["aggregate"] for v in ("original", "repaired")}

    def test_original_pipeline_learns(self, trend_report):
        assert trend_report["original"]["acc"]["mean"] >= 0.6

    def test_ddi_increases(self, trend_report):
        assert (
            trend_report["repaired"]["ddi"]["mean"]
            > trend_report["original"]["ddi"]["mean"]
        )

    def test_rb_decreases(self, trend_report):
        assert (
            trend_report["repaired"]["rb"]["mean"]
            < trend_report["original"]["rb"]["mean"]
        )

    def test_dyadic_rb_decreases(self, trend_report):
        assert (
            trend_report["repaired"]["dyadic_rb"]["mean"]
            < trend_report["original"]["dyadic_rb"]["mean"]
        )

    def test_assortativity_collapses(self, trend_report):
        assert trend_report["original"]["assortativity"]["mean"] > 0.7
        assert trend_report["repaired"]["assortativity"]["mean"] < 0.2


class TestCompareRuns:
    def _summaries(self, dataset, tmp_path):
        g, nodes, edges = dataset
        artifact = run_pipeline(small_config(nodes, edges, tmp_path / "run"))
        return artifact.report

    def test_identical_reports_zero_delta(self, dataset, tmp_path):
        report = self._summaries(dataset, tmp_path)
        cols = expand_report_columns(report, "a") + expand_report_columns(report, "b")
        table = compare_runs(cols)
        lines = table.splitlines()
        assert "a:original" in lines[0] and "b:repaired" in lines[0]
        for line in lines[2:]:
            cells = line.split()
            assert cells[1] == cells[3] and cells[2] == cells[4]

    def test_three_runs_three_columns(self, dataset, tmp_path):
        report = self._summaries(dataset, tmp_path)
        cols = [
            expand_report_columns(report, label, variants=("repaired",))[0]
            for label in ("r1", "r2", "r3")
        ]
        header = compare_runs(cols).splitlines()[0].split()
        assert header == ["metric", "r1:repaired", "r2:repaired", "r3:repaired"]

    def test_dataset_mismatch_rejected(self, dataset, tmp_path):
        report = self._summaries(dataset, tmp_path)
        cols = expand_report_columns(report, "a")
        other = dict(cols[0])
        other["dataset"] = "different"
        with pytest.raises(ValueError, match="mismatch"):
            compare_runs([cols[0], other])

    def test_single_run_rejected(self):
        with pytest.raises(ValueError, match="at least 2"):
            compare_runs([{"label": "x", "dataset": "d", "aggregate": {}}])


class TestCLI:
    def test_ingest(self, dataset, tmp_path, capsys):
        g, nodes, edges = dataset
        rc = main(["ingest", "--dataset-nodes", nodes, "--dataset-edges", edges,
                   "--out", str(tmp_path / "ingest")])
        assert rc == 0
        out = capsys.readouterr().out
        assert f"nodes={g.n_nodes}" in out
        assert (tmp_path / "ingest" / "nodes.tsv").exists()

    def test_repair_and_embed_and_evaluate(self, dataset, tmp_path, capsys):
        g, nodes, edges = dataset
        rep_dir = tmp_path / "rep"
        assert main([
            "repair", "--dataset-nodes", nodes, "--dataset-edges", edges,
            "--eta", "0.5", "--out", str(rep_dir),
        ]) == 0
        assert (rep_dir / "repaired_edges.tsv").exists()
        meta = json.loads((rep_dir / "repair_meta.json").read_text())
        assert meta["eta"] == 0.5

        emb_dir = tmp_path / "emb"
        assert main([
            "embed",
            "--dataset-nodes", str(rep_dir / "repaired_nodes.tsv"),
            "--dataset-edges", str(rep_dir / "repaired_edges.tsv"),
            "--dim", "8", "--num-walks", "2", "--walk-length", "6",
            "--window", "2", "--negatives", "2",
            "--out", str(emb_dir), "--seed", "3",
        ]) == 0
        assert (emb_dir / "embedding.npz").exists()

        eval_dir = tmp_path / "eval"
        assert main([
            "evaluate", "--dataset-nodes", nodes, "--dataset-edges", edges,
            "--embedding", str(emb_dir / "embedding.npz"),
            "--out", str(eval_dir), "--seed", "0", "--test-fraction", "0.2",
        ]) == 0
        metrics = json.loads((eval_dir / "metrics.json").read_text())
        assert {"acc", "ddi", "rb", "dyadic_rb"} <= set(metrics)

    def test_pipeline_and_compare(self, dataset, tmp_path, capsys):
        g, nodes, edges = dataset
        out = tmp_path / "pipe"
        rc = main([
            "pipeline", "--dataset-nodes", nodes, "--dataset-edges", edges,
            "--out", str(out), "--seeds", "0,1", "--test-fraction", "0.15",
            "--dim", "10", "--num-walks", "2", "--walk-length", "6",
            "--window", "2", "--negatives", "2", "--barycenter-iters", "3",
        ])
        assert rc == 0
        assert (out / "report.json").exists()
        rc = main(["compare", str(out / "report.json"), str(out / "report.json")])
        assert rc == 0
        table = capsys.readouterr().out
        assert "DDI" in table and "AC" in table

    def test_pipeline_config_file_with_flag_override(self, dataset, tmp_path, capsys):
        g, nodes, edges = dataset
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            f"nodes = {nodes}\n"
            f"edges = {edges}\n"
            f"out = {tmp_path / 'from_config'}\n"
            "seeds = 0\n"
            "dim = 8\n"
            "num_walks = 2\n"
            "walk_length = 6\n"
            "window = 2\n"
            "negatives = 2\n"
            "test_fraction = 0.15\n"
            "barycenter_iters = 3\n"
            "eta = 0.25  # overridden by the flag below\n"
        )
        rc = main(["pipeline", "--config", str(cfg_file), "--eta", "0.75"])
        assert rc == 0
        report = load_report(tmp_path / "from_config" / "report.json")
        assert report["config"]["repair"]["eta"] == 0.75

    def test_project_command(self, dataset, tmp_path, capsys):
        g, nodes, edges = dataset
        emb_dir = tmp_path / "emb2"
        main([
            "embed", "--dataset-nodes", nodes, "--dataset-edges", edges,
            "--dim", "6", "--num-walks", "2", "--walk-length", "5",
            "--window", "2", "--negatives", "2", "--out", str(emb_dir),
        ])
        out_csv = tmp_path / "proj.csv"
        rc = main([
            "project", "--dataset-nodes", nodes, "--dataset-edges", edges,
            "--embedding", str(emb_dir / "embedding.npz"), "--out", str(out_csv),
        ])
        assert rc == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "id,proj_1,proj_2,label"
        assert len(lines) == g.n_nodes + 1

    def test_error_exit_code(self, tmp_path, capsys):
        rc = main(["ingest", "--dataset-nodes", "missing.tsv",
                   "--dataset-edges", "missing2.tsv", "--out", str(tmp_path)])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("not_a_key = 1\n")
        with pytest.raises(ValueError, match="unknown config key"):
            load_config_file(bad)

    def test_resolve_dataset_prefix_and_dir(self, dataset, tmp_path):
        g, nodes, edges = dataset
        prefix = nodes[: -len(".content")]
        assert resolve_dataset(prefix, None, None) == (nodes, edges)
        parent = str(Path(nodes).parent)
        got = resolve_dataset(parent, None, None)
        assert got == (nodes, edges)

