"""Optimal-transport graph repair for dyadically fair link prediction."""

__version__ = "0.1.0"

from .graph import (
    DatasetError,
    EdgeSplit,
    Graph,
    GroupView,
    load_dataset,
    sample_non_edges,
    save_graph,
    split_edges,
    split_groups,
)
from .ot import (
    BarycenterResult,
    CostMatrix,
    TransportPlan,
    cost_hamming,
    cost_sqeuclidean,
    free_support_barycenter,
    sinkhorn,
    solve_exact,
    wasserstein,
)
from .repair import (
    RepairConfig,
    RepairedGraph,
    dyadic_cost,
    heterophily_dropout,
    reassemble_graph,
    repair_binary,
    repair_graph,
    repair_multiclass,
)
from .embed import (
    EmbeddingMatrix,
    PCAResult,
    WalkCorpus,
    edge_features,
    pca_project,
    random_walks,
    skipgram_pair_loss,
    skipgram_train,
    transition_probs,
)
from .metrics import (
    AssumptionDiagnostics,
    ClassifierConfig,
    DyadicSample,
    LinearClassifier,
    MetricsReport,
    assortativity,
    assumption_diagnostics,
    dber,
    ddi,
    dyadic_rb,
    link_prediction_eval,
    min_dber_bound,
    min_dber_bruteforce,
    representation_bias,
    train_classifier,
    xor_conditional_joints,
)
from .pipeline import (
    EmbedParams,
    PipelineConfig,
    RunArtifact,
    StageError,
    compare_runs,
    emit_projection,
    run_pipeline,
)

__all__ = [name for name in dir() if not name.startswith("_")]
