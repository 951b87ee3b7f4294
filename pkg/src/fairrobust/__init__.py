"""Edge-perturbation attacks on graph recommenders and fairness-robustness reporting."""

from .attack import AttackConfig, AttackResult, IterationLog, run_attack
from .data import (
    Dataset,
    GroupPartition,
    InteractionRecord,
    SplitDataset,
    filter_min_interactions,
    load_interactions,
    partition_consumers,
    partition_providers_by_popularity,
    synth_generate,
    temporal_split,
)
from .graph import (
    AdjacencyMatrix,
    CandidateEdgeSet,
    PerturbationVector,
    apply_perturbation,
    binarize,
    build_adjacency,
    candidate_edges,
    init_perturbation,
    normalize_adjacency,
    perturbation_distance,
)
from .metrics import (
    ExactInputs,
    FairnessOperationalization,
    MetricReport,
    SurrogateInputs,
    demographic_parity,
    exposure,
    group_metric,
    ndcg_at_k,
    precision_at_k,
    visibility,
)
from .model import ModelParams, RecModelConfig, RecommendationLists, bpr_train, forward_scores, init_params, recommend_topk
from .report import (
    EdgeImpact,
    RobustnessReport,
    build_report,
    edge_impact,
    emit_report,
    relative_delta,
    trend_rows,
)

__version__ = "0.1.0"
