"""Inductive heterogeneous graph-convolutional disease diagnosis toolkit."""

from .graph import (
    HeteroGraph,
    NodeId,
    NodeKind,
    VisitRecord,
    disease,
    load_records,
    symptom,
    user,
)
from .sampling import DSD, SDS, USU, MetaPath, SampledTree, sample_tree
from .gcn import (
    DSD_ONLY,
    FULL,
    LOCAL,
    USU_ONLY,
    EmbeddingTable,
    GcnVariant,
    LayerWeights,
    ModelParams,
    aggregate_user,
    forward_dsd,
    forward_usu,
    init_params,
    message,
    propagate_layer,
    score,
)
from .forward import disease_profiles, rank_diseases, user_profile

__all__ = [
    "HeteroGraph",
    "NodeId",
    "NodeKind",
    "VisitRecord",
    "disease",
    "load_records",
    "symptom",
    "user",
    "DSD",
    "SDS",
    "USU",
    "MetaPath",
    "SampledTree",
    "sample_tree",
    "DSD_ONLY",
    "FULL",
    "LOCAL",
    "USU_ONLY",
    "EmbeddingTable",
    "GcnVariant",
    "LayerWeights",
    "ModelParams",
    "aggregate_user",
    "forward_dsd",
    "forward_usu",
    "init_params",
    "message",
    "propagate_layer",
    "score",
    "disease_profiles",
    "rank_diseases",
    "user_profile",
]

__version__ = "0.1.0"
