"""Checkpoint and config I/O.

Checkpoints are versioned binary containers carrying the embedding
matrices, every weight stack, the graph id-map digest they were trained
against, and the training configuration; a text manifest sits next to each
binary for quick inspection.
"""

from __future__ import annotations

import sys
from dataclasses import asdict
from pathlib import Path

from . import serialize
from .gcn import EmbeddingTable, LayerWeights, ModelParams
from .trainer import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    graph_digest: str,
    train_config: dict | None = None,
    variant: str = "full",
) -> None:
    meta = {
        "dim": params.dim,
        "variant": variant,
        "graph_digest": graph_digest,
        "usu_depth": len(params.usu_weights),
        "dsd_depth": len(params.dsd_weights),
        "sds_depth": len(params.sds_weights),
        "train_config": train_config or {},
    }
    arrays = {name: arr for name, arr in params.items()}
    manifest = "\n".join(
        [
            "graphdx checkpoint",
            f"variant: {variant}",
            f"dim: {params.dim}",
            f"diseases: {params.embeddings.diseases.shape[0]}",
            f"symptoms: {params.embeddings.symptoms.shape[0]}",
            f"usu/dsd/sds depth: {meta['usu_depth']}/{meta['dsd_depth']}/{meta['sds_depth']}",
            f"graph digest: {graph_digest}",
            f"train config: {meta['train_config']}",
        ]
    ) + "\n"
    serialize.write_container(path, "checkpoint", meta, arrays, manifest=manifest)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    meta, arrays = serialize.read_container(path, "checkpoint")

    def stack(prefix: str, depth: int) -> list[LayerWeights]:
        return [
            LayerWeights(arrays[f"{prefix}{t}_w1"], arrays[f"{prefix}{t}_w2"])
            for t in range(depth)
        ]

    params = ModelParams(
        EmbeddingTable(arrays["dis"], arrays["sym"]),
        stack("usu", meta["usu_depth"]),
        stack("dsd", meta["dsd_depth"]),
        stack("sds", meta["sds_depth"]),
    )
    return params, meta


def load_toml(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def train_config_from_dict(d: dict) -> TrainConfig:
    known = {k: v for k, v in d.items() if k in TrainConfig.__dataclass_fields__}
    return TrainConfig(**known)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
