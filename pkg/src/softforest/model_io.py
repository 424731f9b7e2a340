"""Model file serialization: schema, standardizer and parameters as JSON.

Format version 1. Floats are rendered with Python's shortest round-trip
representation, so save -> load -> save reproduces identical bytes and
every 64-bit parameter survives exactly. The standardizer statistics are
embedded so prediction and evaluation never need the training set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .attention import AttentionParameters
from .data import DatasetSchema, MULTICLASS, Standardizer
from .errors import ModelFormatError
from .forest import ForestParameters
from .objective import TaskBinding

FORMAT_VERSION = 1


@dataclass
class LoadedModel:
    schema: DatasetSchema
    standardizer: Standardizer
    forest: ForestParameters
    attention: AttentionParameters

    @property
    def binding(self) -> TaskBinding:
        if self.schema.target_kind == MULTICLASS:
            return TaskBinding.multiclass(self.schema.classes)
        return TaskBinding(self.schema.target_kind)


def _flat(array: np.ndarray) -> list[float]:
    return np.asarray(array, dtype=np.float64).reshape(-1).tolist()


def save_model(
    path,
    schema: DatasetSchema,
    standardizer: Standardizer,
    forest: ForestParameters,
    attention: AttentionParameters,
) -> None:
    """Write the model as one JSON object (format version 1)."""
    trees = [
        {
            "node_weights": _flat(forest.node_weights[h]),
            "node_thresholds": _flat(forest.node_thresholds[h]),
            "leaf_responses": _flat(forest.leaf_responses[h]),
        }
        for h in range(forest.num_trees)
    ]
    document = {
        "format_version": FORMAT_VERSION,
        "schema": {
            "feature_count": schema.feature_count,
            "target_kind": schema.target_kind,
            "target_column": schema.target_column,
            "classes": schema.classes,
        },
        "standardizer": {
            "means": _flat(standardizer.means),
            "stds": _flat(standardizer.stds),
        },
        "config": {
            "trees": forest.num_trees,
            "depth": forest.depth,
            "response_dim": forest.response_dim,
            "reduction": attention.reduction,
            "gate_kind": attention.gate_kind,
        },
        "parameters": {
            "trees": trees,
            "attention_reduce": _flat(attention.reduce_weights),
            "attention_expand": _flat(attention.expand_weights),
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(document, fh)
        fh.write("\n")


def _require(mapping, key, path):
    try:
        return mapping[key]
    except (KeyError, TypeError):
        raise ModelFormatError(f"{path}: missing field {key!r}") from None


def load_model(path) -> LoadedModel:
    """Read a model file, rejecting unknown future format versions."""
    with open(path, encoding="utf-8") as fh:
        try:
            document = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    version = _require(document, "format_version", path)
    if not isinstance(version, int):
        raise ModelFormatError(f"{path}: format_version must be an integer")
    if version > FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: format version {version} is newer than supported "
            f"version {FORMAT_VERSION}"
        )

    raw_schema = _require(document, "schema", path)
    schema = DatasetSchema(
        feature_count=_require(raw_schema, "feature_count", path),
        target_kind=_require(raw_schema, "target_kind", path),
        target_column=_require(raw_schema, "target_column", path),
        classes=_require(raw_schema, "classes", path),
    )
    raw_std = _require(document, "standardizer", path)
    standardizer = Standardizer(
        means=np.asarray(_require(raw_std, "means", path), dtype=np.float64),
        stds=np.asarray(_require(raw_std, "stds", path), dtype=np.float64),
    )
    config = _require(document, "config", path)
    num_trees = _require(config, "trees", path)
    depth = _require(config, "depth", path)
    response_dim = _require(config, "response_dim", path)
    gate_kind = _require(config, "gate_kind", path)
    n_internal = (1 << depth) - 1
    n_leaves = 1 << depth
    m = schema.feature_count

    raw_params = _require(document, "parameters", path)
    raw_trees = _require(raw_params, "trees", path)
    if len(raw_trees) != num_trees:
        raise ModelFormatError(
            f"{path}: config says {num_trees} trees, file has {len(raw_trees)}"
        )
    node_weights = np.empty((num_trees, n_internal, m))
    node_thresholds = np.empty((num_trees, n_internal))
    leaf_responses = np.empty((num_trees, n_leaves, response_dim))
    for h, raw_tree in enumerate(raw_trees):
        try:
            node_weights[h] = np.asarray(
                _require(raw_tree, "node_weights", path), dtype=np.float64
            ).reshape(n_internal, m)
            node_thresholds[h] = np.asarray(
                _require(raw_tree, "node_thresholds", path), dtype=np.float64
            )
            leaf_responses[h] = np.asarray(
                _require(raw_tree, "leaf_responses", path), dtype=np.float64
            ).reshape(n_leaves, response_dim)
        except ValueError as exc:
            raise ModelFormatError(f"{path}: tree {h}: {exc}") from None
    forest = ForestParameters(
        depth=depth,
        node_weights=node_weights,
        node_thresholds=node_thresholds,
        leaf_responses=leaf_responses,
    )

    hidden = max(1, num_trees // config["reduction"]) if gate_kind != "off" else 0
    try:
        reduce_weights = np.asarray(
            _require(raw_params, "attention_reduce", path), dtype=np.float64
        ).reshape(hidden, num_trees)
        expand_weights = np.asarray(
            _require(raw_params, "attention_expand", path), dtype=np.float64
        ).reshape(num_trees, hidden)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: attention weights: {exc}") from None
    attention = AttentionParameters(
        reduce_weights=reduce_weights,
        expand_weights=expand_weights,
        reduction=_require(config, "reduction", path),
        gate_kind=gate_kind,
    )
    return LoadedModel(
        schema=schema, standardizer=standardizer, forest=forest, attention=attention
    )
