"""Serialization of learned clustering models.

The JSON layout is fixed: K, L, h, d_max, span_limit, containers (VN id
sets), options (container-id lists per basis FN), beta, mask (True = pruned)
and optional nbp_weights with shape (iterations, container-graph edges).
Floats survive the round trip bit-exactly (json uses repr).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import ChannelSpec
from .cluster import ClusterWeights, Container, ContainerSet, cyclic_span


@dataclass
class ClusterModel:
    spec: ChannelSpec
    k: int
    d_max: int
    span_limit: int
    containers: ContainerSet
    options: list[list[int]]
    weights: ClusterWeights
    nbp_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.nbp_weights is not None:
            self.nbp_weights = np.asarray(self.nbp_weights, dtype=float)
            edges = self.containers.count * self.d_max
            if self.nbp_weights.ndim != 2 or self.nbp_weights.shape[1] != edges:
                raise ValueError(
                    f"nbp weights must have shape (iterations, {edges})"
                )


def save_model(model: ClusterModel, path) -> None:
    doc = {
        "K": model.k,
        "L": model.spec.memory,
        "h": list(model.spec.taps),
        "d_max": model.d_max,
        "span_limit": model.span_limit,
        "containers": [list(c.vn_set) for c in model.containers.containers],
        "options": [list(o) for o in model.options],
        "beta": [b.tolist() for b in model.weights.beta],
        "mask": [m.tolist() for m in model.weights.mask],
        "nbp_weights": None
        if model.nbp_weights is None
        else model.nbp_weights.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> ClusterModel:
    try:
        doc = json.loads(Path(path).read_text())
        spec = ChannelSpec(tuple(doc["h"]))
        k = int(doc["K"])
        if spec.memory != int(doc["L"]):
            raise ValueError("h and L disagree")
        containers = tuple(
            Container(i + 1, tuple(vns), *cyclic_span(vns, k))
            for i, vns in enumerate(doc["containers"])
        )
        cs = ContainerSet(containers, k, int(doc["d_max"]), int(doc["span_limit"]))
        weights = ClusterWeights(
            [np.array(b, dtype=float) for b in doc["beta"]],
            [np.array(m, dtype=bool) for m in doc["mask"]],
        )
        nbp = doc.get("nbp_weights")
        return ClusterModel(
            spec,
            k,
            cs.d_max,
            cs.span_limit,
            cs,
            [list(map(int, o)) for o in doc["options"]],
            weights,
            None if nbp is None else np.array(nbp, dtype=float),
        )
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ValueError(f"malformed model file {path}: {exc}") from exc
