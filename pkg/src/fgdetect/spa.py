"""Flooding-schedule sum-product algorithm on binary factor graphs.

Two implementations share one set of conventions:

* :func:`run_spa` is a direct per-graph loop used as the readable reference
  and for small test graphs.
* :class:`BatchStructure` / :func:`run_batch_spa` is a vectorized engine,
  built on the autodiff primitives, that evaluates many observation blocks
  (and, during training, gradients) at once. Both are tested against each
  other and against exhaustive marginalization.

Messages are scalar LLRs lambda = log m(+1) - log m(-1); after every update
they are clamped to [-LLR_CLAMP, +LLR_CLAMP]. Optional per-edge, per-iteration
weights (neural belief propagation) scale factor-to-variable LLRs before use.
Edges are numbered FN-major in graph order, neighbors ascending.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph import FactorGraph, LocalFunctionTable, sign_matrix

LLR_CLAMP = 50.0


@dataclass(frozen=True)
class SpaConfig:
    iterations: int
    nbp_enabled: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iteration count must be >= 0")


def n_edges(graph: FactorGraph) -> int:
    return sum(fn.degree for fn in graph.fns)


@dataclass(frozen=True)
class NbpWeights:
    """values[t, e]: weight of edge e in iteration t+1 (FN-major edge order)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("weights must have shape (iterations, edges)")
        object.__setattr__(self, "values", values)

    @classmethod
    def ones(cls, iterations: int, edges: int) -> "NbpWeights":
        return cls(np.ones((iterations, edges)))


@dataclass
class MessageState:
    """Per-FN arrays of directed-edge LLRs, aligned with fn.neighbors."""

    vn_to_fn: list[np.ndarray]
    fn_to_vn: list[np.ndarray]


def init_messages(graph: FactorGraph) -> MessageState:
    """Uniform start: all LLRs zero."""
    return MessageState(
        [np.zeros(fn.degree) for fn in graph.fns],
        [np.zeros(fn.degree) for fn in graph.fns],
    )


def fn_update(log_table: np.ndarray, incoming: np.ndarray) -> np.ndarray:
    """FN-to-VN LLRs of one factor given all incoming VN-to-FN LLRs.

    out_p excludes the incoming message on edge p:
    out_p = LSE_{c:x_p=+1} A(c) - LSE_{c:x_p=-1} A(c) - incoming_p with
    A(c) = log_table(c) + sum_j sign_j(c) incoming_j / 2.
    """
    log_table = np.asarray(log_table, dtype=float)
    incoming = np.asarray(incoming, dtype=float)
    d = incoming.size
    s = sign_matrix(d)
    a = log_table + incoming @ s * 0.5
    amax = a.max()
    e = np.exp(a - amax)
    pos = s > 0  # (d, C)
    zpos = np.where(pos, e, 0.0).sum(axis=1)
    zneg = np.where(pos, 0.0, e).sum(axis=1)
    # a fully one-sided factor yields z = 0 and an infinite LLR, which the
    # caller clamps; suppress the benign log(0) warning
    with np.errstate(divide="ignore"):
        return np.log(zpos) - np.log(zneg) - incoming


def vn_update(incoming: np.ndarray) -> np.ndarray:
    """VN-to-FN LLRs: sum of the incoming FN-to-VN LLRs on the other edges."""
    incoming = np.asarray(incoming, dtype=float)
    return incoming.sum() - incoming


def run_spa(
    graph: FactorGraph,
    config: SpaConfig,
    weights: NbpWeights | None = None,
) -> np.ndarray:
    """Approximate marginals P(x_k = +1) after N flooding iterations."""
    if config.nbp_enabled:
        if weights is None:
            raise ValueError("nbp_enabled requires weights")
        if weights.values.shape != (config.iterations, n_edges(graph)):
            raise ValueError(
                f"weights shape {weights.values.shape} does not match "
                f"({config.iterations}, {n_edges(graph)})"
            )
    state = init_messages(graph)
    totals = np.zeros(graph.n_vns)
    for t in range(config.iterations):
        offset = 0
        for i, fn in enumerate(graph.fns):
            out = np.clip(fn_update(fn.log_values, state.vn_to_fn[i]),
                          -LLR_CLAMP, LLR_CLAMP)
            if config.nbp_enabled:
                out = out * weights.values[t, offset : offset + fn.degree]
            state.fn_to_vn[i] = out
            offset += fn.degree
        totals = np.zeros(graph.n_vns)
        for i, fn in enumerate(graph.fns):
            for p, v in enumerate(fn.neighbors):
                totals[v - 1] += state.fn_to_vn[i][p]
        for i, fn in enumerate(graph.fns):
            ext = totals[np.array(fn.neighbors) - 1] - state.fn_to_vn[i]
            state.vn_to_fn[i] = np.clip(ext, -LLR_CLAMP, LLR_CLAMP)
    return 1.0 / (1.0 + np.exp(-np.clip(totals, -700, 700)))


def hard_decision(marginals: np.ndarray) -> np.ndarray:
    """MAP symbol decisions; the tie m = 0.5 resolves to +1."""
    m = np.asarray(marginals)
    return np.where(m >= 0.5, 1, -1).astype(np.int64)


# -- vectorized engine --------------------------------------------------------


@dataclass(frozen=True)
class DegreeGroup:
    degree: int
    vn_idx: np.ndarray  # (F, degree), 0-based VN indices
    fn_idx: np.ndarray  # (F,) positions of these FNs in graph order


class BatchStructure:
    """Degree-grouped edge layout of one factor-graph topology.

    Tables vary per observation block; the topology (and therefore all
    index/scatter matrices here) is fixed, so one structure is reused for a
    whole Monte-Carlo sweep or training run.
    """

    def __init__(self, n_vns: int, groups: list[DegreeGroup]):
        self.n_vns = n_vns
        self.groups = groups
        self.n_fns = int(sum(g.vn_idx.shape[0] for g in groups))
        # scatter matrix per group: (F*d, K); expand is its transpose
        self._scatter = []
        for g in groups:
            flat = g.vn_idx.ravel()
            m = np.zeros((flat.size, n_vns))
            m[np.arange(flat.size), flat] = 1.0
            self._scatter.append(m)
        self.group_edges = [g.vn_idx.size for g in groups]

    @classmethod
    def from_factor_graph(cls, graph: FactorGraph) -> "BatchStructure":
        return cls.from_neighbors([fn.neighbors for fn in graph.fns], graph.n_vns)

    @classmethod
    def from_neighbors(cls, neighbor_lists, n_vns: int) -> "BatchStructure":
        by_degree: dict[int, list[int]] = {}
        for i, nb in enumerate(neighbor_lists):
            by_degree.setdefault(len(nb), []).append(i)
        groups = []
        for d in sorted(by_degree):
            idx = np.array(by_degree[d])
            vn_idx = np.array([neighbor_lists[i] for i in idx]) - 1
            groups.append(DegreeGroup(d, vn_idx.reshape(len(idx), d), idx))
        return cls(n_vns, groups)

    def group_tables_from_graph(self, graph: FactorGraph) -> list[np.ndarray]:
        """Stack the per-FN tables of ``graph`` into per-group arrays (F, C)."""
        return [
            np.stack([graph.fns[i].log_values for i in g.fn_idx])
            for g in self.groups
        ]

    def split_edge_array(self, values: np.ndarray) -> list[np.ndarray]:
        """Split (..., n_edges) in graph FN-major edge order into group parts."""
        neighbors_per_fn = np.zeros(self.n_fns, dtype=np.int64)
        for g in self.groups:
            neighbors_per_fn[g.fn_idx] = g.degree
        offsets = np.concatenate([[0], np.cumsum(neighbors_per_fn)])
        parts = []
        for g in self.groups:
            cols = np.concatenate(
                [np.arange(offsets[i], offsets[i] + g.degree) for i in g.fn_idx]
            )
            parts.append(np.asarray(values)[..., cols])
        return parts


def run_batch_spa(
    structure: BatchStructure,
    tables,
    n_iterations: int,
    nbp_weights=None,
    return_all: bool = False,
):
    """Unrolled flooding SPA over batched tables.

    ``tables``: one Tensor/array per degree group, shape (..., F, 2**d).
    ``nbp_weights``: optional list (one per group) of Tensors/arrays with
    shape (n_iterations, F*d). Returns a Tensor of marginals (..., n_vns),
    or the per-iteration list of those when ``return_all`` is set.
    """
    tables = [ad.as_tensor(t) for t in tables]
    if len(tables) != len(structure.groups):
        raise ValueError("one table array per degree group required")
    for t, g in zip(tables, structure.groups):
        if t.shape[-2:] != (g.vn_idx.shape[0], 2**g.degree):
            raise ValueError(f"table shape {t.shape} does not match group {g.degree}")
    if nbp_weights is not None:
        nbp_weights = [ad.as_tensor(w) for w in nbp_weights]
        for w, ne in zip(nbp_weights, structure.group_edges):
            if w.shape != (n_iterations, ne):
                raise ValueError(
                    f"nbp weight shape {w.shape} does not match "
                    f"({n_iterations}, {ne})"
                )

    lead = tables[0].shape[:-2]
    zeros_msgs = [
        ad.Tensor(np.zeros(lead + (g.vn_idx.shape[0], g.degree)))
        for g in structure.groups
    ]
    vn_to_fn = zeros_msgs
    total = ad.Tensor(np.zeros(lead + (structure.n_vns,)))
    per_iteration = []
    for t in range(n_iterations):
        fn_to_vn = []
        for gi, g in enumerate(structure.groups):
            raw = ad.spa_factor_update(tables[gi], vn_to_fn[gi], g.degree)
            raw = ad.clamp(raw, -LLR_CLAMP, LLR_CLAMP)
            if nbp_weights is not None:
                w = ad.reshape(
                    ad.take_row(nbp_weights[gi], t), (g.vn_idx.shape[0], g.degree)
                )
                raw = ad.mul(raw, w)
            fn_to_vn.append(raw)
        total = None
        for gi, g in enumerate(structure.groups):
            flat = ad.reshape(fn_to_vn[gi], lead + (g.vn_idx.size,))
            part = ad.matmul_const(flat, structure._scatter[gi])
            total = part if total is None else ad.add(total, part)
        vn_to_fn = []
        for gi, g in enumerate(structure.groups):
            expanded = ad.matmul_const(total, structure._scatter[gi].T)
            expanded = ad.reshape(expanded, lead + (g.vn_idx.shape[0], g.degree))
            vn_to_fn.append(
                ad.clamp(ad.add(expanded, ad.neg(fn_to_vn[gi])), -LLR_CLAMP, LLR_CLAMP)
            )
        if return_all:
            per_iteration.append(ad.sigmoid(total))
    if return_all:
        return per_iteration
    return ad.sigmoid(total)
