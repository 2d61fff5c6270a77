"""Factor-node containers and the continuous-clustering parametrization.

A container is a placeholder FN over a small set of VNs (degree exactly
``d_max``, cyclic span bounded). Every basis-graph FN carries an ascending
list of container ids it fits into (its clustering options) and a trainable
weight vector ``beta`` over that list; softmax(beta) gives the fractions
``alpha`` with which its log table is distributed over the containers.

The prune mask stores which beta entries have been forced to -inf; masked
entries yield alpha = 0 exactly and survive serialization (JSON cannot carry
-inf, so the mask is kept separately from the finite beta values).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .graph import FactorGraph, LocalFunctionTable

SPAN_TOLERANCE = 1e-9  # max deviation allowed on an axis declared constant


def cyclic_span(vn_ids, k: int) -> tuple[int, int]:
    """(span, canonical window start id) of a VN id set under cyclic indexing.

    The span is the width of the minimal cyclic window covering the set,
    minus one. Ties between equally wide windows resolve to the smallest
    start id.
    """
    pos = sorted(v - 1 for v in vn_ids)
    if len(pos) == 1:
        return 0, pos[0] + 1
    gaps = [(pos[(i + 1) % len(pos)] - pos[i]) % k for i in range(len(pos))]
    max_gap = max(gaps)
    starts = [pos[(i + 1) % len(pos)] for i, g in enumerate(gaps) if g == max_gap]
    return k - max_gap, min(starts) + 1


@dataclass(frozen=True)
class Container:
    id: int
    vn_set: tuple[int, ...]  # ascending VN ids
    span: int
    window_start: int

    @property
    def degree(self) -> int:
        return len(self.vn_set)


@dataclass(frozen=True)
class ContainerSet:
    containers: tuple[Container, ...]
    k: int
    d_max: int
    span_limit: int

    @property
    def count(self) -> int:
        return len(self.containers)


def enumerate_containers(
    k: int, memory: int, d_max: int, span_limit: int | None = None
) -> ContainerSet:
    """All VN sets of size d_max whose cyclic span is at most the limit.

    The default limit is L+1. Containers are ordered by (canonical window
    start, vn_set) and get 1-based ids.
    """
    if span_limit is None:
        span_limit = memory + 1
    if d_max < 2 or d_max > 4:
        raise ValueError("container degree must be in {2, 3, 4}")
    if span_limit < d_max - 1:
        raise ValueError("span limit too small for the container degree")
    if k < span_limit + 2:
        raise ValueError(
            f"block length {k} too small for span limit {span_limit} "
            f"(need K >= span_limit + 2)"
        )
    seen: set[frozenset[int]] = set()
    for start in range(k):
        window = [(start + o) % k for o in range(1, span_limit + 1)]
        for rest in combinations(window, d_max - 1):
            seen.add(frozenset((start,) + rest))
    entries = []
    for s in seen:
        ids = tuple(sorted(p + 1 for p in s))
        span, win_start = cyclic_span(ids, k)
        entries.append((win_start, ids, span))
    entries.sort()
    containers = tuple(
        Container(i + 1, ids, span, win_start)
        for i, (win_start, ids, span) in enumerate(entries)
    )
    return ContainerSet(containers, k, d_max, span_limit)


def clustering_options_from_neighbors(neighbor_lists, cs: ContainerSet) -> list[list[int]]:
    """Ascending container-id list per FN; every FN must fit somewhere."""
    by_vn: dict[int, set[int]] = {}
    for c in cs.containers:
        for v in c.vn_set:
            by_vn.setdefault(v, set()).add(c.id)
    options = []
    for i, nbs in enumerate(neighbor_lists):
        cand: set[int] | None = None
        for v in nbs:
            s = by_vn.get(v, set())
            cand = set(s) if cand is None else cand & s
        ids = sorted(cand or ())
        if not ids:
            raise ValueError(f"FN {i} over VNs {tuple(nbs)} fits into no container")
        options.append(ids)
    return options


def clustering_options(bfg: FactorGraph, cs: ContainerSet) -> list[list[int]]:
    return clustering_options_from_neighbors([fn.neighbors for fn in bfg.fns], cs)


@dataclass
class ClusterWeights:
    """Trainable beta per FN plus the prune mask (True = forced to -inf)."""

    beta: list[np.ndarray]
    mask: list[np.ndarray]

    def __post_init__(self):
        if len(self.beta) != len(self.mask):
            raise ValueError("beta and mask must align")
        self.beta = [np.asarray(b, dtype=float) for b in self.beta]
        self.mask = [np.asarray(m, dtype=bool) for m in self.mask]
        for b, m in zip(self.beta, self.mask):
            if b.shape != m.shape:
                raise ValueError("beta and mask entries must have equal shape")

    @classmethod
    def random_init(cls, options: list[list[int]], rng) -> "ClusterWeights":
        return cls(
            [rng.normal(0.0, 1.0, size=len(o)) for o in options],
            [np.zeros(len(o), dtype=bool) for o in options],
        )


def compute_alphas(weights: ClusterWeights) -> list[np.ndarray]:
    """Per-FN softmax over unmasked beta entries; masked entries are exactly 0."""
    alphas = []
    for i, (b, m) in enumerate(zip(weights.beta, weights.mask)):
        if m.all():
            raise ValueError(f"all clustering options of FN {i} are masked")
        v = np.where(m, -np.inf, b)
        e = np.exp(v - v[~m].max())
        alphas.append(e / e.sum())
    return alphas


def assignment_map(options: list[list[int]], n_containers: int) -> list[list[tuple[int, int]]]:
    """Per container id m (1-based): list of (fn_index, option_slot) pairs."""
    out: list[list[tuple[int, int]]] = [[] for _ in range(n_containers)]
    for i, opts in enumerate(options):
        for j, m in enumerate(opts):
            out[m - 1].append((i, j))
    return out


def extension_indices(container_vns: tuple[int, ...], fn_vns: tuple[int, ...]) -> np.ndarray:
    """For every container config index, the matching FN table index.

    The FN's neighbors must be a subset of the container's; absent variables
    are ignored (the FN table is constant along them).
    """
    pos = [container_vns.index(v) for v in fn_vns]
    c = np.arange(2 ** len(container_vns))
    idx = np.zeros_like(c)
    for b, p in enumerate(pos):
        idx |= ((c >> p) & 1) << b
    return idx


def build_clustered_graph(
    bfg: FactorGraph, cs: ContainerSet, alphas: list[np.ndarray]
) -> FactorGraph:
    """Clustered graph: every container, with table sum_(i,j) alpha_ij log f_i.

    Containers keep their full degree here (including empty ones); use
    :func:`simplify` to shrink them to their actual support.
    """
    if len(alphas) != bfg.n_fns:
        raise ValueError("one alpha vector per basis FN required")
    options = clustering_options(bfg, cs)
    amap = assignment_map(options, cs.count)
    fns = []
    for c in cs.containers:
        table = np.zeros(2**c.degree)
        for i, j in amap[c.id - 1]:
            a = alphas[i][j]
            if a == 0.0:
                continue
            ext = extension_indices(c.vn_set, bfg.fns[i].neighbors)
            table += a * bfg.fns[i].log_values[ext]
        fns.append(LocalFunctionTable(c.vn_set, table))
    return FactorGraph(bfg.n_vns, tuple(fns))


def container_supports(
    bfg: FactorGraph, cs: ContainerSet, alphas: list[np.ndarray],
    options: list[list[int]] | None = None,
) -> list[set[int]]:
    """Per container: VNs appearing in at least one alpha > 0 component."""
    if options is None:
        options = clustering_options(bfg, cs)
    supports: list[set[int]] = [set() for _ in cs.containers]
    for i, opts in enumerate(options):
        for j, m in enumerate(opts):
            if alphas[i][j] > 0.0:
                supports[m - 1].update(bfg.fns[i].neighbors)
    return supports


def simplify(graph: FactorGraph, supports: list) -> FactorGraph:
    """Drop edges to variables outside each FN's support; delete empty FNs.

    Table entries must be constant along every dropped axis; a deviation
    beyond SPAN_TOLERANCE raises, since it means the support info is wrong.
    """
    if len(supports) != graph.n_fns:
        raise ValueError("one support set per FN required")
    fns = []
    for fi, (fn, support) in enumerate(zip(graph.fns, supports)):
        support = set(support)
        if not support <= set(fn.neighbors):
            raise ValueError(f"support of FN {fi} is not a neighbor subset")
        if not support:
            continue
        if support == set(fn.neighbors):
            fns.append(fn)
            continue
        keep = [p for p, v in enumerate(fn.neighbors) if v in support]
        drop = [p for p, v in enumerate(fn.neighbors) if v not in support]
        # keep the entries with all dropped bits = 0, after checking constancy
        c = np.arange(fn.log_values.size)
        for p in drop:
            sel0 = fn.log_values[((c >> p) & 1) == 0]
            sel1 = fn.log_values[((c >> p) & 1) == 1]
            if np.max(np.abs(sel0 - sel1)) > SPAN_TOLERANCE:
                raise ValueError(
                    f"FN {fi}: table is not constant along dropped VN "
                    f"{fn.neighbors[p]}"
                )
        mask = np.ones(fn.log_values.size, dtype=bool)
        for p in drop:
            mask &= ((c >> p) & 1) == 0
        sub = fn.log_values[mask]
        new_neighbors = tuple(fn.neighbors[p] for p in keep)
        fns.append(LocalFunctionTable(new_neighbors, sub))
    return FactorGraph(graph.n_vns, tuple(fns))


def apply_discrete_clustering(
    bfg: FactorGraph, cs: ContainerSet, assignment: list[int]
) -> FactorGraph:
    """Cluster each FN into exactly one of its options, then simplify."""
    options = clustering_options(bfg, cs)
    if len(assignment) != bfg.n_fns:
        raise ValueError("one container id per FN required")
    alphas = []
    for i, (m, opts) in enumerate(zip(assignment, options)):
        if m not in opts:
            raise ValueError(f"container {m} is not an option of FN {i}")
        a = np.zeros(len(opts))
        a[opts.index(m)] = 1.0
        alphas.append(a)
    graph = build_clustered_graph(bfg, cs, alphas)
    supports = container_supports(bfg, cs, alphas, options)
    return simplify(graph, supports)


def prune(weights: ClusterWeights, alpha_thr: float) -> ClusterWeights:
    """Mask every component with alpha below the threshold and renormalize."""
    if not 0.0 <= alpha_thr < 1.0:
        raise ValueError("threshold must be in [0, 1)")
    alphas = compute_alphas(weights)
    new_mask = []
    for i, (a, m) in enumerate(zip(alphas, weights.mask)):
        nm = m | (a < alpha_thr)
        if nm.all():
            raise ValueError(f"pruning would mask every option of FN {i}")
        new_mask.append(nm)
    return ClusterWeights([b.copy() for b in weights.beta], new_mask)


def relevance(alphas: list[np.ndarray], options: list[list[int]], n_containers: int) -> np.ndarray:
    """Per container: max alpha over its components (0 for empty containers)."""
    out = np.zeros(n_containers)
    for i, opts in enumerate(options):
        for j, m in enumerate(opts):
            out[m - 1] = max(out[m - 1], alphas[i][j])
    return out
