"""Factor graphs over binary variables with log-domain local functions.

Conventions used everywhere in this package:

* VN ids are 1-based, contiguous, 1..K.
* FN neighbor lists are sorted ascending by VN id.
* A local-function table of degree d has 2**d entries in natural log.
  Bit ``b`` of the table index (LSB = neighbor 0) encodes the value of the
  b-th neighbor: bit 0 means x = +1, bit 1 means x = -1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .channel import ChannelSpec, ObservationBlock


@dataclass(frozen=True)
class VariableNode:
    """Binary variable node; the alphabet is fixed to {-1, +1}."""

    id: int
    domain: tuple[int, int] = (1, -1)


@lru_cache(maxsize=None)
def sign_matrix(degree: int) -> np.ndarray:
    """S[j, c] = value (+1/-1) of neighbor j in configuration index c."""
    c = np.arange(2**degree)
    bits = (c[None, :] >> np.arange(degree)[:, None]) & 1
    out = 1 - 2 * bits
    out.setflags(write=False)
    return out.astype(float)


def config_to_index(values) -> int:
    """Configuration (tuple of +-1 per neighbor) -> table index."""
    idx = 0
    for b, v in enumerate(values):
        if v == -1:
            idx |= 1 << b
        elif v != 1:
            raise ValueError("configuration values must be -1/+1")
    return idx


def index_to_config(index: int, degree: int) -> tuple[int, ...]:
    """Table index -> configuration (tuple of +-1 per neighbor)."""
    return tuple(1 - 2 * ((index >> b) & 1) for b in range(degree))


@dataclass(frozen=True)
class LocalFunctionTable:
    """One factor: ascending neighbor VN ids plus its log-domain table."""

    neighbors: tuple[int, ...]
    log_values: np.ndarray

    def __post_init__(self):
        neighbors = tuple(int(v) for v in self.neighbors)
        if any(b <= a for a, b in zip(neighbors, neighbors[1:])):
            raise ValueError("neighbors must be strictly ascending VN ids")
        if neighbors and neighbors[0] < 1:
            raise ValueError("VN ids are 1-based")
        log_values = np.asarray(self.log_values, dtype=float)
        if log_values.shape != (2 ** len(neighbors),):
            raise ValueError(
                f"table of degree {len(neighbors)} needs "
                f"{2 ** len(neighbors)} entries, got {log_values.shape}"
            )
        if np.isnan(log_values).any():
            raise ValueError("log table contains NaN")
        log_values.setflags(write=False)
        object.__setattr__(self, "neighbors", neighbors)
        object.__setattr__(self, "log_values", log_values)

    @property
    def degree(self) -> int:
        return len(self.neighbors)

    def __call__(self, values) -> float:
        return float(self.log_values[config_to_index(values)])


@dataclass(frozen=True)
class FactorGraph:
    """Immutable bipartite graph of binary VNs (ids 1..n_vns) and FNs."""

    n_vns: int
    fns: tuple[LocalFunctionTable, ...]

    def __post_init__(self):
        if self.n_vns < 1:
            raise ValueError("graph needs at least one VN")
        fns = tuple(self.fns)
        for i, fn in enumerate(fns):
            if fn.neighbors and fn.neighbors[-1] > self.n_vns:
                raise ValueError(f"FN {i} references unknown VN {fn.neighbors[-1]}")
        object.__setattr__(self, "fns", fns)

    @property
    def vns(self) -> tuple[VariableNode, ...]:
        return tuple(VariableNode(i) for i in range(1, self.n_vns + 1))

    @property
    def n_fns(self) -> int:
        return len(self.fns)


def global_log_function(graph: FactorGraph, x: np.ndarray) -> float:
    """log of the global function, i.e. the sum of all local log tables at x."""
    x = np.asarray(x)
    if x.shape != (graph.n_vns,):
        raise ValueError("x must assign every VN exactly one value")
    total = 0.0
    for fn in graph.fns:
        total += fn(tuple(x[v - 1] for v in fn.neighbors))
    return total


def global_log_function_all(graph: FactorGraph, configs: np.ndarray) -> np.ndarray:
    """Vectorized :func:`global_log_function` over rows of ``configs``."""
    configs = np.asarray(configs)
    total = np.zeros(configs.shape[0])
    for fn in graph.fns:
        idx = np.zeros(configs.shape[0], dtype=np.int64)
        for b, v in enumerate(fn.neighbors):
            idx |= ((1 - configs[:, v - 1]) // 2).astype(np.int64) << b
        total += fn.log_values[idx]
    return total


def all_configs(k: int) -> np.ndarray:
    """All 2**k assignments of +-1, one per row; row index follows bit order."""
    c = np.arange(2**k)
    return (1 - 2 * ((c[:, None] >> np.arange(k)[None, :]) & 1)).astype(np.int64)


def fn_degree_histogram(graph: FactorGraph) -> dict[int, int]:
    hist: dict[int, int] = {}
    for fn in graph.fns:
        hist[fn.degree] = hist.get(fn.degree, 0) + 1
    return dict(sorted(hist.items()))


def compute_q(spec: ChannelSpec, k: int) -> np.ndarray:
    """Tap autocorrelation q_l = sum_i h_i h_{i+l}, h zero-padded beyond L."""
    h = spec.h
    memory = spec.memory
    if k < memory + 1:
        raise ValueError(
            f"block length {k} too small for channel memory {memory} "
            f"(need K >= L+1)"
        )
    return np.correlate(h, h, mode="full")[memory:]


def matched_filter_outputs(spec: ChannelSpec, y: np.ndarray) -> np.ndarray:
    """sum_l h_l y_{[k+l] mod K} for every k (last axis of y)."""
    out = np.zeros_like(np.asarray(y, dtype=float))
    for ell, tap in enumerate(spec.taps):
        out += tap * np.roll(y, -ell, axis=-1)
    return out


def _check_buildable(spec: ChannelSpec, obs: ObservationBlock) -> int:
    k = obs.block_length
    if k < spec.memory + 1:
        raise ValueError("block length must be at least L+1")
    if obs.noise_variance <= 0:
        raise ValueError("graph construction needs noise_variance > 0")
    return k


def build_ufg(spec: ChannelSpec, obs: ObservationBlock) -> FactorGraph:
    """Ungerboeck-style graph: K degree-1 FNs plus K*L degree-2 FNs."""
    k = _check_buildable(spec, obs)
    sigma2 = obs.noise_variance
    q = compute_q(spec, k)
    mf = matched_filter_outputs(spec, obs.y)
    fns = []
    for i in range(k):
        # table over x_i: entry 0 is x=+1, entry 1 is x=-1; x^2 = 1 either way
        tbl = np.array([mf[i] - q[0] / 2.0, -mf[i] - q[0] / 2.0]) / sigma2
        fns.append(LocalFunctionTable((i + 1,), tbl))
    for ell in range(1, spec.memory + 1):
        for i in range(k):
            j = (i + ell) % k
            a, b = sorted((i + 1, j + 1))
            # log I = -(q_l / sigma^2) * x_a * x_b, symmetric in the pair
            v = -q[ell] / sigma2
            tbl = np.array([v, -v, -v, v])
            fns.append(LocalFunctionTable((a, b), tbl))
    return FactorGraph(k, tuple(fns))


def ffg_neighbor_roles(k: int, memory: int, i: int) -> tuple[tuple[int, ...], np.ndarray]:
    """Sorted neighbors of FFG factor i plus the tap index each one carries."""
    raw = [((i - ell) % k, ell) for ell in range(memory + 1)]
    raw.sort()
    neighbors = tuple(v + 1 for v, _ in raw)
    roles = np.array([ell for _, ell in raw])
    return neighbors, roles


def build_ffg(spec: ChannelSpec, obs: ObservationBlock) -> FactorGraph:
    """Bayes-rule graph: one degree-(L+1) FN per received sample."""
    k = _check_buildable(spec, obs)
    sigma2 = obs.noise_variance
    h = spec.h
    d = spec.memory + 1
    signs = sign_matrix(d)
    fns = []
    for i in range(k):
        neighbors, roles = ffg_neighbor_roles(k, spec.memory, i)
        if len(set(neighbors)) != d:
            raise ValueError("block length must be at least L+1")
        # replica of y_i for every configuration of the sorted neighbors
        predicted = h[roles] @ signs
        tbl = -((obs.y[i] - predicted) ** 2) / (2.0 * sigma2)
        fns.append(LocalFunctionTable(neighbors, tbl))
    return FactorGraph(k, tuple(fns))


def graph_to_json(graph: FactorGraph) -> str:
    doc = {
        "vns": [v.id for v in graph.vns],
        "fns": [
            {"neighbors": list(fn.neighbors), "log_values": fn.log_values.tolist()}
            for fn in graph.fns
        ],
    }
    return json.dumps(doc)


def graph_from_json(text: str) -> FactorGraph:
    doc = json.loads(text)
    vns = doc["vns"]
    if vns != list(range(1, len(vns) + 1)):
        raise ValueError("VN ids must be contiguous and 1-based")
    fns = tuple(
        LocalFunctionTable(tuple(f["neighbors"]), np.array(f["log_values"]))
        for f in doc["fns"]
    )
    return FactorGraph(len(vns), fns)
