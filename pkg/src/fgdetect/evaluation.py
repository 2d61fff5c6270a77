"""Exact MAP oracle, Monte-Carlo BER estimation and model analysis."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import (
    ChannelSpec,
    cyclic_convolve,
    make_rng,
    noise_variance_from_esn0,
    sample_symbol_batch,
    transmit_batch,
)
from .cluster import assignment_map, compute_alphas, relevance
from .graph import FactorGraph, all_configs, global_log_function_all
from .model import ClusterModel
from .program import CCRuntime, FfgRuntime, UfgRuntime
from .spa import hard_decision

BRUTE_FORCE_LIMIT = 20  # 2**K posterior enumeration cap

CSV_COLUMNS = ["esn0_db", "bits", "errors", "ber", "ci95"]


@dataclass(frozen=True)
class BerRecord:
    esn0_db: float
    bits: int
    errors: int

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else 0.0

    @property
    def ci95(self) -> float:
        """95% half-width under the normal approximation."""
        if self.bits == 0:
            return 0.0
        p = self.ber
        return 1.96 * np.sqrt(max(p * (1.0 - p), 0.0) / self.bits)


def exhaustive_marginals(graph: FactorGraph) -> np.ndarray:
    """Exact P(x_k=+1) of the normalized global function by enumeration."""
    if graph.n_vns > BRUTE_FORCE_LIMIT:
        raise ValueError(f"exhaustive marginals limited to {BRUTE_FORCE_LIMIT} VNs")
    configs = all_configs(graph.n_vns)
    logw = global_log_function_all(graph, configs)
    logw -= logw.max()
    w = np.exp(logw)
    total = w.sum()
    return np.array(
        [w[configs[:, k] == 1].sum() / total for k in range(graph.n_vns)]
    )


def map_marginals_bruteforce(
    spec: ChannelSpec, y: np.ndarray, sigma2: float
) -> np.ndarray:
    """Exact symbol-wise posterior P(x_k=+1 | y) by 2**K enumeration."""
    y = np.asarray(y, dtype=float)
    k = y.size
    if k > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute-force MAP limited to K <= {BRUTE_FORCE_LIMIT}")
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    configs = all_configs(k)
    predicted = cyclic_convolve(configs.astype(float), spec)
    logw = -((y[None, :] - predicted) ** 2).sum(axis=1) / (2.0 * sigma2)
    logw -= logw.max()
    w = np.exp(logw)
    total = w.sum()
    return np.array([w[configs[:, i] == 1].sum() / total for i in range(k)])


def map_detect_batch(spec: ChannelSpec, y: np.ndarray, sigma2: float) -> np.ndarray:
    y = np.atleast_2d(y)
    return np.stack(
        [hard_decision(map_marginals_bruteforce(spec, row, sigma2)) for row in y]
    )


def make_detector(
    variant: str,
    spec: ChannelSpec,
    k: int,
    n_iterations: int = 10,
    model: ClusterModel | None = None,
):
    """(name, callable(y, sigma2) -> decisions) for one detector variant."""
    variant = variant.lower()
    if variant == "ufg":
        rt = UfgRuntime(spec, k)
        return lambda y, s2: hard_decision(rt.marginals(y, s2, n_iterations))
    if variant == "ffg":
        rt = FfgRuntime(spec, k)
        return lambda y, s2: hard_decision(rt.marginals(y, s2, n_iterations))
    if variant == "map":
        if k > BRUTE_FORCE_LIMIT:
            raise ValueError("map variant limited to K <= 20")
        return lambda y, s2: map_detect_batch(spec, y, s2)
    if variant == "cc":
        if model is None:
            raise ValueError("cc variant needs a model")
        rt = CCRuntime(model)
        n = rt.default_iterations() if n_iterations is None else n_iterations
        return lambda y, s2: hard_decision(rt.marginals(y, s2, n))
    raise ValueError(f"unknown detector variant '{variant}'")


def ber_point(
    detector,
    spec: ChannelSpec,
    k: int,
    esn0_db: float,
    seed: int,
    min_errors: int = 100,
    max_bits: int = 10_000_000,
    blocks_per_batch: int = 256,
    stream: int = 0,
) -> BerRecord:
    """Monte-Carlo BER at one SNR; stops at min_errors or the bit budget."""
    sigma2 = noise_variance_from_esn0(esn0_db)
    rng_sym = make_rng(seed, stream=2 * stream + 100)
    rng_noise = make_rng(seed, stream=2 * stream + 101)
    bits = 0
    errors = 0
    while errors < min_errors and bits < max_bits:
        x = sample_symbol_batch(blocks_per_batch, k, rng_sym)
        y = transmit_batch(x, spec, sigma2, rng_noise)
        decisions = detector(y, sigma2)
        errors += int((decisions != x).sum())
        bits += x.size
    return BerRecord(esn0_db, bits, errors)


def ber_sweep(
    detector,
    spec: ChannelSpec,
    k: int,
    esn0_db_list,
    seed: int,
    min_errors: int = 100,
    max_bits: int = 10_000_000,
    blocks_per_batch: int = 256,
) -> list[BerRecord]:
    return [
        ber_point(
            detector, spec, k, esn0, seed,
            min_errors=min_errors, max_bits=max_bits,
            blocks_per_batch=blocks_per_batch, stream=i,
        )
        for i, esn0 in enumerate(esn0_db_list)
    ]


def write_ber_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.esn0_db, r.bits, r.errors, repr(r.ber), repr(r.ci95)])


def read_ber_csv(path) -> list[BerRecord]:
    records = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {rows[0]}")
    for row in rows[1:]:
        records.append(BerRecord(float(row[0]), int(row[1]), int(row[2])))
    return records


def map_agreement(
    spec: ChannelSpec,
    k: int,
    esn0_db: float,
    n_symbols: int,
    seed: int,
    n_iterations: int = 10,
) -> float:
    """Fraction of symbols where FFG-SPA and exact MAP decide identically."""
    sigma2 = noise_variance_from_esn0(esn0_db)
    rt = FfgRuntime(spec, k)
    rng_sym = make_rng(seed, stream=21)
    rng_noise = make_rng(seed, stream=22)
    agree = 0
    total = 0
    while total < n_symbols:
        x = sample_symbol_batch(64, k, rng_sym)
        y = transmit_batch(x, spec, sigma2, rng_noise)
        spa_dec = hard_decision(rt.marginals(y, sigma2, n_iterations))
        map_dec = map_detect_batch(spec, y, sigma2)
        agree += int((spa_dec == map_dec).sum())
        total += x.size
    return agree / total


# -- model analysis -------------------------------------------------------------


@dataclass
class ModelAnalysis:
    relevances: np.ndarray
    degree_counts: dict[int, int]  # degrees of surviving containers
    pruned_containers: int
    n_containers: int

    @property
    def pruned_fraction(self) -> float:
        return self.pruned_containers / self.n_containers

    def degree_percentages(self) -> dict:
        out = {
            d: 100.0 * c / self.n_containers
            for d, c in sorted(self.degree_counts.items())
        }
        out["pruned"] = 100.0 * self.pruned_fraction
        return out


def analyze_model(model: ClusterModel) -> ModelAnalysis:
    """Relevance per container plus the simplified degree distribution."""
    from .program import ufg_neighbor_lists

    alphas = compute_alphas(model.weights)
    amap = assignment_map(model.options, model.containers.count)
    rel = relevance(alphas, model.options, model.containers.count)
    neighbors = ufg_neighbor_lists(model.k, model.spec.memory)
    degree_counts: dict[int, int] = {}
    pruned = 0
    for m in range(model.containers.count):
        support: set[int] = set()
        for i, j in amap[m]:
            if alphas[i][j] > 0.0:
                support.update(neighbors[i])
        if not support:
            pruned += 1
        else:
            d = len(support)
            degree_counts[d] = degree_counts.get(d, 0) + 1
    return ModelAnalysis(rel, degree_counts, pruned, model.containers.count)


def write_relevance_histogram(analysis: ModelAnalysis, path, bins: int = 20) -> None:
    counts, edges = np.histogram(analysis.relevances, bins=bins, range=(0.0, 1.0))
    freq = counts / counts.sum()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "count", "relative_frequency"])
        for i in range(bins):
            w.writerow([edges[i], edges[i + 1], int(counts[i]), repr(float(freq[i]))])


def write_degree_table(analysis: ModelAnalysis, path) -> None:
    pct = analysis.degree_percentages()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["degree", "percent"])
        for key, val in pct.items():
            w.writerow([key, f"{val:.2f}"])
