"""Self-contained correctness checks shared by the CLI and the test suite.

Each check returns its worst-case error so callers can compare against their
own tolerance. The oracles here are independent of the code paths they check:
exhaustive marginalization for the SPA, global-function enumeration for the
clustering algebra, and central finite differences for the gradients.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .channel import (
    ChannelSpec,
    cyclic_convolve,
    make_rng,
    reference_channel,
    transmit,
)
from .cluster import (
    ClusterWeights,
    apply_discrete_clustering,
    build_clustered_graph,
    compute_alphas,
    enumerate_containers,
)
from .evaluation import exhaustive_marginals
from .graph import (
    FactorGraph,
    LocalFunctionTable,
    all_configs,
    build_ufg,
    global_log_function_all,
)
from .program import CCProgram
from .spa import SpaConfig, run_batch_spa, run_spa


def random_tree_graph(rng: np.random.Generator, max_vns: int = 10,
                      max_degree: int = 4) -> FactorGraph:
    """Random connected cycle-free factor graph with N(0,1) log tables."""
    n_vns = int(rng.integers(2, max_vns + 1))
    attached = [1]
    free = list(range(2, n_vns + 1))
    fns = []
    while free:
        take = int(rng.integers(1, min(max_degree - 1, len(free)) + 1))
        anchor = int(rng.choice(attached))
        new = [free.pop() for _ in range(take)]
        neighbors = tuple(sorted([anchor] + new))
        fns.append(
            LocalFunctionTable(neighbors, rng.standard_normal(2 ** len(neighbors)))
        )
        attached.extend(new)
    # a few degree-1 leaves keep the graph informative on every variable
    for v in rng.choice(n_vns, size=max(1, n_vns // 3), replace=False):
        fns.append(LocalFunctionTable((int(v) + 1,), rng.standard_normal(2)))
    return FactorGraph(n_vns, tuple(fns))


def tree_exactness_check(n_graphs: int = 100, seed: int = 0) -> float:
    """Max |SPA marginal - exact marginal| over random cycle-free graphs."""
    rng = make_rng(seed, stream=30)
    worst = 0.0
    for _ in range(n_graphs):
        graph = random_tree_graph(rng)
        n_iter = graph.n_vns + graph.n_fns  # >= tree diameter
        marg = run_spa(graph, SpaConfig(iterations=n_iter))
        exact = exhaustive_marginals(graph)
        worst = max(worst, float(np.max(np.abs(marg - exact))))
    return worst


def _random_weights(program: CCProgram, rng) -> ClusterWeights:
    return ClusterWeights.random_init(program.options, rng)


def clustering_preservation_check(
    n_draws: int = 20, seed: int = 0, k: int = 8,
    spec: ChannelSpec | None = None, d_max_values=(3, 4),
) -> float:
    """Max spread of (clustered minus basis) global log function.

    For every random weight draw the clustered graph must represent the same
    global function as the basis graph up to an x-independent constant, so
    the per-configuration difference must be flat.
    """
    spec = reference_channel() if spec is None else spec
    rng = make_rng(seed, stream=31)
    configs = all_configs(k)
    worst = 0.0
    for _ in range(n_draws):
        x = 1.0 - 2.0 * rng.integers(0, 2, size=k)
        obs = transmit(x, spec, 0.5, rng)
        bfg = build_ufg(spec, obs)
        for d_max in d_max_values:
            cs = enumerate_containers(k, spec.memory, d_max)
            program = CCProgram(spec, k, d_max)
            weights = _random_weights(program, rng)
            alphas = compute_alphas(weights)
            clustered = build_clustered_graph(bfg, cs, alphas)
            diff = global_log_function_all(clustered, configs) - \
                global_log_function_all(bfg, configs)
            worst = max(worst, float(diff.max() - diff.min()))
    return worst


def one_hot_equivalence_check(
    n_draws: int = 20, seed: int = 0, k: int = 8,
    spec: ChannelSpec | None = None, d_max: int = 3, n_iterations: int = 5,
) -> float:
    """Max marginal gap between one-hot continuous clustering and the
    corresponding discrete clustered graph run through the reference SPA."""
    spec = reference_channel() if spec is None else spec
    program = CCProgram(spec, k, d_max)
    rng = make_rng(seed, stream=32)
    worst = 0.0
    for _ in range(n_draws):
        x = 1.0 - 2.0 * rng.integers(0, 2, size=k)
        obs = transmit(x, spec, 0.5, rng)
        assignment = [int(rng.choice(opts)) for opts in program.options]
        # exact one-hot alphas via the mask: single unmasked option per FN
        beta = [np.zeros(len(o)) for o in program.options]
        mask = [
            np.array([m != assignment[i] for m in opts])
            for i, opts in enumerate(program.options)
        ]
        weights = ClusterWeights(beta, mask)
        alphas = compute_alphas(weights)
        tables = program.container_tables(alphas, obs.y, obs.noise_variance)
        cont = run_batch_spa(program.structure, [tables], n_iterations).value[0]
        bfg = build_ufg(spec, obs)
        discrete = apply_discrete_clustering(bfg, program.cs, assignment)
        disc = run_spa(discrete, SpaConfig(iterations=n_iterations))
        worst = max(worst, float(np.max(np.abs(cont - disc))))
    return worst


def gradient_check(
    n_instances: int = 50, seed: int = 0, step: float = 3e-4,
    k: int = 8, taps=(0.8, 0.5, 0.3), d_max: int = 3,
) -> float:
    """Max relative error of reverse-mode gradients vs central differences.

    Covers the full loss pipeline: clustering softmax, container tables,
    iterated SPA and the soft bit error rate, with and without trainable
    message weights, for both loss variants.
    """
    spec = ChannelSpec(tuple(taps))
    program = CCProgram(spec, k, d_max)
    rng = make_rng(seed, stream=33)
    worst = 0.0
    for t in range(n_instances):
        x = 1.0 - 2.0 * rng.integers(0, 2, size=(2, k))
        sigma2 = float(rng.uniform(0.2, 1.0))
        noise = rng.normal(0.0, np.sqrt(sigma2), size=(2, k))
        y = cyclic_convolve(x.astype(float), spec) + noise
        weights = _random_weights(program, rng)
        beta, active = program.pad_beta(weights)
        e_const = program.component_tables(y, sigma2)
        nbp_enabled = t % 2 == 1
        loss_kind = "cross_entropy" if t % 4 >= 2 else "soft_ber"
        n_iterations = 2
        values = [beta]
        if nbp_enabled:
            values.append(
                1.0 + 0.1 * rng.standard_normal((n_iterations, program.n_edges))
            )
        computation = program.make_loss_computation(
            e_const, x, active, n_iterations, nbp_enabled, loss_kind
        )
        worst = max(worst, ad.finite_difference_check(computation, values, step))
    return worst
