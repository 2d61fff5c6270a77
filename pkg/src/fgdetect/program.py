"""Precompiled index structures for batched graph building and SPA runs.

Building a factor graph object per received block is fine for tests but too
slow for Monte-Carlo sweeps and training. The topology of every graph used
here (UFG, FFG, clustered graph) is fixed by the channel and block length,
so all index bookkeeping is done once and only the log tables are computed
per block, vectorized over a batch axis.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .channel import ChannelSpec
from .cluster import (
    ClusterWeights,
    assignment_map,
    clustering_options_from_neighbors,
    compute_alphas,
    enumerate_containers,
    extension_indices,
)
from .graph import compute_q, ffg_neighbor_roles, matched_filter_outputs, sign_matrix
from .spa import BatchStructure, DegreeGroup, run_batch_spa


def ufg_neighbor_lists(k: int, memory: int) -> list[tuple[int, ...]]:
    """Neighbors of the UFG FNs: K singletons, then K*L pairs (same order as
    the graph builder)."""
    out: list[tuple[int, ...]] = [(i + 1,) for i in range(k)]
    for ell in range(1, memory + 1):
        for i in range(k):
            j = (i + ell) % k
            out.append(tuple(sorted((i + 1, j + 1))))
    return out


def ffg_neighbor_lists(k: int, memory: int) -> list[tuple[int, ...]]:
    return [ffg_neighbor_roles(k, memory, i)[0] for i in range(k)]


def ufg_batch_tables(
    spec: ChannelSpec, y: np.ndarray, sigma2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Log tables of the UFG for a batch of blocks.

    Returns (deg1 tables (B, K, 2), deg2 tables (B, K*L, 4)) in the order of
    :func:`ufg_neighbor_lists`.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    b, k = y.shape
    q = compute_q(spec, k)
    mf = matched_filter_outputs(spec, y)
    deg1 = np.stack([(mf - q[0] / 2) / sigma2, (-mf - q[0] / 2) / sigma2], axis=-1)
    vals = np.repeat(-q[1:] / sigma2, k)  # (K*L,), constant per lag
    deg2 = vals[:, None] * np.array([1.0, -1.0, -1.0, 1.0])
    deg2 = np.broadcast_to(deg2, (b,) + deg2.shape)
    return deg1, deg2


def ufg_flat_tables(spec: ChannelSpec, y: np.ndarray, sigma2: float) -> np.ndarray:
    """All UFG tables of a batch flattened FN-major, shape (B, 2K + 4KL)."""
    deg1, deg2 = ufg_batch_tables(spec, y, sigma2)
    b = deg1.shape[0]
    return np.concatenate([deg1.reshape(b, -1), deg2.reshape(b, -1)], axis=1)


def ufg_fn_table_offsets(k: int, memory: int) -> np.ndarray:
    """Offset of each UFG FN's table inside the flat layout."""
    sizes = np.array([2] * k + [4] * (k * memory))
    return np.concatenate([[0], np.cumsum(sizes)[:-1]])


def ffg_batch_tables(spec: ChannelSpec, y: np.ndarray, sigma2: float) -> np.ndarray:
    """Log tables of the FFG for a batch of blocks, shape (B, K, 2**(L+1))."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    _, k = y.shape
    d = spec.memory + 1
    signs = sign_matrix(d)
    h = spec.h
    predicted = np.stack(
        [h[ffg_neighbor_roles(k, spec.memory, i)[1]] @ signs for i in range(k)]
    )  # (K, C)
    return -((y[:, :, None] - predicted[None]) ** 2) / (2.0 * sigma2)


class UfgRuntime:
    """Batched UFG detector front end."""

    def __init__(self, spec: ChannelSpec, k: int):
        self.spec = spec
        self.k = k
        self.structure = BatchStructure.from_neighbors(
            ufg_neighbor_lists(k, spec.memory), k
        )

    def marginals(self, y: np.ndarray, sigma2: float, n_iterations: int) -> np.ndarray:
        deg1, deg2 = ufg_batch_tables(self.spec, y, sigma2)
        tables = [deg1, deg2] if self.spec.memory > 0 else [deg1]
        return run_batch_spa(self.structure, tables, n_iterations).value


class FfgRuntime:
    """Batched FFG detector front end."""

    def __init__(self, spec: ChannelSpec, k: int):
        self.spec = spec
        self.k = k
        self.structure = BatchStructure.from_neighbors(
            ffg_neighbor_lists(k, spec.memory), k
        )

    def marginals(self, y: np.ndarray, sigma2: float, n_iterations: int) -> np.ndarray:
        tables = [ffg_batch_tables(self.spec, y, sigma2)]
        return run_batch_spa(self.structure, tables, n_iterations).value


class TieMaps:
    """Gather indices that expand shift-tied parameters to full arrays."""

    def __init__(self, beta_map, n_beta, nbp_map, n_nbp):
        self.beta_map = beta_map
        self.n_beta = n_beta
        self.nbp_map = nbp_map
        self.n_nbp = n_nbp


class CCProgram:
    """Index plan for the continuous-clustering pipeline at one (K, d_max).

    Holds the container set, option lists, the component-to-container
    assignment in a segment-sorted layout, and the batched SPA structure of
    the full-degree clustered graph.
    """

    def __init__(self, spec: ChannelSpec, k: int, d_max: int, span_limit: int | None = None):
        self.spec = spec
        self.k = k
        self.d_max = d_max
        self.cs = enumerate_containers(k, spec.memory, d_max, span_limit)
        self.span_limit = self.cs.span_limit
        self.bfg_neighbors = ufg_neighbor_lists(k, spec.memory)
        self.options = clustering_options_from_neighbors(self.bfg_neighbors, self.cs)
        self.n_fns = len(self.bfg_neighbors)
        self.max_options = max(len(o) for o in self.options)
        self.valid_mask = np.zeros((self.n_fns, self.max_options), dtype=bool)
        for i, o in enumerate(self.options):
            self.valid_mask[i, : len(o)] = True

        amap = assignment_map(self.options, self.cs.count)
        offsets = ufg_fn_table_offsets(k, spec.memory)
        comp_fn, comp_slot, seg_lengths = [], [], []
        ext_rows = []
        c_table = 2**d_max
        for c in self.cs.containers:
            comps = amap[c.id - 1]
            seg_lengths.append(len(comps))
            for i, j in comps:
                comp_fn.append(i)
                comp_slot.append(j)
                ext_rows.append(
                    offsets[i]
                    + extension_indices(c.vn_set, self.bfg_neighbors[i])
                )
        self.comp_fn = np.array(comp_fn)
        self.comp_slot = np.array(comp_slot)
        self.comp_alpha_idx = self.comp_fn * self.max_options + self.comp_slot
        self.comp_ext_flat = np.array(ext_rows).reshape(-1, c_table)
        self.seg_lengths = np.array(seg_lengths)
        self.seg_starts = np.concatenate([[0], np.cumsum(self.seg_lengths)[:-1]])
        self.n_components = self.comp_fn.size

        vn_idx = np.array([c.vn_set for c in self.cs.containers]) - 1
        self.structure = BatchStructure(
            k, [DegreeGroup(d_max, vn_idx, np.arange(self.cs.count))]
        )
        self.n_edges = self.cs.count * d_max

    # -- parameters ---------------------------------------------------------

    def init_weights(self, rng) -> ClusterWeights:
        return ClusterWeights.random_init(self.options, rng)

    def tie_maps(self, n_iterations: int) -> "TieMaps":
        """Index maps that share parameters across cyclic shifts.

        The channel is cyclic, so the training objective is invariant under
        a simultaneous shift of all FNs and containers. Tying beta per
        (FN type, container pattern relative to the FN anchor) and the NBP
        weights per (container pattern, port offset, iteration) keeps one
        parameter per equivalence class and accumulates the gradients of
        all K shifts onto it.
        """
        k, mem = self.k, self.spec.memory

        def base_of(vns0):
            # the member from which the whole set is reached going forward
            for b in vns0:
                if max((v - b) % k for v in vns0) <= self.span_limit:
                    return b
            raise AssertionError("container exceeds its span limit")

        def centered(off):
            return (off % k + k // 2) % k - k // 2

        beta_index: dict = {}
        beta_map = np.zeros(self.n_fns * self.max_options, dtype=int)
        for i in range(self.n_fns):
            if i < k:
                anchor, typ = i, 0
            else:
                typ = 1 + (i - k) // k
                anchor = (i - k) % k
            for j, cid in enumerate(self.options[i]):
                c = self.cs.containers[cid - 1]
                pat = tuple(sorted(centered(v - 1 - anchor) for v in c.vn_set))
                idx = beta_index.setdefault((typ, pat), len(beta_index))
                beta_map[i * self.max_options + j] = idx

        nbp_index: dict = {}
        nbp_map = np.zeros(n_iterations * self.n_edges, dtype=int)
        for m, c in enumerate(self.cs.containers):
            vns0 = [v - 1 for v in c.vn_set]
            b = base_of(vns0)
            pat = tuple(sorted((v - b) % k for v in vns0))
            for p, v in enumerate(vns0):
                rel = (v - b) % k
                for it in range(n_iterations):
                    idx = nbp_index.setdefault((pat, rel, it), len(nbp_index))
                    nbp_map[it * self.n_edges + m * self.d_max + p] = idx
        return TieMaps(beta_map, len(beta_index), nbp_map, len(nbp_index))

    def pad_beta(self, weights: ClusterWeights) -> tuple[np.ndarray, np.ndarray]:
        """(padded beta, active mask): active = real option and not pruned."""
        beta = np.zeros((self.n_fns, self.max_options))
        active = np.zeros_like(self.valid_mask)
        for i, (b, m) in enumerate(zip(weights.beta, weights.mask)):
            beta[i, : b.size] = b
            active[i, : b.size] = ~m
        return beta, active

    def unpad_beta(self, beta: np.ndarray, active: np.ndarray) -> ClusterWeights:
        return ClusterWeights(
            [beta[i, : len(o)].copy() for i, o in enumerate(self.options)],
            [~active[i, : len(o)] for i, o in enumerate(self.options)],
        )

    # -- table building -----------------------------------------------------

    def component_tables(self, y: np.ndarray, sigma2: float) -> np.ndarray:
        """Extended basis-FN log tables per component, shape (B, n_comp, C)."""
        flat = ufg_flat_tables(self.spec, np.atleast_2d(y), sigma2)
        return flat[:, self.comp_ext_flat]

    def container_tables(self, alphas: list[np.ndarray], y, sigma2) -> np.ndarray:
        """Numpy (no-grad) container tables, shape (B, N_C, 2**d_max)."""
        e = self.component_tables(y, sigma2)
        a_flat = np.array([alphas[i][j] for i, j in zip(self.comp_fn, self.comp_slot)])
        prod = a_flat[None, :, None] * e
        out = np.zeros((e.shape[0], self.cs.count, e.shape[2]))
        nonempty = self.seg_lengths > 0
        if nonempty.any():
            out[:, nonempty, :] = np.add.reduceat(
                prod, self.seg_starts[nonempty], axis=1
            )
        return out

    # -- differentiable loss ------------------------------------------------

    def make_loss_computation(
        self,
        e_const: np.ndarray,
        x_batch: np.ndarray,
        active: np.ndarray,
        n_iterations: int,
        nbp_enabled: bool,
        loss_kind: str = "soft_ber",
        softmax_scale: float = 1.0,
    ):
        """Closure params -> scalar loss for record_and_backprop / FD checks.

        ``params`` is [beta_padded] or [beta_padded, nbp_weights (N, E)].
        ``softmax_scale`` is an inverse softmax temperature; ramping it up
        during training anneals the clustering toward a discrete one.
        """
        x = np.asarray(x_batch, dtype=float)
        half_true = (1.0 + x) / 2.0  # term contributed when m would be 1

        def computation(params):
            beta = params[0]
            if softmax_scale != 1.0:
                beta = ad.mul(beta, float(softmax_scale))
            alpha_pad = ad.masked_softmax(beta, active)
            alpha_flat = ad.take_last(
                ad.reshape(alpha_pad, (self.n_fns * self.max_options,)),
                self.comp_alpha_idx,
            )
            prod = ad.mul(
                ad.reshape(alpha_flat, (1, self.n_components, 1)), ad.Tensor(e_const)
            )
            tables = ad.segment_sum_last(prod, self.seg_starts, self.seg_lengths)
            nbp = [params[1]] if nbp_enabled else None
            if loss_kind == "soft_ber_multi":
                # soft BER accumulated over every iteration's marginals keeps
                # a gradient path into the early iterations
                margs = run_batch_spa(
                    self.structure, [tables], n_iterations, nbp, return_all=True
                )
                total = None
                for marg in margs:
                    term = ad.add(
                        ad.tsum(ad.mul(ad.Tensor(-x), marg)), float(half_true.sum())
                    )
                    total = term if total is None else ad.add(total, term)
                return ad.mul(total, 1.0 / len(margs))
            marg = run_batch_spa(self.structure, [tables], n_iterations, nbp)
            if loss_kind == "soft_ber":
                # sum of per-symbol error probabilities, linear in m
                return ad.add(
                    ad.tsum(ad.mul(ad.Tensor(-x), marg)), float(half_true.sum())
                )
            if loss_kind == "cross_entropy":
                p_true = ad.add(ad.mul(ad.Tensor(x), marg), ad.Tensor(1.0 - half_true))
                return ad.neg(ad.tsum(ad.log(ad.clamp(p_true, 1e-300, 1.0))))
            raise ValueError(f"unknown loss '{loss_kind}'")

        return computation


class CCRuntime:
    """Batched detector for a (possibly pruned) trained clustering model."""

    def __init__(self, model):
        self.model = model
        self.program = CCProgram(model.spec, model.k, model.d_max, model.span_limit)
        stored = [list(o) for o in model.options]
        if stored != self.program.options:
            raise ValueError("model option lists do not match its containers")
        self.alphas = compute_alphas(model.weights)
        # drop containers that lost all support (every component has alpha 0)
        amap = assignment_map(self.program.options, self.program.cs.count)
        keep = np.array(
            [
                any(self.alphas[i][j] > 0.0 for i, j in amap[m])
                for m in range(self.program.cs.count)
            ]
        )
        self.kept = np.flatnonzero(keep)
        vn_idx = np.array([c.vn_set for c in self.program.cs.containers]) - 1
        from .spa import DegreeGroup

        self.structure = BatchStructure(
            model.k,
            [DegreeGroup(model.d_max, vn_idx[self.kept], np.arange(self.kept.size))],
        )
        if model.nbp_weights is not None:
            cols = (
                self.kept[:, None] * model.d_max + np.arange(model.d_max)[None, :]
            ).ravel()
            self.nbp = model.nbp_weights[:, cols]
        else:
            self.nbp = None

    def default_iterations(self) -> int:
        if self.nbp is not None:
            return self.nbp.shape[0]
        return 7 if self.model.d_max == 3 else 10

    def marginals(self, y: np.ndarray, sigma2: float, n_iterations: int | None = None) -> np.ndarray:
        n = self.default_iterations() if n_iterations is None else n_iterations
        if self.nbp is not None and n != self.nbp.shape[0]:
            raise ValueError(
                f"model carries nbp weights for {self.nbp.shape[0]} iterations"
            )
        tables = self.program.container_tables(self.alphas, y, sigma2)
        nbp = None if self.nbp is None else [self.nbp]
        return run_batch_spa(
            self.structure, [tables[:, self.kept, :]], n, nbp
        ).value
