import itertools

import numpy as np
import pytest

from fgdetect.channel import (
    ChannelSpec,
    make_rng,
    reference_channel,
    sample_symbols,
    transmit,
)
from fgdetect.checks import (
    clustering_preservation_check,
    one_hot_equivalence_check,
)
from fgdetect.cluster import (
    ClusterWeights,
    apply_discrete_clustering,
    build_clustered_graph,
    clustering_options,
    compute_alphas,
    container_supports,
    cyclic_span,
    enumerate_containers,
    prune,
    relevance,
    simplify,
)
from fgdetect.graph import (
    all_configs,
    build_ffg,
    build_ufg,
    global_log_function_all,
)


def observation(spec, k, seed, sigma2=0.5):
    x = sample_symbols(k, make_rng(seed, stream=1))
    return transmit(x, spec, sigma2, make_rng(seed, stream=2))


def brute_force_span(vns, k):
    """Smallest cyclic window containing vns, by trying every start."""
    best = k
    for start in range(k):
        offsets = [(v - 1 - start) % k for v in vns]
        best = min(best, max(offsets))
    return best


def test_cyclic_span_against_brute_force():
    rng = make_rng(0)
    for _ in range(200):
        k = int(rng.integers(5, 20))
        size = int(rng.integers(2, min(5, k) + 1))
        vns = tuple(
            sorted(int(v) + 1 for v in rng.choice(k, size=size, replace=False))
        )
        span, _ = cyclic_span(vns, k)
        assert span == brute_force_span(vns, k)


def test_enumerate_adjacent_pairs_k5():
    cs = enumerate_containers(5, 0, 2, span_limit=1)
    sets = {c.vn_set for c in cs.containers}
    assert sets == {(1, 2), (2, 3), (3, 4), (4, 5), (1, 5)}


def test_enumerate_matches_brute_force_k8():
    cs = enumerate_containers(8, 4, 3)
    expected = {
        s
        for s in itertools.combinations(range(1, 9), 3)
        if brute_force_span(s, 8) <= 5
    }
    assert {c.vn_set for c in cs.containers} == expected


def test_enumerate_pair_count_large_k():
    cs = enumerate_containers(12, 2, 2, span_limit=3)
    # one pair per offset 1..3 and position
    assert cs.count == 12 * 3
    for offset in (1, 2):
        cs_o = enumerate_containers(12, offset - 1, 2, span_limit=offset)
        assert cs_o.count == 12 * offset


def test_enumerate_rejects_bad_parameters():
    with pytest.raises(ValueError):
        enumerate_containers(8, 2, 5)
    with pytest.raises(ValueError):
        enumerate_containers(8, 2, 1)


def test_container_ids_and_order_deterministic():
    a = enumerate_containers(10, 2, 3)
    b = enumerate_containers(10, 2, 3)
    assert [c.vn_set for c in a.containers] == [c.vn_set for c in b.containers]
    assert [c.id for c in a.containers] == list(range(1, a.count + 1))


def test_options_lists_match_subset_scan():
    spec = reference_channel()
    k = 8
    obs = observation(spec, k, 3)
    bfg = build_ufg(spec, obs)
    cs = enumerate_containers(k, spec.memory, 3)
    options = clustering_options(bfg, cs)
    for i, fn in enumerate(bfg.fns):
        expected = [
            c.id for c in cs.containers if set(fn.neighbors) <= set(c.vn_set)
        ]
        assert options[i] == expected
        assert options[i] == sorted(options[i])
        assert options[i]


def test_options_empty_rejected():
    spec = reference_channel()
    k = 12
    obs = observation(spec, k, 4)
    bfg = build_ufg(spec, obs)
    # span limit too small for the widest interference pair
    cs = enumerate_containers(k, spec.memory, 3, span_limit=2)
    with pytest.raises(ValueError):
        clustering_options(bfg, cs)


def test_compute_alphas_uniform_and_ln2():
    w = ClusterWeights(
        [np.zeros(3), np.array([np.log(2.0), 0.0])],
        [np.zeros(3, dtype=bool), np.zeros(2, dtype=bool)],
    )
    a = compute_alphas(w)
    assert np.allclose(a[0], 1.0 / 3.0)
    assert np.allclose(a[1], [2.0 / 3.0, 1.0 / 3.0])


def test_compute_alphas_masked_and_saturated():
    w = ClusterWeights(
        [np.array([50.0, 0.0, 0.0])],
        [np.array([False, True, False])],
    )
    a = compute_alphas(w)
    assert a[0][1] == 0.0
    assert a[0][0] > 1.0 - 1e-15
    with pytest.raises(ValueError):
        compute_alphas(
            ClusterWeights([np.zeros(2)], [np.ones(2, dtype=bool)])
        )


def test_alphas_normalized_before_and_after_pruning():
    rng = make_rng(5)
    spec = reference_channel()
    cs = enumerate_containers(16, spec.memory, 4)
    obs = observation(spec, 16, 6)
    bfg = build_ufg(spec, obs)
    options = clustering_options(bfg, cs)
    w = ClusterWeights.random_init(options, rng)
    for weights in (w, prune(w, 0.02)):
        for a in compute_alphas(weights):
            assert a.sum() == pytest.approx(1.0, abs=1e-12)


def test_factorization_preserved_for_random_weights():
    assert clustering_preservation_check(n_draws=5, seed=3) < 1e-9


def test_factorization_preserved_after_pruning():
    spec = reference_channel()
    k = 8
    rng = make_rng(7)
    obs = observation(spec, k, 8)
    bfg = build_ufg(spec, obs)
    cs = enumerate_containers(k, spec.memory, 4)
    options = clustering_options(bfg, cs)
    w = prune(ClusterWeights.random_init(options, rng), 0.05)
    clustered = build_clustered_graph(bfg, cs, compute_alphas(w))
    configs = all_configs(k)
    d = global_log_function_all(clustered, configs) - global_log_function_all(
        bfg, configs
    )
    assert d.max() - d.min() < 1e-9


def test_one_hot_equivalence():
    assert one_hot_equivalence_check(n_draws=5, seed=4) < 1e-12


def test_discrete_merge_table_is_sum_of_extensions():
    spec = ChannelSpec((0.8, 0.6))
    k = 8
    obs = observation(spec, k, 9)
    bfg = build_ufg(spec, obs)
    cs = enumerate_containers(k, spec.memory, 3, span_limit=2)
    options = clustering_options(bfg, cs)
    # cluster the degree-2 FN on (1,2) and the degree-1 FN on (2,) into the
    # same container; its table must be the sum of the extended log tables
    target = next(
        c.id for c in cs.containers if c.vn_set == (1, 2, 3)
    )
    assignment = [options[i][0] for i in range(bfg.n_fns)]
    i_pair = next(
        i for i, fn in enumerate(bfg.fns) if fn.neighbors == (1, 2)
    )
    i_single = next(
        i for i, fn in enumerate(bfg.fns) if fn.neighbors == (2,)
    )
    assignment[i_pair] = target
    assignment[i_single] = target
    alphas = []
    for i, opts in enumerate(options):
        a = np.zeros(len(opts))
        a[opts.index(assignment[i])] = 1.0
        alphas.append(a)
    clustered = build_clustered_graph(bfg, cs, alphas)
    table = clustered.fns[target - 1].log_values
    pair = bfg.fns[i_pair].log_values
    single = bfg.fns[i_single].log_values
    others = [
        i
        for i in range(bfg.n_fns)
        if assignment[i] == target and i not in (i_pair, i_single)
    ]
    expected = np.zeros(8)
    for c in range(8):
        x1, x2, _ = ((c >> b) & 1 for b in range(3))
        expected[c] = pair[x1 + 2 * x2] + single[x2]
    for i in others:
        fn = bfg.fns[i]
        for c in range(8):
            bits = [(c >> b) & 1 for b in range(3)]
            sel = [
                bits[(1, 2, 3).index(v)] for v in fn.neighbors
            ]
            idx = sum(b << p for p, b in enumerate(sel))
            expected[c] += fn.log_values[idx]
    assert np.allclose(table, expected)


def test_simplify_drops_padding_and_is_idempotent():
    spec = reference_channel()
    k = 8
    obs = observation(spec, k, 10)
    bfg = build_ufg(spec, obs)
    cs = enumerate_containers(k, spec.memory, 4)
    options = clustering_options(bfg, cs)
    rng = make_rng(11)
    assignment = [int(rng.choice(opts)) for opts in options]
    g = apply_discrete_clustering(bfg, cs, assignment)
    # idempotent: simplifying again with full supports changes nothing
    again = simplify(g, [set(fn.neighbors) for fn in g.fns])
    assert g.n_fns == again.n_fns
    for a, b in zip(g.fns, again.fns):
        assert a.neighbors == b.neighbors
        assert np.array_equal(a.log_values, b.log_values)
    # every degree-2 component alone in a degree-4 container ends at degree 2
    for fn in g.fns:
        assert 1 <= fn.degree <= 4


def test_simplify_preserves_global_function():
    spec = reference_channel()
    k = 8
    obs = observation(spec, k, 12)
    bfg = build_ufg(spec, obs)
    cs = enumerate_containers(k, spec.memory, 3)
    options = clustering_options(bfg, cs)
    rng = make_rng(13)
    assignment = [int(rng.choice(opts)) for opts in options]
    g = apply_discrete_clustering(bfg, cs, assignment)
    configs = all_configs(k)
    d = global_log_function_all(g, configs) - global_log_function_all(
        bfg, configs
    )
    assert d.max() - d.min() < 1e-9


def test_invalid_assignment_rejected():
    spec = reference_channel()
    k = 8
    obs = observation(spec, k, 14)
    bfg = build_ufg(spec, obs)
    cs = enumerate_containers(k, spec.memory, 3)
    options = clustering_options(bfg, cs)
    bad = [opts[0] for opts in options]
    bad[0] = next(
        c.id for c in cs.containers if c.id not in options[0]
    )
    with pytest.raises(ValueError):
        apply_discrete_clustering(bfg, cs, bad)


def test_ffg_is_a_clustered_ufg():
    """Clustering each UFG window into degree-(L+1) containers reproduces
    the FFG global function up to a constant."""
    spec = ChannelSpec((0.7, 0.4, 0.2))  # L=2 keeps d_max=3 in range
    k = 8
    obs = observation(spec, k, 15)
    bfg = build_ufg(spec, obs)
    cs = enumerate_containers(k, spec.memory, 3, span_limit=2)
    # contiguous windows {k, k+1, k+2}: assign F_k and its interference
    # pairs into the window starting at k
    window_id = {}
    for c in cs.containers:
        start = min(
            ((v - 1) % k for v in c.vn_set),
            key=lambda s: max((v - 1 - s) % k for v in c.vn_set),
        )
        window_id[c.vn_set] = c.id
    assignment = []
    for fn in bfg.fns:
        if fn.degree == 1:
            v = fn.neighbors[0] - 1
            ws = (v - 2) % k
            target = tuple(sorted((ws + o) % k + 1 for o in range(3)))
        else:
            a, b = (v - 1 for v in fn.neighbors)
            if (b - a) % k <= 2:
                ws, off = a, (b - a) % k
            else:
                ws, off = b, (a - b) % k
            ws = (ws + off - 2) % k
            target = tuple(sorted((ws + o) % k + 1 for o in range(3)))
        assignment.append(window_id[target])
    g = apply_discrete_clustering(bfg, cs, assignment)
    ffg = build_ffg(spec, obs)
    configs = all_configs(k)
    d = global_log_function_all(g, configs) - global_log_function_all(
        ffg, configs
    )
    assert d.max() - d.min() < 1e-9


def test_prune_examples():
    # alpha (0.005, 0.995) at threshold 0.01 becomes (0, 1)
    beta = [np.array([0.0, np.log(0.995 / 0.005)])]
    w = ClusterWeights(beta, [np.zeros(2, dtype=bool)])
    pruned = prune(w, 0.01)
    a = compute_alphas(pruned)
    assert a[0][0] == 0.0
    assert a[0][1] == 1.0
    # threshold 0 changes nothing
    same = prune(w, 0.0)
    assert [m.tolist() for m in same.mask] == [m.tolist() for m in w.mask]
    with pytest.raises(ValueError):
        prune(w, 1.0)


def test_prune_all_masked_rejected():
    w = ClusterWeights([np.zeros(3)], [np.zeros(3, dtype=bool)])
    with pytest.raises(ValueError):
        prune(w, 0.5)  # uniform 1/3 all below 0.5


def test_relevance():
    options = [[1, 2], [2, 3]]
    alphas = [np.array([0.2, 0.8]), np.array([0.7, 0.3])]
    r = relevance(alphas, options, 4)
    assert np.allclose(r, [0.2, 0.8, 0.3, 0.0])


def test_container_supports_tracks_positive_alphas():
    spec = reference_channel()
    k = 8
    obs = observation(spec, k, 16)
    bfg = build_ufg(spec, obs)
    cs = enumerate_containers(k, spec.memory, 3)
    options = clustering_options(bfg, cs)
    alphas = []
    for opts in options:
        a = np.zeros(len(opts))
        a[0] = 1.0
        alphas.append(a)
    supports = container_supports(bfg, cs, alphas, options)
    for i, opts in enumerate(options):
        target = opts[0] - 1
        assert set(bfg.fns[i].neighbors) <= supports[target]
