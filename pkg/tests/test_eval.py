import numpy as np
import pytest
from scipy.stats import norm

from fgdetect.channel import (
    ChannelSpec,
    make_rng,
    noise_variance_from_esn0,
    reference_channel,
    sample_symbols,
    transmit,
)
from fgdetect.evaluation import (
    BerRecord,
    ber_point,
    ber_sweep,
    exhaustive_marginals,
    make_detector,
    map_agreement,
    map_marginals_bruteforce,
    read_ber_csv,
    write_ber_csv,
)
from fgdetect.checks import random_tree_graph
from fgdetect.spa import SpaConfig, run_spa


def test_map_memoryless_closed_form():
    spec = ChannelSpec((1.0,))
    rng = make_rng(0)
    x = sample_symbols(8, rng)
    sigma2 = 0.4
    obs = transmit(x, spec, sigma2, make_rng(1))
    m = map_marginals_bruteforce(spec, obs.y, sigma2)
    expected = 1.0 / (1.0 + np.exp(-2.0 * obs.y / sigma2))
    assert np.allclose(m, expected, atol=1e-12)


def test_map_uninformative_at_huge_noise():
    spec = reference_channel()
    x = sample_symbols(8, make_rng(2))
    obs = transmit(x, spec, 1.0, make_rng(3))
    m = map_marginals_bruteforce(spec, obs.y, 1e6)
    assert np.allclose(m, 0.5, atol=1e-3)


def test_map_k_limit():
    spec = ChannelSpec((1.0,))
    with pytest.raises(ValueError):
        map_marginals_bruteforce(spec, np.zeros(21), 0.5)


def test_exhaustive_marginals_match_spa_on_tree():
    g = random_tree_graph(make_rng(4), max_vns=8)
    m = run_spa(g, SpaConfig(iterations=2 * g.n_fns + 2))
    assert np.max(np.abs(m - exhaustive_marginals(g))) < 1e-9


def test_ber_record_fields():
    r = BerRecord(10.0, 1000, 10)
    assert r.ber == pytest.approx(0.01)
    assert r.ci95 == pytest.approx(1.96 * np.sqrt(0.01 * 0.99 / 1000))
    assert BerRecord(0.0, 0, 0).ber == 0.0


def test_noiseless_ffg_detection_perfect():
    # the reference channel has a spectral near-null (min |H| = 1e-3), so
    # "noiseless" only holds once the noise is far below that margin
    spec = reference_channel()
    det = make_detector("ffg", spec, 16, n_iterations=10)
    r = ber_point(det, spec, 16, 80.0, seed=5, min_errors=100,
                  max_bits=100_000)
    assert r.errors == 0
    assert r.bits >= 100_000


def test_memoryless_ber_matches_q_function():
    spec = ChannelSpec((1.0,))
    det = make_detector("ffg", spec, 64, n_iterations=1)
    esn0 = 4.0
    r = ber_point(det, spec, 64, esn0, seed=6, min_errors=300,
                  max_bits=10_000_000)
    theory = norm.sf(np.sqrt(2.0 * 10.0 ** (esn0 / 10.0)))
    assert abs(r.ber - theory) <= max(r.ci95, 2e-4)


def test_ufg_worse_than_ffg_at_10db():
    spec = reference_channel()
    ffg = ber_point(make_detector("ffg", spec, 64), spec, 64, 10.0, seed=7,
                    min_errors=50, max_bits=500_000)
    ufg = ber_point(make_detector("ufg", spec, 64), spec, 64, 10.0, seed=7,
                    min_errors=50, max_bits=100_000)
    assert ufg.ber > ffg.ber


def test_sweep_seeds_land_in_mutual_cis():
    spec = reference_channel()
    k = 16
    esn0 = [4.0]
    hits = 0
    trials = 5
    records = []
    for seed in range(trials):
        det = make_detector("ffg", spec, k)
        rec = ber_sweep(det, spec, k, esn0, seed, min_errors=200,
                        max_bits=2_000_000)[0]
        records.append(rec)
    for i in range(trials):
        for j in range(i + 1, trials):
            a, b = records[i], records[j]
            if abs(a.ber - b.ber) <= a.ci95 + b.ci95:
                hits += 1
    assert hits >= 0.9 * (trials * (trials - 1) / 2)


def test_csv_round_trip(tmp_path):
    records = [BerRecord(0.0, 1000, 55), BerRecord(2.0, 5000, 12)]
    path = tmp_path / "ber.csv"
    write_ber_csv(records, path)
    header = path.read_text().splitlines()[0]
    assert header == "esn0_db,bits,errors,ber,ci95"
    loaded = read_ber_csv(path)
    assert [(r.esn0_db, r.bits, r.errors) for r in loaded] == [
        (0.0, 1000, 55),
        (2.0, 5000, 12),
    ]


def test_map_agreement_fast_config():
    spec = reference_channel()
    agreement = map_agreement(spec, 12, 10.0, 2000, seed=8)
    assert agreement >= 0.99


def test_map_detector_variant_limit():
    spec = reference_channel()
    with pytest.raises(ValueError):
        make_detector("map", spec, 64)
    with pytest.raises(ValueError):
        make_detector("nope", spec, 8)
