import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctgcn.aggregate import CausalAdjacency
from ctgcn.dtw import Clustering
from ctgcn.exceptions import DataError
from ctgcn.metrics import (GraphScore, adjacency_scores, benchmark_decomposition, format_table, rmse,
                           scores_table)
from ctgcn.pcmci import DiscoveryConfig
from ctgcn.synth import block_scm, generate_scm_dataset
from ctgcn.timeseries import NormalizationStats


def random_graph(rng, n, p=0.2):
    G = (rng.uniform(size=(n, n)) < p).astype(float)
    np.fill_diagonal(G, 0)
    return G


def test_identical_graphs_score_perfectly():
    G = random_graph(np.random.default_rng(0), 12)
    s = adjacency_scores(G, G)
    assert s.precision == s.recall == s.f1 == s.accuracy == 1.0


def test_empty_prediction():
    rng = np.random.default_rng(1)
    G = np.zeros((30, 30))
    off = np.flatnonzero(~np.eye(30, dtype=bool))
    G.flat[rng.choice(off, 50, replace=False)] = 1
    s = adjacency_scores(np.zeros((30, 30)), G)
    assert (s.tp, s.fp, s.fn, s.tn) == (0, 0, 50, 820)
    assert s.recall == 0 and s.f1 == 0
    assert s.accuracy == pytest.approx(820 / 870, abs=1e-15)


def test_complement_prediction():
    G = random_graph(np.random.default_rng(2), 10)
    comp = 1 - G
    np.fill_diagonal(comp, 0)
    s = adjacency_scores(comp, G)
    assert s.tp == 0 and s.accuracy == 0 and s.precision == 0


def test_weights_are_binarised_and_diagonal_ignored():
    G = np.array([[0, 1], [0, 0]], float)
    P = np.array([[5, 0.3], [0, 0]], float)
    assert adjacency_scores(P, G) == GraphScore(1, 0, 0, 1)


def test_undirected_scoring_counts_pairs_once():
    G = np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0]], float)
    s = adjacency_scores(G.T, G, directed=False)
    assert (s.tp, s.fp, s.fn, s.tn) == (1, 0, 0, 2)
    assert adjacency_scores(G.T, G).tp == 0


def test_node_sets_must_agree():
    a = CausalAdjacency(np.zeros((2, 2)), "MT;W", node_names=("a", "b"))
    b = CausalAdjacency(np.zeros((2, 2)), "MT;W", node_names=("a", "c"))
    with pytest.raises(DataError):
        adjacency_scores(a, b)
    with pytest.raises(DataError):
        adjacency_scores(np.zeros((2, 2)), np.zeros((3, 3)))


@given(st.integers(0, 10_000), st.integers(2, 15))
def test_score_ranges_and_counts(seed, n):
    rng = np.random.default_rng(seed)
    s = adjacency_scores(random_graph(rng, n, 0.3), random_graph(rng, n, 0.3))
    assert s.tp + s.fp + s.fn + s.tn == n * (n - 1)
    for v in (s.precision, s.recall, s.accuracy, s.f1):
        assert 0.0 <= v <= 1.0
    d = s.to_dict()
    assert d["f1"] == s.f1 and d["tp"] == s.tp


def test_rmse_examples():
    assert rmse([[1.0, 1.0]], [[0.0, 0.0]]) == 1.0
    assert rmse([[2.0, 0.0]], [[0.0, 0.0]]) == pytest.approx(np.sqrt(2), abs=1e-15)
    assert rmse(np.zeros((3, 2)), np.zeros((3, 2))) == 0.0
    with pytest.raises(DataError):
        rmse(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(DataError):
        rmse([], [])


def test_rmse_in_data_units():
    stats = NormalizationStats(np.array([5.0, -1.0]), np.array([2.0, 10.0]))
    f = np.array([[1.0], [0.0]])
    t = np.zeros((2, 1))
    # errors of 1 std become 2 and 0 in data units
    assert rmse(f, t, stats) == pytest.approx(np.sqrt(2.0), abs=1e-15)
    fb = np.stack([f, f])
    assert rmse(fb, np.zeros_like(fb), stats) == pytest.approx(np.sqrt(2.0), abs=1e-15)


@given(st.integers(0, 10_000))
def test_rmse_symmetry_and_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.standard_normal((3, 4, 5))
    assert rmse(a, b) == rmse(b, a)
    assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-12


def test_format_table_alignment():
    text = format_table([("a", "bb"), ("ccc", "d")])
    lines = text.splitlines()
    assert lines[0] == "a    bb" and lines[1] == "---  --" and lines[2] == "ccc  d"
    table = scores_table({"W": GraphScore(1, 1, 0, 2)})
    assert "precision" in table and "0.5000" in table


@pytest.fixture(scope="module")
def block_data():
    spec = block_scm(2, 3, seed=0)
    ds, _ = generate_scm_dataset(spec, 600)
    clustering = Clustering(np.repeat([0, 1], 3), (0, 3), 0.0, tuple(ds.feature_names))
    return ds, clustering


def test_benchmark_self_comparison(block_data):
    ds, _ = block_data
    single = Clustering.single(ds.n_features, ds.feature_names)
    cfg = DiscoveryConfig(tau_max=1, alpha=0.01)
    benchmark_decomposition(ds, 300, single, cfg, repetitions=1)   # warm caches and JIT
    rep = benchmark_decomposition(ds, 300, single, cfg, repetitions=5)
    assert 0.8 <= rep.speedup <= 1.25


def test_benchmark_report_contents(block_data):
    ds, clustering = block_data
    rep = benchmark_decomposition(ds, 200, clustering, DiscoveryConfig(tau_max=1), repetitions=2)
    t, st_ = rep.entry("temporal"), rep.entry("spatiotemporal")
    assert (t.n_subproblems, st_.n_subproblems) == (3, 6)
    assert (t.n_clusters, st_.n_clusters) == (1, 2)
    assert t.pair_count > st_.pair_count
    assert len(t.times) == 2
    d = json.loads(rep.to_json())
    assert d["speedup"] == pytest.approx(rep.speedup)
    assert "speedup:" in rep.to_table()
    with pytest.raises(KeyError):
        rep.entry("missing")


def test_benchmark_rejects_zero_repetitions(block_data):
    ds, clustering = block_data
    with pytest.raises(ValueError):
        benchmark_decomposition(ds, 200, clustering, repetitions=0)
