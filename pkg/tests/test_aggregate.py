import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctgcn.aggregate import (STRATEGIES, CausalAdjacency, build_adjacency, distance_adjacency,
                             to_undirected, vote_sample_set)
from ctgcn.exceptions import DataError
from ctgcn.pcmci import CausalTestResults


def results_with_lags(n, tau_max, links):
    graph = np.full((n, n, tau_max + 1), "", dtype="<U3")
    for i, j, tau in links:
        graph[i, j, tau] = "-->"
        if tau == 0:
            graph[j, i, 0] = "<--"
    p = np.where(graph == "", 1.0, 0.0)
    return CausalTestResults(tuple(f"x{i}" for i in range(n)), tau_max, 0.01, graph, p, p.copy())


def test_any_lag_vote():
    res = results_with_lags(2, 6, [(0, 1, 0), (0, 1, 2)])
    assert vote_sample_set(res, "any")[0, 1] == 1


def test_no_significant_lag():
    res = results_with_lags(2, 6, [])
    assert vote_sample_set(res, "any").sum() == 0 and vote_sample_set(res, "mv").sum() == 0


def test_mv_three_of_seven():
    res = results_with_lags(2, 6, [(0, 1, 1), (0, 1, 2), (0, 1, 3)])
    assert vote_sample_set(res, "mv")[0, 1] == 0
    res = results_with_lags(2, 6, [(0, 1, t) for t in range(1, 5)])
    assert vote_sample_set(res, "mv")[0, 1] == 1


def test_unoriented_votes_both_ways():
    res = results_with_lags(2, 1, [])
    res.graph[0, 1, 0] = res.graph[1, 0, 0] = "o-o"
    res.p_matrix[0, 1, 0] = res.p_matrix[1, 0, 0] = 0.0
    v = vote_sample_set(res)
    assert v[0, 1] == v[1, 0] == 1


def test_unknown_vote_mode():
    with pytest.raises(ValueError):
        vote_sample_set(results_with_lags(2, 1, []), "median")


def votes_for(pattern):
    V = np.zeros((len(pattern), 1, 2, 2), dtype=np.int8)
    V[:, 0, 0, 1] = pattern
    return V


@pytest.mark.parametrize("pattern,expected", [
    ([1, 1, 0], {"ANY;W": 2, "MT;W": 2, "ANY;UW": 1, "MT;UW": 1}),
    ([1, 0, 0], {"ANY;W": 1, "MT;W": 0, "ANY;UW": 1, "MT;UW": 0}),
    ([0, 0, 0], {"ANY;W": 0, "MT;W": 0, "ANY;UW": 0, "MT;UW": 0}),
])
def test_strategy_hand_values(pattern, expected):
    for strategy, value in expected.items():
        A = build_adjacency(votes_for(pattern), strategy)
        assert A.matrix[0, 1] == value
        assert A.matrix.sum() == value


@given(st.integers(0, 10_000))
def test_strategy_lattice(seed):
    rng = np.random.default_rng(seed)
    T, S, N = rng.integers(1, 6), rng.integers(1, 5), rng.integers(2, 8)
    V = rng.integers(0, 2, (T, S, N, N)).astype(np.int8)
    A = {s: build_adjacency(V, s).matrix for s in STRATEGIES}
    assert np.all((A["MT;W"] > 0) <= (A["ANY;W"] > 0))
    assert np.array_equal(A["ANY;UW"], (A["ANY;W"] > 0).astype(float))
    assert np.array_equal(A["MT;UW"], (A["MT;W"] > 0).astype(float))


def test_undirected():
    A = CausalAdjacency(np.array([[0, 2.0], [0, 0]]))
    U = to_undirected(A)
    assert np.array_equal(U.matrix, [[0, 1], [1, 0]]) and not U.directed
    assert np.array_equal(to_undirected(CausalAdjacency(np.zeros((3, 3)))).matrix, np.zeros((3, 3)))
    sym = CausalAdjacency(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0.0]]))
    assert np.array_equal(to_undirected(sym).matrix, sym.matrix)


def test_distance_hand_values():
    d2 = np.array([[0.0, 6.0, 8.0], [6.0, 0.0, 1e6], [8.0, 1e6, 0.0]])
    W = distance_adjacency(np.sqrt(d2), sigma2=10, epsilon=0.5)
    assert W[0, 1] == pytest.approx(0.5488116360940264, abs=1e-15)
    assert W[0, 2] == 0.0 and W[1, 2] == 0.0
    assert np.all(np.diag(W) == 0)


@given(st.integers(0, 10_000))
def test_distance_range(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 6, (6, 2))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    W = distance_adjacency(d)
    off = W[~np.eye(6, dtype=bool)]
    assert np.all((off == 0) | ((off >= 0.5) & (off <= 1)))


def test_distance_validation():
    with pytest.raises(DataError):
        distance_adjacency(np.array([[0, 1.0], [2.0, 0]]))
    with pytest.raises(ValueError):
        distance_adjacency(np.zeros((2, 2)), sigma2=0)
    with pytest.raises(ValueError):
        distance_adjacency(np.zeros((2, 2)), epsilon=1.5)


def test_adjacency_validation_and_formats(tmp_path):
    with pytest.raises(DataError):
        CausalAdjacency(np.array([[0, -1.0], [0, 0]]))
    with pytest.raises(DataError):
        CausalAdjacency(np.zeros((2, 3)))
    A = CausalAdjacency(np.array([[5.0, 2, 0], [0, 0, 1], [0, 0, 0]]), "ANY;W", True, ("a", "b", "c"))
    assert A.matrix[0, 0] == 0 and A.n_edges == 2
    p = tmp_path / "a.json"
    A.write_json(p)
    back = CausalAdjacency.read_json(p)
    assert np.array_equal(back.matrix, A.matrix) and back.node_names == A.node_names
    A.write_csv(tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().splitlines() == ["src,dst,weight", "a,b,2", "b,c,1"]
    dot = A.to_dot()
    assert dot.startswith('digraph "causal" {') and '"a" -> "b" [weight=2' in dot
    assert "--" in to_undirected(A).to_dot()


def test_votes_shape_validation():
    with pytest.raises(DataError):
        build_adjacency(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        build_adjacency(np.zeros((1, 1, 2, 2)), "SUM")
