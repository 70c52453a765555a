import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctgcn.exceptions import ConfigError, StationarityError
from ctgcn.synth import (ScmSpec, block_scm, generate_diffusion_dataset, generate_scm_dataset, knn_graph,
                         random_layout, random_scm, row_normalize)


def test_empty_scm_is_white_noise():
    ok = 0
    for seed in range(10):
        ds, truth = generate_scm_dataset(ScmSpec(4, (), seed=seed), 2000)
        r = np.corrcoef(ds.values)
        ok += np.all(np.abs(r[np.triu_indices(4, 1)]) < 0.1)
        assert truth.n_edges == 0
    assert ok >= 9


def test_lagged_coefficient_recovered_by_regression():
    ds, _ = generate_scm_dataset(ScmSpec(2, ((0, 1, 1, 0.7),), seed=3), 5000)
    x, y = ds.values
    coef = np.linalg.lstsq(np.column_stack([x[:-1], np.ones(4999)]), y[1:], rcond=None)[0][0]
    assert abs(coef - 0.7) <= 0.05


def test_explosive_self_loop_rejected():
    with pytest.raises(StationarityError):
        generate_scm_dataset(ScmSpec(1, ((0, 0, 1, 1.1),)), 100)


def test_contemporaneous_cycle_rejected():
    with pytest.raises(StationarityError):
        ScmSpec(2, ((0, 1, 0, 0.5), (1, 0, 0, 0.5))).topological_order()
    with pytest.raises(ConfigError):
        ScmSpec(2, ((0, 0, 0, 0.5),))


def test_contemporaneous_mixing_matches_equations():
    spec = ScmSpec(3, ((0, 1, 0, 0.5), (1, 2, 0, -0.4), (2, 0, 1, 0.3)), seed=1)
    ds, _ = generate_scm_dataset(spec, 50, burn_in=0)
    rng = np.random.default_rng(1)
    eta = rng.standard_normal((50, 3))
    x = np.zeros((51, 3))
    for t in range(50):
        x[t + 1, 0] = 0.3 * x[t, 2] + eta[t, 0]
        x[t + 1, 1] = 0.5 * x[t + 1, 0] + eta[t, 1]
        x[t + 1, 2] = -0.4 * x[t + 1, 1] + eta[t, 2]
    np.testing.assert_allclose(ds.values, x[1:].T, rtol=0, atol=1e-12)


def test_link_function_hook():
    spec = ScmSpec(2, ((0, 1, 1, 0.5),), seed=0)
    ds, _ = generate_scm_dataset(spec, 200, link_function=np.tanh)
    assert np.all(np.isfinite(ds.values))
    lin, _ = generate_scm_dataset(spec, 200)
    np.testing.assert_array_equal(ds.values[0], lin.values[0])
    assert not np.allclose(ds.values[1], lin.values[1])


@given(st.integers(0, 500))
def test_random_scm_truth_matches_edges(seed):
    spec = random_scm(6, 5, seed=seed)
    assert spec.spectral_radius() < 0.95
    truth = spec.truth().matrix
    expected = np.zeros((6, 6))
    for s, d, lag, c in spec.edges:
        assert 1 <= lag <= 3 and 0.4 <= abs(c) <= 0.8
        expected[s, d] = 1
    assert np.array_equal(truth, expected) and truth.sum() == 5


def test_variance_is_stable():
    ds, _ = generate_scm_dataset(random_scm(8, 6, autocorr=0.5, seed=2), 4000)
    half = ds.n_steps // 2
    ratio = ds.values[:, :half].var(axis=1) / ds.values[:, half:].var(axis=1)
    assert np.all((ratio > 0.5) & (ratio < 2))


def test_spec_json_round_trip(tmp_path):
    spec = random_scm(5, 4, seed=7)
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(spec.to_dict()))
    assert ScmSpec.from_json(p) == spec


def test_block_scm_has_no_cross_block_edges():
    spec = block_scm(4, 8, seed=1)
    for s, d, _, _ in spec.edges:
        assert s // 8 == d // 8
    assert spec.truth().n_edges == 4 * 7


def test_diffusion_rho_to_zero_is_independent_ar1():
    G = knn_graph(random_layout(6, 5, 0), 2)
    ds, _ = generate_diffusion_dataset(G, 300, rho=1e-9, seed=4, decay=0.9, burn_in=0)
    eta = np.random.default_rng(4).standard_normal((300, 6))
    x = np.zeros((301, 6))
    for t in range(300):
        x[t + 1] = 0.9 * x[t] + eta[t]
    assert np.max(np.abs(ds.values - x[1:].T)) < 1e-6


def test_diffusion_complete_graph_converges_to_mean():
    n = 5
    start = np.array([3.0, -1.0, 0.5, 7.0, -4.0])
    ds, _ = generate_diffusion_dataset(np.ones((n, n)), 60, rho=0.5, noise=0.0, decay=1.0,
                                       burn_in=0, x0=start)
    dev = np.abs(ds.values - start.mean()).max(axis=0)
    assert np.all(np.diff(dev) <= 1e-12) and dev[-1] < 1e-3
    np.testing.assert_allclose(ds.values.mean(axis=0), start.mean(), atol=1e-12)


def test_diffusion_determinism_and_truth():
    G = knn_graph(random_layout(10, 5, 1), 3)
    a, truth = generate_diffusion_dataset(G, 200, seed=9)
    b, _ = generate_diffusion_dataset(G, 200, seed=9)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(truth.matrix, G) and not truth.directed
    assert np.all(np.isfinite(a.values))
    with pytest.raises(ConfigError):
        generate_diffusion_dataset(G, 10, rho=1.5)


def test_row_normalize_and_knn():
    W = row_normalize(np.array([[0, 2.0, 2.0], [1, 0, 0], [0, 0, 0]]))
    np.testing.assert_array_equal(W, [[0, 0.5, 0.5], [1, 0, 0], [0, 0, 1]])
    G = knn_graph(np.array([[0, 0], [1, 0], [5, 0], [6, 0.0]]), 1)
    assert np.array_equal(G, [[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
