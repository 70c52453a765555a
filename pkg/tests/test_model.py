import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctgcn.exceptions import ConfigError, DataError, InsufficientDataError
from ctgcn.model import (CtgcnModel, TrainConfig, chronological_split, evaluate, forward, load_checkpoint,
                         loss_and_grads, normalize_adjacency, save_checkpoint, train, tune)
from ctgcn.synth import generate_diffusion_dataset, knn_graph, random_layout
from ctgcn.timeseries import NormalizationStats, WindowSpec, zscore_normalize


def random_model(seed=0, lam=4, q=2, k=2, c=3, h=4, h2=3, scale=0.3):
    rng = np.random.default_rng(seed)
    m = CtgcnModel.init(lam, q, kernel_width=k, channels=c, hidden=h, hidden_out=h2, seed=seed)
    return m.with_params({n: v + rng.normal(0, scale, v.shape) for n, v in m.params().items()})


def test_normalize_zero_is_identity():
    for n in (1, 4, 9):
        assert np.array_equal(normalize_adjacency(np.zeros((n, n))), np.eye(n))


def test_normalize_symmetric_pair():
    np.testing.assert_allclose(normalize_adjacency([[0, 1], [1, 0]]), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_normalize_weighted_directed():
    np.testing.assert_allclose(normalize_adjacency([[0, 3], [0, 0]]), [[0.25, 1.5], [0, 1]], atol=1e-15)


def test_normalize_rejects_negative():
    with pytest.raises(DataError):
        normalize_adjacency([[0, -1], [0, 0]])
    with pytest.raises(DataError):
        normalize_adjacency(np.zeros((2, 3)))


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_normalize_symmetric_binary_range(seed, n):
    rng = np.random.default_rng(seed)
    A = np.triu(rng.integers(0, 2, (n, n)), 1)
    A = A + A.T
    H = normalize_adjacency(A)
    assert np.allclose(H, H.T, atol=0)
    nz = H[(A + np.eye(n)) > 0]
    assert np.all((nz > 0) & (nz <= 1))
    assert np.all(H[(A + np.eye(n)) == 0] == 0)


def test_zero_model_gives_zero_forecast():
    m = CtgcnModel.init(5, 3, seed=0)
    zero = m.with_params({k: np.zeros_like(v) for k, v in m.params().items()})
    out = forward(zero, np.eye(4), np.random.default_rng(0).standard_normal((4, 5)))
    assert out.shape == (4, 3) and np.all(out == 0)


def unit_model(lam, k):
    return CtgcnModel(np.ones((1, k)), np.zeros(1), np.ones((1, 1)), np.ones((1, 1)),
                      np.ones((1, 1)), np.zeros(1), history_len=lam)


def test_hand_forward_pass():
    x = np.array([[1.0, 3.0], [2.0, 6.0]])
    # full-width kernel: one conv output per node, the window sum
    np.testing.assert_allclose(forward(unit_model(2, 2), np.eye(2), x), [[4.0], [8.0]], atol=1e-15)
    # width-1 kernel: the temporal mean-pool yields the window mean
    np.testing.assert_allclose(forward(unit_model(2, 1), np.eye(2), x), [[2.0], [4.0]], atol=1e-15)


def straight_line_forward(m, A, x):
    n, lam = x.shape
    c, k = m.kernel.shape
    L = lam - k + 1
    X = np.zeros((n, c))
    for i in range(n):
        for ch in range(c):
            acc = 0.0
            for t in range(L):
                s = m.conv_bias[ch]
                for u in range(k):
                    s += m.kernel[ch, u] * x[i, t + u]
                acc += s
            X[i, ch] = acc / L
    h = m.w0.shape[1]
    H1 = np.zeros((n, h))
    for i in range(n):
        for a in range(h):
            s = 0.0
            for j in range(n):
                for ch in range(c):
                    s += A[i, j] * X[j, ch] * m.w0[ch, a]
            H1[i, a] = max(s, 0.0)
    h2 = m.w1.shape[1]
    H2 = np.zeros((n, h2))
    for i in range(n):
        for b in range(h2):
            H2[i, b] = sum(A[i, j] * H1[j, a] * m.w1[a, b] for j in range(n) for a in range(h))
    q = m.head_w.shape[1]
    return np.array([[m.head_b[o] + sum(H2[i, b] * m.head_w[b, o] for b in range(h2)) for o in range(q)]
                     for i in range(n)])


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_straight_line_implementation(seed):
    rng = np.random.default_rng(seed)
    m = random_model(seed, lam=4, q=2, k=2)
    A = normalize_adjacency(rng.uniform(0, 2, (3, 3)))
    x = rng.standard_normal((3, 4))
    np.testing.assert_allclose(forward(m, A, x), straight_line_forward(m, A, x), rtol=0, atol=1e-12)


def test_batched_forward_matches_single():
    rng = np.random.default_rng(1)
    m = random_model(1)
    A = normalize_adjacency(rng.uniform(0, 1, (3, 3)))
    xb = rng.standard_normal((7, 3, 4))
    batched = forward(m, A, xb)
    for b in range(7):
        np.testing.assert_allclose(batched[b], forward(m, A, xb[b]), rtol=0, atol=1e-13)


def test_forward_shape_errors():
    m = CtgcnModel.init(4, 2, seed=0)
    with pytest.raises(DataError):
        forward(m, np.eye(3), np.zeros((3, 5)))
    with pytest.raises(DataError):
        forward(m, np.eye(2), np.zeros((3, 4)))
    with pytest.raises(ConfigError):
        CtgcnModel.init(3, 1, kernel_width=4)


@given(st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    n = 5
    m = random_model(seed % 7, lam=6, q=3, k=3)
    A = rng.uniform(0, 1, (n, n)) * (rng.uniform(size=(n, n)) < 0.5)
    x = rng.standard_normal((n, 6))
    perm = rng.permutation(n)
    out = forward(m, normalize_adjacency(A), x)
    out_p = forward(m, normalize_adjacency(A[np.ix_(perm, perm)]), x[perm])
    np.testing.assert_allclose(out_p, out[perm], rtol=0, atol=1e-9)


def finite_difference_check(m, A, x, y, step=1e-5):
    _, grads = loss_and_grads(m, A, x, y)
    worst = 0.0
    for name, value in m.params().items():
        num = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            up, down = value.copy(), value.copy()
            up[idx] += step
            down[idx] -= step
            num[idx] = (loss_and_grads(m.with_params({name: up}), A, x, y)[0]
                        - loss_and_grads(m.with_params({name: down}), A, x, y)[0]) / (2 * step)
        rel = np.linalg.norm(num - grads[name]) / max(np.linalg.norm(num), np.linalg.norm(grads[name]), 1e-12)
        worst = max(worst, rel)
    return worst


@pytest.mark.parametrize("activation", ["identity", "sigmoid"])
def test_gradients_match_finite_differences(activation):
    rng = np.random.default_rng(3)
    m = random_model(3)
    m = CtgcnModel(**m.params(), history_len=4, output_activation=activation)
    A = normalize_adjacency(rng.uniform(0, 1, (3, 3)))
    x, y = rng.standard_normal((6, 3, 4)), rng.standard_normal((6, 3, 2))
    assert finite_difference_check(m, A, x, y) <= 1e-4


def test_loss_at_perfect_fit():
    rng = np.random.default_rng(0)
    m = random_model(0)
    A = normalize_adjacency(np.ones((3, 3)))
    x = rng.standard_normal((4, 3, 4))
    y = forward(m, A, x)
    loss, grads = loss_and_grads(m, A, x, y)
    assert loss <= 1e-6
    assert np.sqrt(sum(np.sum(g ** 2) for g in grads.values())) <= 1e-6


def test_rmse_homogeneity_under_zero_predictions():
    m = CtgcnModel.init(4, 2, seed=0)
    zero = m.with_params({k: np.zeros_like(v) for k, v in m.params().items()})
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((5, 3, 4)), rng.standard_normal((5, 3, 2))
    a, _ = loss_and_grads(zero, np.eye(3), x, y)
    b, _ = loss_and_grads(zero, np.eye(3), x, 2 * y)
    assert b == pytest.approx(2 * a, rel=1e-10)


def test_empty_batch():
    with pytest.raises(InsufficientDataError):
        loss_and_grads(CtgcnModel.init(4, 2), np.eye(3), np.zeros((0, 3, 4)), np.zeros((0, 3, 2)))


def diffusion(seed=0, n=8, steps=800):
    G = knn_graph(random_layout(n, 6, seed), 2)
    ds, _ = generate_diffusion_dataset(G, steps, seed=seed)
    return zscore_normalize(ds)[0], G


def test_train_config_validation():
    with pytest.raises(ConfigError, match="fractions"):
        TrainConfig(train_fraction=0.8, val_fraction=0.1, test_fraction=0.2)
    with pytest.raises(ConfigError, match="learning_rate"):
        TrainConfig(learning_rate=0)


def test_training_reduces_loss_and_is_deterministic():
    ds, G = diffusion()
    w = WindowSpec(8, 2)
    A = normalize_adjacency(G)
    cfg = TrainConfig(epochs=6, learning_rate=0.01, momentum=0.9, seed=5)
    m0 = CtgcnModel.init(8, 2, channels=4, hidden=4, hidden_out=4, seed=5)
    best, hist = train(m0, A, ds, w, cfg)
    assert hist.train_loss[0] > hist.train_loss[-1]
    assert hist.best_val_loss == min(hist.val_loss)
    _, hist2 = train(m0, A, ds, w, cfg)
    np.testing.assert_allclose(hist2.train_loss, hist.train_loss, rtol=0, atol=1e-12)
    np.testing.assert_allclose(hist2.val_loss, hist.val_loss, rtol=0, atol=1e-12)


def test_split_is_chronological():
    values = np.tile(np.arange(100.0), (2, 1))
    sp = chronological_split(values, WindowSpec(4, 2), TrainConfig())
    assert sp.train[1].max() < 70 <= sp.val[0].min()
    assert sp.val[1].max() < 80 <= sp.test[0].min()


def test_window_longer_than_series():
    ds, G = diffusion(steps=30)
    with pytest.raises(InsufficientDataError):
        train(CtgcnModel.init(20, 15), normalize_adjacency(G), ds, WindowSpec(20, 15), TrainConfig())


def test_tune_single_point():
    ds, G = diffusion(steps=400)
    res = tune({"learning_rate": [0.01]}, ds, normalize_adjacency(G), WindowSpec(6, 1),
               base=TrainConfig(epochs=2))
    assert res.train_config.learning_rate == 0.01 and len(res.trials) == 1


def test_tune_avoids_divergent_rate_and_is_reproducible():
    ds, G = diffusion(steps=400)
    A = normalize_adjacency(G)
    space = {"learning_rate": [1e3, 1e-2], "channels": [4]}
    base = TrainConfig(epochs=3, seed=2)
    a = tune(space, ds, A, WindowSpec(6, 1), base=base)
    b = tune(space, ds, A, WindowSpec(6, 1), base=base)
    assert a.train_config.learning_rate == 1e-2
    assert a.val_rmse == b.val_rmse and a.trials == b.trials
    assert not np.isfinite(a.trials[0]["val_rmse"]) or a.trials[0]["val_rmse"] > a.val_rmse


def test_tune_rejects_empty_space():
    with pytest.raises(ConfigError):
        tune({}, np.zeros((2, 50)), np.eye(2), WindowSpec(4, 1))
    with pytest.raises(ConfigError):
        tune({"learning_rate": []}, np.zeros((2, 50)), np.eye(2), WindowSpec(4, 1))
    with pytest.raises(ConfigError):
        tune({"dropout": [0.1]}, np.zeros((2, 50)), np.eye(2), WindowSpec(4, 1))


def test_checkpoint_round_trip(tmp_path):
    m = random_model(2)
    A = normalize_adjacency(np.random.default_rng(0).uniform(0, 1, (3, 3)))
    stats = NormalizationStats(np.zeros(3), np.ones(3))
    p = tmp_path / "ck.json"
    save_checkpoint(p, m, A, stats)
    back, payload = load_checkpoint(p, A)
    for k, v in m.params().items():
        assert np.array_equal(getattr(back, k), v)
    assert payload["normalization"] == stats.to_dict()
    x = np.random.default_rng(1).standard_normal((3, 4))
    assert np.array_equal(forward(back, A, x), forward(m, A, x))
    with pytest.raises(DataError, match="fingerprint"):
        load_checkpoint(p, np.eye(3))
    with pytest.raises(DataError, match="nodes"):
        load_checkpoint(p, np.eye(4))
    bad = json.loads(p.read_text())
    bad["version"] = 99
    p.write_text(json.dumps(bad))
    with pytest.raises(DataError):
        load_checkpoint(p)
