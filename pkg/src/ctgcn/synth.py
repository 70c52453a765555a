"""Synthetic data with known ground truth.

Linear structural causal models drive discovery checks; graph-diffusion
processes drive forecasting checks.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .aggregate import CausalAdjacency
from .exceptions import ConfigError, StationarityError
from .timeseries import TimeSeriesDataset


@dataclass(frozen=True)
class ScmSpec:
    """Linear SCM: X^k_t = sum over edges coef * X^src_{t-lag} + eta^k_t.

    ``edges`` holds ``(src, dst, lag, coef)`` tuples; ``noise`` is a scalar or
    per-variable standard deviation.
    """

    n_vars: int
    edges: tuple
    noise: object = 1.0
    seed: int = 0
    names: tuple = None

    def __post_init__(self):
        edges = tuple((int(s), int(d), int(l), float(c)) for s, d, l, c in self.edges)
        object.__setattr__(self, "edges", edges)
        for s, d, lag, c in edges:
            if not (0 <= s < self.n_vars and 0 <= d < self.n_vars):
                raise ConfigError(f"edge ({s}, {d}) references a missing variable", "edges")
            if lag < 0:
                raise ConfigError("lags must be >= 0", "edges")
            if lag == 0 and s == d:
                raise ConfigError(f"contemporaneous self-loop on variable {s}", "edges")
            if not np.isfinite(c):
                raise ConfigError("coefficients must be finite", "edges")
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"x{i}" for i in range(self.n_vars)))

    @property
    def max_lag(self):
        return max([l for _, _, l, _ in self.edges] + [0])

    @property
    def noise_std(self):
        return np.broadcast_to(np.asarray(self.noise, dtype=np.float64), (self.n_vars,)).copy()

    def lag_matrices(self):
        """B[tau] with B[tau][dst, src] = coef, shape (max_lag + 1, N, N)."""
        B = np.zeros((self.max_lag + 1, self.n_vars, self.n_vars))
        for s, d, lag, c in self.edges:
            B[lag, d, s] += c
        return B

    def topological_order(self):
        n = self.n_vars
        indeg = [0] * n
        children = [[] for _ in range(n)]
        for s, d, lag, _ in self.edges:
            if lag == 0:
                indeg[d] += 1
                children[s].append(d)
        ready = [i for i in range(n) if indeg[i] == 0]
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        if len(order) != n:
            raise StationarityError("contemporaneous edges contain a cycle")
        return order

    def spectral_radius(self):
        B = self.lag_matrices()
        self.topological_order()
        n = self.n_vars
        mix = np.linalg.inv(np.eye(n) - B[0])
        L = self.max_lag
        if L == 0:
            return 0.0
        comp = np.zeros((n * L, n * L))
        for tau in range(1, L + 1):
            comp[:n, (tau - 1) * n:tau * n] = mix @ B[tau]
        comp[n:, :-n] = np.eye(n * (L - 1))
        return float(np.max(np.abs(np.linalg.eigvals(comp))))

    def truth(self):
        A = np.zeros((self.n_vars, self.n_vars))
        for s, d, _, _ in self.edges:
            if s != d:
                A[s, d] = 1.0
        return CausalAdjacency(A, "ANY;UW", True, self.names)

    def to_dict(self):
        return {
            "n_vars": self.n_vars,
            "edges": [list(e) for e in self.edges],
            "noise": np.asarray(self.noise).tolist(),
            "seed": self.seed,
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_vars"]), tuple(tuple(e) for e in d["edges"]), d.get("noise", 1.0),
                   int(d.get("seed", 0)), tuple(d["names"]) if d.get("names") else None)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def generate_scm_dataset(spec, n_steps, burn_in=500, link_function=None):
    """Simulate ``spec`` for ``n_steps`` samples after discarding ``burn_in``.

    ``link_function`` (optional, elementwise) is applied to every parent value
    before it is weighted, turning the linear SCM into an additive nonlinear
    one; stationarity is then the caller's responsibility.
    """
    order = spec.topological_order()
    B = spec.lag_matrices()
    if link_function is None:
        rho = spec.spectral_radius()
        if rho >= 1.0:
            raise StationarityError(f"companion spectral radius {rho:.4f} >= 1")
    rng = np.random.default_rng(spec.seed)
    n = spec.n_vars
    total = n_steps + burn_in
    noise = rng.standard_normal((total, n)) * spec.noise_std
    L = max(spec.max_lag, 1)
    if link_function is None:
        lag_mats = np.zeros((L, n, n))
        lag_mats[:spec.max_lag] = B[1:]
        mix = np.linalg.inv(np.eye(n) - B[0])
        x = _kernels.simulate_linear(lag_mats, mix, noise, np.zeros((L, n)))
    else:
        x = np.zeros((total + L, n))
        for t in range(total):
            row = x[L + t]
            row[:] = noise[t]
            for tau in range(1, spec.max_lag + 1):
                row += B[tau] @ link_function(x[L + t - tau])
            for k in order:
                row[k] += B[0, k] @ link_function(row)
        x = x[L:]
    values = x[burn_in:].T
    if not np.all(np.isfinite(values)):
        raise StationarityError("simulation diverged")
    ds = TimeSeriesDataset(spec.names, values)
    return ds, spec.truth()


def random_scm(n_vars, n_edges, coef_range=(0.4, 0.8), max_lag=3, autocorr=0.0, noise=1.0,
               seed=0, max_tries=1000):
    """Random stationary SCM with ``n_edges`` distinct cross-variable lagged edges.

    Each variable also gets a lag-1 self-loop ``autocorr`` when non-zero.
    Coefficient signs are random.
    """
    rng = np.random.default_rng(seed)
    pairs = [(s, d) for s in range(n_vars) for d in range(n_vars) if s != d]
    for _ in range(max_tries):
        picks = rng.choice(len(pairs), size=n_edges, replace=False)
        edges = []
        for k in sorted(picks):
            s, d = pairs[k]
            lag = int(rng.integers(1, max_lag + 1))
            coef = float(rng.uniform(*coef_range)) * float(rng.choice([-1.0, 1.0]))
            edges.append((s, d, lag, coef))
        if autocorr:
            edges += [(i, i, 1, autocorr) for i in range(n_vars)]
        spec = ScmSpec(n_vars, tuple(edges), noise, seed)
        if spec.spectral_radius() < 0.95:
            return spec
    raise StationarityError("could not draw a stationary SCM")


def block_scm(n_blocks, block_size, coef=0.6, root_autocorr=0.9, autocorr=0.3, noise=1.0, seed=0):
    """Independent blocks, each a lag-1 chain fed by a persistent root.

    Within a block variable ``b*size + m`` (m >= 1) is driven at lag 1 by a
    random earlier member of the same block, so blocks share a common slow
    trend while staying causally disconnected from each other.
    """
    rng = np.random.default_rng(seed)
    edges = []
    for b in range(n_blocks):
        base = b * block_size
        edges.append((base, base, 1, root_autocorr))
        for m in range(1, block_size):
            src = base + int(rng.integers(0, m))
            edges.append((src, base + m, 1, coef))
            if autocorr:
                edges.append((base + m, base + m, 1, autocorr))
    spec = ScmSpec(n_blocks * block_size, tuple(edges), noise, seed)
    if spec.spectral_radius() >= 1.0:
        raise StationarityError("block SCM is not stationary")
    return spec


def generate_diffusion_dataset(graph, n_steps, rho=0.3, noise=1.0, seed=0, decay=0.98, burn_in=500,
                               x0=None):
    """Diffusion x_t = decay * ((1 - rho) x_{t-1} + rho W x_{t-1}) + eta_t.

    ``W`` is the row-normalised ``graph`` (isolated nodes keep their own
    value). ``decay < 1`` makes the process stationary; with ``decay = 1`` it
    is a diffusing random walk. ``x0`` is the state before the first step
    (zeros by default).
    """
    if not 0 < rho < 1:
        raise ConfigError(f"rho must lie in (0, 1), got {rho}", "rho")
    if not 0 < decay <= 1:
        raise ConfigError(f"decay must lie in (0, 1], got {decay}", "decay")
    A = graph.matrix if isinstance(graph, CausalAdjacency) else np.asarray(graph, dtype=np.float64)
    n = A.shape[0]
    W = row_normalize(A)
    step = decay * ((1.0 - rho) * np.eye(n) + rho * W)
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal((n_steps + burn_in, n)) * np.asarray(noise, dtype=np.float64)
    start = np.zeros((1, n)) if x0 is None else np.asarray(x0, dtype=np.float64).reshape(1, n)
    x = _kernels.simulate_linear(step[None], np.eye(n), eta, start)
    names = tuple(f"n{i}" for i in range(n))
    ds = TimeSeriesDataset(names, x[burn_in:].T)
    B = (A > 0).astype(np.float64)
    np.fill_diagonal(B, 0.0)
    return ds, CausalAdjacency(B, "ANY;UW", not np.array_equal(B, B.T), names)


def row_normalize(A):
    A = np.array(A, dtype=np.float64)
    np.fill_diagonal(A, 0.0)
    deg = A.sum(axis=1)
    W = np.where(deg[:, None] > 0, A / np.where(deg > 0, deg, 1.0)[:, None], 0.0)
    W[np.flatnonzero(deg == 0), np.flatnonzero(deg == 0)] = 1.0
    return W


def random_layout(n, extent, seed=0):
    """Uniform node positions in a square of side ``extent``."""
    return np.random.default_rng(seed).uniform(0.0, extent, size=(n, 2))


def knn_graph(points, k):
    """Symmetric k-nearest-neighbour graph of a point layout."""
    points = np.asarray(points, dtype=np.float64)
    d = np.linalg.norm(points[:, None] - points[None], axis=-1)
    n = len(points)
    A = np.zeros((n, n))
    for i in range(n):
        for j in np.argsort(d[i], kind="stable")[1:k + 1]:
            A[i, j] = A[j, i] = 1.0
    return A


def squared_distances(points):
    points = np.asarray(points, dtype=np.float64)
    return ((points[:, None] - points[None]) ** 2).sum(-1)


def carriageway_network(n_locations, extent=10.0, neighbours=3, jitter=0.1, seed=0):
    """Two independent flow networks observed by co-located sensor pairs.

    Each of ``n_locations`` sites carries one sensor per travel direction.
    Within a direction, sites are linked to their ``neighbours`` nearest
    sites; the two directions never interact. Sensor coordinates are the site
    position plus Gaussian ``jitter``, so physical proximity pairs sensors
    that are causally unrelated.

    Returns ``(graph, positions)`` for ``2 * n_locations`` sensors, the first
    half belonging to one direction.
    """
    rng = np.random.default_rng(seed)
    sites = rng.uniform(0.0, extent, size=(n_locations, 2))
    g = knn_graph(sites, neighbours)
    n = 2 * n_locations
    graph = np.zeros((n, n))
    graph[:n_locations, :n_locations] = g
    graph[n_locations:, n_locations:] = g
    positions = np.vstack([sites, sites]) + rng.normal(0.0, jitter, size=(n, 2))
    return graph, positions
