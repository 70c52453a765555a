"""Dynamic time warping distance and k-medoids clustering of features."""
import json
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import ConfigError, DataError
from .timeseries import downsample_mean, zscore_normalize

MAX_ROUNDS = 100


@dataclass(frozen=True)
class DtwConfig:
    """``window_band``: Sakoe-Chiba half-width |i - j| <= band, None for unconstrained.

    ``downsample`` averages blocks of that many samples before distances are
    computed (the quadratic cost otherwise dominates on long series).
    """

    window_band: int = None
    downsample: int = 1

    def __post_init__(self):
        if self.window_band is not None and self.window_band < 0:
            raise ConfigError("band must be >= 0", "window_band")
        if self.downsample < 1:
            raise ConfigError("must be >= 1", "downsample")


@dataclass(frozen=True)
class Clustering:
    assignment: np.ndarray   # feature index -> cluster id
    medoids: tuple           # one feature index per cluster
    inertia: float
    feature_names: tuple = None

    @property
    def n_clusters(self):
        return len(self.medoids)

    def members(self, cluster):
        return np.flatnonzero(self.assignment == cluster).tolist()

    def clusters(self):
        return [self.members(c) for c in range(self.n_clusters)]

    def to_dict(self):
        names = self.feature_names or tuple(str(i) for i in range(len(self.assignment)))
        return {
            "clusters": [[names[i] for i in m] for m in self.clusters()],
            "medoids": [names[m] for m in self.medoids],
            "inertia": self.inertia,
        }

    @classmethod
    def from_dict(cls, d, feature_names):
        index = {n: i for i, n in enumerate(feature_names)}
        assignment = np.full(len(feature_names), -1, dtype=np.int64)
        for c, members in enumerate(d["clusters"]):
            for name in members:
                if name not in index:
                    raise DataError(f"clustering names unknown feature {name!r}")
                assignment[index[name]] = c
        if np.any(assignment < 0):
            missing = [feature_names[i] for i in np.flatnonzero(assignment < 0)]
            raise DataError(f"clustering does not assign {missing}")
        medoids = tuple(index[m] for m in d["medoids"])
        return cls(assignment, medoids, float(d["inertia"]), tuple(feature_names))

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def single(cls, n, feature_names=None):
        """The trivial one-cluster partition (spatial decomposition off)."""
        return cls(np.zeros(n, dtype=np.int64), (0,), 0.0, feature_names)


def _band(cfg):
    return -1 if cfg is None or cfg.window_band is None else int(cfg.window_band)


def dtw_distance(a, b, cfg=None):
    """Cumulative squared-difference cost of the optimal warping path."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise DataError("DTW needs two non-empty series")
    band = _band(cfg)
    if band >= 0 and band < abs(a.size - b.size):
        raise DataError(f"band {band} cannot connect series of lengths {a.size} and {b.size}")
    return _kernels.dtw(a, b, band)


def distance_matrix(ds, cfg=None):
    """Pairwise DTW between z-scored (optionally downsampled) feature rows."""
    cfg = cfg or DtwConfig()
    ds = downsample_mean(ds, cfg.downsample)
    scaled, _ = zscore_normalize(ds)
    return _kernels.dtw_matrix(scaled.values, _band(cfg))


def _kmedoids_pp(D, k, rng):
    n = D.shape[0]
    medoids = [int(rng.integers(n))]
    closest = D[medoids[0]].copy()
    while len(medoids) < k:
        weights = closest ** 2
        weights[medoids] = 0.0
        total = weights.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=weights / total))
        else:
            rest = [i for i in range(n) if i not in medoids]
            nxt = int(rng.choice(rest))
        medoids.append(nxt)
        closest = np.minimum(closest, D[nxt])
    return medoids


def _assign(D, medoids):
    assignment = np.argmin(D[:, medoids], axis=1)
    for c, m in enumerate(medoids):
        assignment[m] = c
    return assignment


def _refine(D, medoids):
    medoids = list(medoids)
    for _ in range(MAX_ROUNDS):
        assignment = _assign(D, medoids)
        new = []
        for c, m in enumerate(medoids):
            members = np.flatnonzero(assignment == c)
            cost = D[np.ix_(members, members)].sum(axis=1)
            best = members[np.flatnonzero(cost == cost.min())]
            # keep the current medoid on ties so the iteration reaches a fixpoint
            new.append(m if m in best else int(best[0]))
        if new == medoids:
            break
        medoids = new
    assignment = _assign(D, medoids)
    inertia = float(D[np.arange(len(D)), np.asarray(medoids)[assignment]].sum())
    return assignment, medoids, inertia


def kmedoids(D, k, seed=0, n_init=5, init_medoids=None):
    """Alternating k-medoids on a precomputed distance matrix.

    The best of ``n_init`` seeded k-medoids++ starts wins; ``init_medoids``
    adds one extra warm start. Ties in inertia keep the earliest start.
    """
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"cluster count must lie in [1, {n}], got {k}", "D")
    rng = np.random.default_rng(seed)
    starts = [_kmedoids_pp(D, k, rng) for _ in range(max(1, n_init))]
    if init_medoids is not None:
        starts.append(list(init_medoids))
    best = None
    for start in starts:
        res = _refine(D, start)
        if best is None or res[2] < best[2]:
            best = res
    assignment, medoids, inertia = best
    return _relabel(assignment, medoids, inertia)


def _relabel(assignment, medoids, inertia):
    # number clusters by their smallest member so labels are canonical
    order = sorted(range(len(medoids)), key=lambda c: np.flatnonzero(assignment == c).min())
    remap = np.empty(len(medoids), dtype=np.int64)
    remap[order] = np.arange(len(medoids))
    return remap[assignment], tuple(int(medoids[c]) for c in order), inertia


def rebalance(D, assignment, medoids, max_size):
    """Move the farthest members of oversized clusters to the nearest cluster
    with spare capacity (greedy, deterministic)."""
    assignment = np.array(assignment)
    k = len(medoids)
    if max_size * k < len(assignment):
        raise ConfigError(f"{k} clusters of size <= {max_size} cannot hold {len(assignment)} features",
                          "max_cluster_size")
    while True:
        sizes = np.bincount(assignment, minlength=k)
        over = np.flatnonzero(sizes > max_size)
        if over.size == 0:
            break
        c = int(over[0])
        members = [i for i in np.flatnonzero(assignment == c) if i != medoids[c]]
        far = max(members, key=lambda i: (D[i, medoids[c]], -i))
        options = [o for o in range(k) if o != c and sizes[o] < max_size]
        target = min(options, key=lambda o: (D[far, medoids[o]], o))
        assignment[far] = target
    inertia = float(D[np.arange(len(D)), np.asarray(medoids)[assignment]].sum())
    return assignment, inertia


def cluster_features(ds, n_clusters, cfg=None, seed=0, n_init=5, distances=None,
                     init_medoids=None, max_cluster_size=None):
    """Partition the features of ``ds`` into ``n_clusters`` DTW clusters."""
    n = ds.n_features
    if not 1 <= n_clusters <= n:
        raise ConfigError(f"cluster count must lie in [1, {n}], got {n_clusters}", "D")
    D = distance_matrix(ds, cfg) if distances is None else np.asarray(distances)
    assignment, medoids, inertia = kmedoids(D, n_clusters, seed, n_init, init_medoids)
    if max_cluster_size is not None:
        assignment, inertia = rebalance(D, assignment, medoids, max_cluster_size)
        assignment, medoids, inertia = _relabel(assignment, list(medoids), inertia)
    return Clustering(assignment, medoids, inertia, ds.feature_names)


@dataclass(frozen=True)
class ElbowProfile:
    ks: tuple
    inertias: tuple
    suggested: int

    def to_dict(self):
        return {"profile": [{"k": k, "inertia": v} for k, v in zip(self.ks, self.inertias)],
                "suggested": self.suggested}


def elbow_profile(ds, k_range, cfg=None, seed=0, n_init=5, distances=None):
    """Inertia for every k in the inclusive ``k_range`` plus a suggested elbow.

    Each k is also warm-started from the previous solution plus its worst
    served feature, so the profile never increases with k. The suggestion
    maximises the second difference of inertia (ties to the smaller k).
    """
    k_lo, k_hi = k_range
    n = ds.n_features
    if k_lo > k_hi:
        raise ConfigError(f"empty range {k_range}", "k_range")
    if k_lo < 1 or k_hi > n:
        raise ConfigError(f"range {k_range} outside [1, {n}]", "k_range")
    D = distance_matrix(ds, cfg) if distances is None else np.asarray(distances)
    ks, inertias = [], []
    prev = None
    for k in range(k_lo, k_hi + 1):
        warm = None
        if prev is not None:
            served = D[np.arange(n), np.asarray(prev.medoids)[prev.assignment]]
            served[list(prev.medoids)] = -1.0
            warm = list(prev.medoids) + [int(np.argmax(served))]
        cl = cluster_features(ds, k, cfg, seed, n_init, distances=D, init_medoids=warm)
        ks.append(k)
        inertias.append(cl.inertia)
        prev = cl
    suggested = ks[0]
    if len(ks) >= 3:
        second = [inertias[i - 1] - 2 * inertias[i] + inertias[i + 1] for i in range(1, len(ks) - 1)]
        suggested = ks[1 + int(np.argmax(second))]
    elif len(ks) == 2:
        suggested = ks[1] if inertias[1] < inertias[0] else ks[0]
    return ElbowProfile(tuple(ks), tuple(inertias), suggested)
