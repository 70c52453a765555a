"""Graph recovery scores, forecast error and the decomposition runtime benchmark."""
import json
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .aggregate import CausalAdjacency, binary
from .dtw import Clustering
from .exceptions import DataError
from .decompose import execute_subproblems, plan_subproblems


@dataclass(frozen=True)
class GraphScore:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def accuracy(self):
        total = self.tp + self.fp + self.fn + self.tn
        return (self.tp + self.tn) / total if total else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self):
        return {**asdict(self), "precision": self.precision, "recall": self.recall,
                "accuracy": self.accuracy, "f1": self.f1}


def _matrix(adj):
    if isinstance(adj, CausalAdjacency):
        return adj.matrix, adj.node_names
    return np.asarray(adj, dtype=np.float64), None


def adjacency_scores(predicted, truth, directed=True):
    """Confusion counts over off-diagonal pairs of two binarised adjacencies.

    Directed scoring counts ordered pairs (j, k), j != k. Undirected scoring
    symmetrises both graphs first and counts each unordered pair once.
    """
    P, p_names = _matrix(predicted)
    G, t_names = _matrix(truth)
    if P.shape != G.shape or P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise DataError(f"adjacency shapes differ: {P.shape} vs {G.shape}")
    if p_names is not None and t_names is not None and tuple(p_names) != tuple(t_names):
        raise DataError("predicted and true adjacencies have different node sets")
    P, G = binary(P).astype(bool), binary(G).astype(bool)
    n = P.shape[0]
    if directed:
        mask = ~np.eye(n, dtype=bool)
    else:
        P, G = P | P.T, G | G.T
        mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    p, g = P[mask], G[mask]
    return GraphScore(int(np.sum(p & g)), int(np.sum(p & ~g)), int(np.sum(~p & g)),
                      int(np.sum(~p & ~g)))


def rmse(forecast, target, stats=None):
    """Root mean squared error; both arrays are mapped back to data units
    first when normalisation ``stats`` are given (node axis = axis -2 for
    (N, q) or (B, N, q) arrays)."""
    f = np.asarray(forecast, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if f.shape != t.shape:
        raise DataError(f"shape mismatch: {f.shape} vs {t.shape}")
    if f.size == 0:
        raise DataError("rmse of empty arrays")
    if stats is not None:
        scale = stats.scale.reshape(-1, 1)
        f = f * scale
        t = t * scale   # means cancel in the difference
    return float(np.sqrt(np.mean((f - t) ** 2)))


# --------------------------------------------------------------------------
# Decomposition benchmark
# --------------------------------------------------------------------------

@dataclass
class BenchmarkEntry:
    name: str
    n_subproblems: int
    n_clusters: int
    times: list
    pair_count: int

    @property
    def median(self):
        return float(statistics.median(self.times))


@dataclass
class BenchmarkReport:
    entries: list
    runs: dict = field(default_factory=dict, repr=False)   # name -> last DiscoveryRunResult

    def entry(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def speedup(self):
        """Median wall-clock of the first configuration over the second."""
        return self.entries[0].median / self.entries[1].median

    def to_dict(self):
        return {
            "configurations": [
                {"name": e.name, "subproblems": e.n_subproblems, "clusters": e.n_clusters,
                 "pairs_per_period": e.pair_count, "median_seconds": e.median, "seconds": e.times}
                for e in self.entries],
            "speedup": self.speedup,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self):
        rows = [("configuration", "clusters", "subproblems", "pairs", "median_s")]
        for e in self.entries:
            rows.append((e.name, str(e.n_clusters), str(e.n_subproblems), str(e.pair_count),
                         f"{e.median:.4f}"))
        text = format_table(rows)
        return text + f"speedup: {self.speedup:.2f}x\n"


def format_table(rows):
    """Aligned plain-text table; first row is the header."""
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def scores_table(scores):
    """Table of named GraphScores (mapping name -> GraphScore)."""
    rows = [("graph", "precision", "recall", "accuracy", "f1", "tp", "fp", "fn", "tn")]
    for name, s in scores.items():
        rows.append((name, f"{s.precision:.4f}", f"{s.recall:.4f}", f"{s.accuracy:.4f}",
                     f"{s.f1:.4f}", str(s.tp), str(s.fp), str(s.fn), str(s.tn)))
    return format_table(rows)


def benchmark_decomposition(ds, period_len, clustering, cfg=None, repetitions=3, workers=1,
                            names=("temporal", "spatiotemporal")):
    """Time discovery with temporal decomposition only against temporal plus
    spatial decomposition.

    Configurations run one after another. Clustering cost is excluded:
    ``clustering`` is computed beforehand and passed in.
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    configs = [(names[0], Clustering.single(ds.n_features, ds.feature_names)),
               (names[1], clustering)]
    entries, runs = [], {}
    for name, cl in configs:
        plan = plan_subproblems(ds, period_len, cl, cfg)
        times = []
        for _ in range(repetitions):
            start = time.perf_counter()
            run = execute_subproblems(plan, workers)
            times.append(time.perf_counter() - start)
        runs[name] = run
        entries.append(BenchmarkEntry(name, len(plan.subproblems), plan.n_clusters, times,
                                      plan.pair_count()))
    return BenchmarkReport(entries, runs)
