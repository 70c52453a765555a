"""Turn per-sub-problem causal test results into one causal adjacency matrix.

Votes are first collapsed over lags within each (temporal period, spatial
cluster) sample set, then summed over sample sets with one of four
strategies:

* ``ANY;W``  total vote count
* ``MT;W``   total count, kept only where more than half of the T periods voted
* ``ANY;UW`` / ``MT;UW``  the binarised versions of the two above
"""
import csv
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError

STRATEGIES = ("ANY;W", "MT;W", "ANY;UW", "MT;UW")
VOTE_MODES = ("any", "mv")


def majority(v):
    return (np.asarray(v) > 0.5).astype(np.float64)


def binary(v):
    return (np.asarray(v) > 0).astype(np.float64)


@dataclass(frozen=True)
class CausalAdjacency:
    """Directed N x N edge weights; ``matrix[j, k]`` weights the edge j -> k."""

    matrix: np.ndarray
    mode: str = "ANY;UW"
    directed: bool = True
    node_names: tuple = None

    def __post_init__(self):
        A = np.array(self.matrix, dtype=np.float64, copy=True)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DataError(f"adjacency must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)) or np.any(A < 0):
            raise DataError("adjacency entries must be finite and non-negative")
        if self.mode not in STRATEGIES:
            raise DataError(f"unknown adjacency mode {self.mode!r}")
        np.fill_diagonal(A, 0.0)
        A.setflags(write=False)
        names = self.node_names
        if names is None:
            names = tuple(f"x{i}" for i in range(A.shape[0]))
        names = tuple(str(n) for n in names)
        if len(names) != A.shape[0]:
            raise DataError(f"{len(names)} node names for a {A.shape[0]}-node adjacency")
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "node_names", names)

    @property
    def n_nodes(self):
        return self.matrix.shape[0]

    @property
    def n_edges(self):
        return int(np.count_nonzero(self.matrix))

    def edges(self):
        src, dst = np.nonzero(self.matrix)
        return [(self.node_names[s], self.node_names[d], float(self.matrix[s, d]))
                for s, d in zip(src, dst)]

    def to_dict(self):
        return {
            "nodes": list(self.node_names),
            "mode": self.mode,
            "directed": self.directed,
            "edges": [{"src": s, "dst": d, "weight": w} for s, d, w in self.edges()],
        }

    @classmethod
    def from_dict(cls, d):
        nodes = list(d["nodes"])
        index = {n: i for i, n in enumerate(nodes)}
        A = np.zeros((len(nodes), len(nodes)))
        for e in d["edges"]:
            try:
                A[index[e["src"]], index[e["dst"]]] = float(e["weight"])
            except KeyError as exc:
                raise DataError(f"edge references unknown node {exc.args[0]!r}") from None
        return cls(A, d.get("mode", "ANY;UW"), bool(d.get("directed", True)), tuple(nodes))

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def read_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["src", "dst", "weight"])
            for s, d, wt in self.edges():
                w.writerow([s, d, format(wt, ".17g")])

    def to_dot(self, name="causal"):
        arrow = "->" if self.directed else "--"
        kind = "digraph" if self.directed else "graph"
        lines = [f"{kind} {json.dumps(name)} {{"]
        for n in self.node_names:
            lines.append(f"  {json.dumps(n)};")
        for s, d, w in self.edges():
            if not self.directed and self.node_names.index(s) > self.node_names.index(d):
                continue
            lines.append(f'  {json.dumps(s)} {arrow} {json.dumps(d)} [weight={w:g}, label="{w:g}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def vote_sample_set(results, mode="any"):
    """Collapse one sample set's link flags over lags into binary votes.

    ``any``: a pair votes when any lag in [0, tau_max] is significant.
    ``mv``: a pair votes when more than half of the tau_max + 1 lags are.
    """
    flags = results.link_flags()
    if mode == "any":
        votes = flags.any(axis=2)
    elif mode == "mv":
        votes = majority(flags.sum(axis=2) / flags.shape[2])
    else:
        raise ValueError(f"unknown vote mode {mode!r}; expected one of {VOTE_MODES}")
    return votes.astype(np.int8)


def votes_from_run(run, mode="any"):
    """Vote tensor of shape (T, S, N, N) over the run's global feature index.

    Pairs outside a sample set's cluster stay 0.
    """
    n = len(run.feature_names)
    V = np.zeros((run.n_periods, run.n_clusters, n, n), dtype=np.int8)
    for (period, cluster), res in run.results.items():
        idx = np.asarray(run.subproblem_features[(period, cluster)])
        V[period, cluster][np.ix_(idx, idx)] = vote_sample_set(res, mode)
    return V


def build_adjacency(votes, strategy="MT;W", node_names=None, directed=True):
    """Aggregate a (T, S, N, N) vote tensor into a :class:`CausalAdjacency`."""
    votes = np.asarray(votes)
    if votes.ndim == 3:
        votes = votes[:, None]
    if votes.ndim != 4 or votes.shape[0] < 1:
        raise DataError(f"votes must have shape (T, S, N, N) with T >= 1, got {votes.shape}")
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    n_periods = votes.shape[0]
    any_w = votes.sum(axis=(0, 1)).astype(np.float64)
    mt_w = majority(any_w / n_periods) * any_w
    A = {"ANY;W": any_w, "MT;W": mt_w, "ANY;UW": binary(any_w), "MT;UW": binary(mt_w)}[strategy]
    return CausalAdjacency(A, strategy, directed, node_names)


def to_undirected(adj):
    """Symmetric binary matrix B(a_jk + a_kj)."""
    A = adj.matrix
    return CausalAdjacency(binary(A + A.T), adj.mode, False, adj.node_names)


def distance_adjacency(distances, sigma2=10.0, epsilon=0.5):
    """Gaussian-kernel thresholded adjacency from pairwise distances.

    w_ij = exp(-d_ij^2 / sigma2) if i != j and that value >= epsilon, else 0.
    """
    d = np.asarray(distances, dtype=np.float64)
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DataError("distance matrix must be square")
    if np.any(d < 0) or not np.allclose(d, d.T, rtol=0, atol=0) or np.any(np.diag(d) != 0):
        raise DataError("distances must be non-negative, symmetric with zero diagonal")
    w = np.exp(-(d * d) / sigma2)
    w[w < epsilon] = 0.0
    np.fill_diagonal(w, 0.0)
    return w
