"""Constraint-based causal discovery for one multivariate time series.

Two phases run on a single sample set:

1. Lagged condition selection: for each target, candidate lagged parents
   are pruned with conditional independence tests given the strongest other
   candidates (growing conditioning sets).
2. MCI skeleton and orientation: lagged and contemporaneous links are
   tested conditioning on both endpoints' lagged parents plus subsets of
   contemporaneous neighbours, then contemporaneous links are oriented by
   the collider rule and the standard orientation rules.

Graph marks follow the usual convention for ``graph[i, j, tau]`` meaning
``X^i_{t-tau}`` to ``X^j_t``: ``"-->"``, ``"<--"`` (tau = 0 only),
``"o-o"`` (unoriented), ``"x-x"`` (conflicting orientation) or ``""``.
"""
import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .citest import parcorr_pvalue
from .exceptions import ConfigError, InsufficientDataError

log = logging.getLogger(__name__)

PRESENT_MARKS = ("-->", "o-o", "x-x")


@dataclass(frozen=True)
class DiscoveryConfig:
    tau_max: int = 1
    alpha: float = 0.01
    pc_alpha: float = None
    max_condition_size: int = 3
    max_combinations: int = None

    def __post_init__(self):
        if int(self.tau_max) != self.tau_max or self.tau_max < 1:
            raise ConfigError("must be an integer >= 1", "tau_max")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"must lie in (0, 1), got {self.alpha}", "alpha")
        if self.pc_alpha is None:
            object.__setattr__(self, "pc_alpha", self.alpha)
        elif not 0 < self.pc_alpha < 1:
            raise ConfigError(f"must lie in (0, 1), got {self.pc_alpha}", "pc_alpha")
        if self.max_condition_size is not None and self.max_condition_size < 0:
            raise ConfigError("must be >= 0", "max_condition_size")
        if self.max_combinations is not None and self.max_combinations < 1:
            raise ConfigError("must be >= 1", "max_combinations")

    def to_dict(self):
        return {
            "tau_max": self.tau_max,
            "alpha": self.alpha,
            "pc_alpha": self.pc_alpha,
            "max_condition_size": self.max_condition_size,
            "max_combinations": self.max_combinations,
        }


@dataclass
class LaggedParents:
    """Output of the lagged condition-selection phase.

    ``parents[j]`` lists ``(i, tau)`` ordered by decreasing minimum absolute
    test statistic; ``pval_max`` and ``val_min`` cover every tested candidate.
    """

    parents: dict
    pval_max: dict
    val_min: dict


@dataclass
class CausalTestResults:
    feature_names: tuple
    tau_max: int
    alpha: float
    graph: np.ndarray       # (N, N, tau_max + 1) marks
    p_matrix: np.ndarray    # (N, N, tau_max + 1) largest p-value seen per link
    val_matrix: np.ndarray  # statistic belonging to that p-value
    lagged_parents: dict = field(default=None, repr=False)

    @property
    def n_features(self):
        return len(self.feature_names)

    def link_flags(self, alpha=None):
        """Binary c[j, k, tau]: 1 where a link j -> k at lag tau is reported.

        Unoriented and conflicting contemporaneous links count in both
        directions. Passing ``alpha`` re-thresholds the stored p-values of the
        links this run found (never adds links).
        """
        flags = np.isin(self.graph, PRESENT_MARKS)
        if alpha is not None:
            flags &= self.p_matrix <= alpha
        return flags.astype(np.int8)

    def links(self):
        out = []
        n = self.n_features
        for i in range(n):
            for j in range(n):
                for tau in range(self.tau_max + 1):
                    mark = self.graph[i, j, tau]
                    if mark in PRESENT_MARKS:
                        out.append({
                            "src": self.feature_names[i],
                            "dst": self.feature_names[j],
                            "lag": tau,
                            "p": float(self.p_matrix[i, j, tau]),
                            "stat": float(self.val_matrix[i, j, tau]),
                            "orientation": str(mark),
                        })
        return out

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "tau_max": self.tau_max,
            "alpha": self.alpha,
            "links": self.links(),
            "graph": self.graph.tolist(),
            "p_matrix": self.p_matrix.tolist(),
            "val_matrix": self.val_matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["feature_names"]),
            int(d["tau_max"]),
            float(d["alpha"]),
            np.array(d["graph"], dtype=object).astype("<U3"),
            np.array(d["p_matrix"], dtype=np.float64),
            np.array(d["val_matrix"], dtype=np.float64),
        )


class _Tester:
    """Runs CI tests on lag-aligned rows t in [tau_max, P)."""

    def __init__(self, values, tau_max, ci_test):
        n_feat, p = values.shape
        n = p - tau_max
        self.tau_max = tau_max
        self.lagged = np.empty((n_feat, tau_max + 1, n))
        for tau in range(tau_max + 1):
            self.lagged[:, tau, :] = values[:, tau_max - tau:p - tau]
        self.ci_test = ci_test
        self.n_tests = 0

    def __call__(self, x, y, conds):
        i, tau = x
        j, _ = y
        if conds:
            rows = np.array([c[0] for c in conds])
            lags = np.array([c[1] for c in conds])
            Z = self.lagged[rows, lags]
        else:
            Z = None
        self.n_tests += 1
        return self.ci_test(self.lagged[i, tau], self.lagged[j, 0], Z)


def _check_samples(ds, cfg):
    n, p = ds.values.shape
    p_eff = p - cfg.tau_max
    if p_eff < 3:
        raise InsufficientDataError(
            f"{p} samples leave {p_eff} effective samples at tau_max={cfg.tau_max}")
    if p_eff < 10 * n:
        warnings.warn(f"only {p_eff} effective samples for {n} features (recommended >= {10 * n})",
                      stacklevel=3)


def _sorted_by_strength(val_min):
    return sorted(val_min, key=lambda c: (-val_min[c], c[0], c[1]))


def _select_parents(tester, j, n_feat, cfg):
    candidates = [(i, tau) for i in range(n_feat) for tau in range(1, cfg.tau_max + 1)]
    val_min = {}
    pval_max = {c: 0.0 for c in candidates}
    alive = {c: np.inf for c in candidates}
    parents = list(candidates)
    max_p = cfg.max_condition_size if cfg.max_condition_size is not None else len(candidates)
    for p in range(max_p + 1):
        if len(parents) - 1 < p:
            break
        nonsig = []
        for cand in parents:
            conds = [c for c in parents if c != cand][:p]
            out = tester(cand, (j, 0), conds)
            alive[cand] = min(alive[cand], abs(out.statistic))
            val_min[cand] = min(val_min.get(cand, np.inf), abs(out.statistic))
            pval_max[cand] = max(pval_max[cand], out.p_value)
            if out.p_value > cfg.pc_alpha:
                nonsig.append(cand)
        for cand in nonsig:
            del alive[cand]
        parents = _sorted_by_strength(alive)
    return parents, pval_max, val_min


def discover_lagged_parents(ds, cfg, ci_test=parcorr_pvalue):
    """Candidate lagged parents of every feature (condition-selection phase)."""
    _check_samples(ds, cfg)
    n_feat = ds.n_features
    tester = _Tester(ds.values, cfg.tau_max, ci_test)
    parents, pval_max, val_min = {}, {}, {}
    for j in range(n_feat):
        parents[j], pv, vm = _select_parents(tester, j, n_feat, cfg)
        for cand, v in pv.items():
            pval_max[(cand, j)] = v
            val_min[(cand, j)] = vm[cand]
    return LaggedParents(parents, pval_max, val_min)


def _mci_conditions(x, j, parents, tau_max, contemp):
    """Conditioning set for X=(i, tau) -> Y=(j, 0)."""
    i, tau = x
    conds = [(m, 0) for m in contemp]
    conds += [c for c in parents[j] if c != x]
    conds += [(m, s + tau) for (m, s) in parents[i] if s + tau <= tau_max]
    seen = set()
    out = []
    for c in conds:
        if c == x or c == (j, 0) or c in seen:
            continue
        seen.add(c)
        out.append(c)
    return out


def discover_full_graph(ds, cfg, ci_test=parcorr_pvalue, lagged_parents=None):
    """Full lagged + contemporaneous causal graph for one sample set."""
    _check_samples(ds, cfg)
    n_feat = ds.n_features
    tau_max = cfg.tau_max
    if lagged_parents is None:
        lagged_parents = discover_lagged_parents(ds, cfg, ci_test)
    parents = lagged_parents.parents
    tester = _Tester(ds.values, tau_max, ci_test)

    shape = (n_feat, n_feat, tau_max + 1)
    p_matrix = np.ones(shape)
    val_matrix = np.zeros(shape)
    p_matrix[:, :, 0] = 0.0
    tested = np.zeros(shape, dtype=bool)

    def record(i, j, tau, out):
        cells = [(i, j, tau)] + ([(j, i, 0)] if tau == 0 else [])
        for c in cells:
            if not tested[c] or out.p_value > p_matrix[c]:
                p_matrix[c] = out.p_value
                val_matrix[c] = out.statistic
            tested[c] = True

    # lagged links: in-skeleton only if selected in the lagged phase; every
    # other lagged pair still gets its MCI p-value for reporting
    lagged = {j: set(parents[j]) for j in range(n_feat)}
    for j in range(n_feat):
        for i in range(n_feat):
            for tau in range(1, tau_max + 1):
                if (i, tau) in lagged[j]:
                    continue
                out = tester((i, tau), (j, 0), _mci_conditions((i, tau), j, parents, tau_max, ()))
                record(i, j, tau, out)
    contemp = np.ones((n_feat, n_feat), dtype=bool)
    np.fill_diagonal(contemp, False)
    sepsets = {}

    max_p = cfg.max_condition_size if cfg.max_condition_size is not None else n_feat
    p = 0
    while p <= max_p:
        adj = [sorted(np.flatnonzero(contemp[j]).tolist()) for j in range(n_feat)]
        removed_lagged = []
        removed_contemp = []
        any_tested = False
        for j in range(n_feat):
            links = sorted(lagged[j], key=lambda c: (c[1], c[0]))
            links += [(i, 0) for i in adj[j]]
            for x in links:
                i, tau = x
                if tau == 0 and not contemp[i, j]:
                    continue
                pool = [m for m in adj[j] if not (tau == 0 and m == i)]
                if len(pool) < p:
                    continue
                any_tested = True
                for n_comb, subset in enumerate(itertools.combinations(pool, p)):
                    if cfg.max_combinations is not None and n_comb >= cfg.max_combinations:
                        break
                    conds = _mci_conditions(x, j, parents, tau_max, subset)
                    out = tester(x, (j, 0), conds)
                    record(i, j, tau, out)
                    if out.p_value > cfg.alpha:
                        if tau == 0:
                            removed_contemp.append((i, j, subset))
                        else:
                            removed_lagged.append((x, j, subset))
                        break
        for x, j, subset in removed_lagged:
            lagged[j].discard(x)
            sepsets[(x, j)] = set(subset)
        for i, j, subset in removed_contemp:
            if contemp[i, j]:
                contemp[i, j] = contemp[j, i] = False
                sepsets[((i, 0), j)] = sepsets[((j, 0), i)] = set(subset)
        if not any_tested:
            break
        p += 1

    graph = np.full(shape, "", dtype="<U3")
    for j in range(n_feat):
        for i, tau in lagged[j]:
            graph[i, j, tau] = "-->"
    for i in range(n_feat):
        for j in range(n_feat):
            if contemp[i, j]:
                graph[i, j, 0] = "o-o"
    _orient(graph, sepsets, n_feat, tau_max)
    log.debug("discovery on %d features ran %d CI tests", n_feat, tester.n_tests)
    return CausalTestResults(ds.feature_names, tau_max, cfg.alpha, graph, p_matrix, val_matrix,
                             lagged_parents=parents)


# --------------------------------------------------------------------------
# Orientation of contemporaneous links
# --------------------------------------------------------------------------

def _adjacent(graph, i, tau, j):
    """Whether X^i_{t-tau} and X^j_t are adjacent."""
    if tau == 0:
        return i != j and graph[i, j, 0] != ""
    return graph[i, j, tau] != ""


def _into(graph, k, tau_max):
    """Nodes (i, tau) with a directed edge into X^k_t."""
    n = graph.shape[0]
    out = []
    for i in range(n):
        for tau in range(1, tau_max + 1):
            if graph[i, k, tau] == "-->":
                out.append((i, tau))
        if i != k and graph[i, k, 0] == "-->":
            out.append((i, 0))
    return out


def _apply(graph, proposals):
    """Apply proposed orientations a -> b; opposite proposals become conflicts."""
    changed = False
    for a, b in sorted(proposals):
        if graph[a, b, 0] == "x-x":
            continue
        if (b, a) in proposals:
            if graph[a, b, 0] != "x-x":
                graph[a, b, 0] = graph[b, a, 0] = "x-x"
                changed = True
        elif graph[a, b, 0] == "o-o":
            graph[a, b, 0] = "-->"
            graph[b, a, 0] = "<--"
            changed = True
        elif graph[a, b, 0] == "<--":
            graph[a, b, 0] = graph[b, a, 0] = "x-x"
            changed = True
    return changed


def _orient(graph, sepsets, n, tau_max):
    # collider phase over unshielded triples (i, t-tau) *-o (k, t) o-o (j, t)
    proposals = set()
    for k in range(n):
        neigh = [j for j in range(n) if j != k and graph[j, k, 0] == "o-o"]
        for j in neigh:
            lefts = [(i, tau) for i in range(n) for tau in range(1, tau_max + 1)
                     if graph[i, k, tau] == "-->"]
            lefts += [(i, 0) for i in neigh if i < j]
            for i, tau in lefts:
                if (i, tau) == (j, 0) or _adjacent(graph, i, tau, j):
                    continue
                if k in sepsets.get(((i, tau), j), set()):
                    continue
                proposals.add((j, k))
                if tau == 0:
                    proposals.add((i, k))
    _apply(graph, proposals)

    while True:
        proposals = set()
        for a in range(n):
            for b in range(n):
                if a == b or graph[a, b, 0] != "o-o":
                    continue
                # rule 1: c -> a o-o b with c, b non-adjacent gives a -> b
                if any(not _adjacent(graph, c, tau, b) and (c, tau) != (b, 0)
                       for c, tau in _into(graph, a, tau_max)):
                    proposals.add((a, b))
                    continue
                # rule 2: a -> m -> b with a o-o b gives a -> b
                if any(graph[a, m, 0] == "-->" and graph[m, b, 0] == "-->"
                       for m in range(n) if m not in (a, b)):
                    proposals.add((a, b))
                    continue
                # rule 3: a o-o m1 -> b, a o-o m2 -> b, m1 and m2 non-adjacent
                mids = [m for m in range(n) if m not in (a, b)
                        and graph[a, m, 0] == "o-o" and graph[m, b, 0] == "-->"]
                if any(not _adjacent(graph, m1, 0, m2) for m1, m2 in itertools.combinations(mids, 2)):
                    proposals.add((a, b))
        if not proposals or not _apply(graph, proposals):
            break
