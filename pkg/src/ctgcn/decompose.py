"""Temporal x spatial decomposition of causal discovery and its parallel
execution."""
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dtw import Clustering
from .exceptions import CtgcnError, InsufficientDataError
from .pcmci import CausalTestResults, DiscoveryConfig, discover_full_graph
from .timeseries import split_periods

log = logging.getLogger(__name__)

MIN_EXTRA_SAMPLES = 10


@dataclass(frozen=True)
class Subproblem:
    period: int
    cluster: int
    features: tuple          # global feature indices, ascending
    data: object             # TimeSeriesDataset restricted to features and period

    @property
    def key(self):
        return (self.period, self.cluster)


@dataclass
class DecompositionPlan:
    feature_names: tuple
    period_len: int
    n_periods: int
    clustering: Clustering
    config: DiscoveryConfig
    subproblems: list
    skipped: list = field(default_factory=list)   # (period, cluster, reason)

    @property
    def n_clusters(self):
        return self.clustering.n_clusters

    def pair_count(self):
        """Ordered within-sub-problem feature pairs, summed over clusters of one period."""
        sizes = np.bincount(self.clustering.assignment, minlength=self.n_clusters)
        return int(sum(s * (s - 1) for s in sizes if s >= 2))


def plan_subproblems(ds, period_len, clustering=None, cfg=None):
    """Cross product of temporal periods and spatial clusters.

    Singleton clusters hold no within-cluster pair and are recorded as
    skipped; cross-cluster pairs are never planned.
    """
    cfg = cfg or DiscoveryConfig()
    if clustering is None:
        clustering = Clustering.single(ds.n_features, ds.feature_names)
    if len(clustering.assignment) != ds.n_features:
        raise CtgcnError(f"clustering covers {len(clustering.assignment)} features, "
                         f"dataset has {ds.n_features}")
    if period_len < cfg.tau_max + MIN_EXTRA_SAMPLES:
        raise InsufficientDataError(
            f"period_len {period_len} is below tau_max + {MIN_EXTRA_SAMPLES} = "
            f"{cfg.tau_max + MIN_EXTRA_SAMPLES}")
    periods = split_periods(ds, period_len, cfg.tau_max)
    members = clustering.clusters()
    subproblems, skipped = [], []
    for t, period in enumerate(periods):
        for c, idx in enumerate(members):
            if len(idx) < 2:
                skipped.append((t, c, "singleton cluster"))
                continue
            subproblems.append(Subproblem(t, c, tuple(idx), period.select(idx)))
    return DecompositionPlan(ds.feature_names, period_len, len(periods), clustering, cfg,
                             subproblems, skipped)


@dataclass
class DiscoveryRunResult:
    feature_names: tuple
    n_periods: int
    n_clusters: int
    config: DiscoveryConfig
    results: dict = field(default_factory=dict)               # (period, cluster) -> CausalTestResults
    subproblem_features: dict = field(default_factory=dict)   # (period, cluster) -> global indices
    skipped: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)                # (period, cluster) -> message
    timings: dict = field(default_factory=dict)               # (period, cluster) -> seconds

    @property
    def total_time(self):
        return float(sum(self.timings.values()))

    def to_dict(self, include_timings=True):
        subs = []
        for key in sorted(self.results):
            period, cluster = key
            subs.append({
                "period": period,
                "cluster": cluster,
                "features": [self.feature_names[i] for i in self.subproblem_features[key]],
                "links": self.results[key].links(),
                "result": self.results[key].to_dict(),
            })
        d = {
            "feature_names": list(self.feature_names),
            "n_periods": self.n_periods,
            "n_clusters": self.n_clusters,
            "config": self.config.to_dict(),
            "subproblems": subs,
            "skipped": [{"period": p, "cluster": c, "reason": r} for p, c, r in self.skipped],
            "errors": [{"period": p, "cluster": c, "error": self.errors[(p, c)]}
                       for p, c in sorted(self.errors)],
        }
        if include_timings:
            d["timings"] = [{"period": p, "cluster": c, "seconds": self.timings[(p, c)]}
                            for p, c in sorted(self.timings)]
        return d

    @classmethod
    def from_dict(cls, d):
        names = tuple(d["feature_names"])
        index = {n: i for i, n in enumerate(names)}
        run = cls(names, int(d["n_periods"]), int(d["n_clusters"]), DiscoveryConfig(**d["config"]))
        for s in d["subproblems"]:
            key = (int(s["period"]), int(s["cluster"]))
            run.results[key] = CausalTestResults.from_dict(s["result"])
            run.subproblem_features[key] = tuple(index[n] for n in s["features"])
        run.skipped = [(s["period"], s["cluster"], s["reason"]) for s in d.get("skipped", [])]
        run.errors = {(e["period"], e["cluster"]): e["error"] for e in d.get("errors", [])}
        run.timings = {(t["period"], t["cluster"]): float(t["seconds"]) for t in d.get("timings", [])}
        return run

    def write_json(self, path, include_timings=True):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(include_timings), fh, indent=1)

    @classmethod
    def read_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _solve(sub, cfg):
    start = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = discover_full_graph(sub.data, cfg)
        err = None
    except Exception as exc:  # captured per sub-problem, reported in the run
        res, err = None, f"{type(exc).__name__}: {exc}"
    return sub.key, res, err, time.perf_counter() - start


def execute_subproblems(plan, workers=1):
    """Run discovery on every planned sub-problem.

    Results are keyed by (period, cluster), so they do not depend on the
    worker count or completion order. A run in which every sub-problem fails
    raises; partial failures are logged in ``errors``.
    """
    if int(workers) != workers or workers < 1:
        raise ValueError(f"workers must be a positive integer, got {workers!r}")
    run = DiscoveryRunResult(plan.feature_names, plan.n_periods, plan.n_clusters, plan.config,
                             skipped=list(plan.skipped))
    subs = plan.subproblems
    if workers == 1 or len(subs) <= 1:
        outcomes = [_solve(s, plan.config) for s in subs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(subs))) as pool:
            outcomes = list(pool.map(_solve, subs, [plan.config] * len(subs)))
    features = {s.key: s.features for s in subs}
    for key, res, err, seconds in sorted(outcomes, key=lambda o: o[0]):
        run.timings[key] = seconds
        if err is not None:
            log.warning("sub-problem %s failed: %s", key, err)
            run.errors[key] = err
        else:
            run.results[key] = res
            run.subproblem_features[key] = features[key]
    if subs and not run.results:
        raise CtgcnError(f"all {len(subs)} sub-problems failed; first error: "
                         f"{run.errors[min(run.errors)]}")
    return run
