"""Command-line front end: ``ctgcn <stage> [--config FILE] [flags]``.

Every stage reads its inputs from and writes its artifacts to the output
directory, and records their SHA-256 digests in ``manifest.json``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 stage failure
(including a missing upstream artifact).
"""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .aggregate import (CausalAdjacency, build_adjacency, distance_adjacency, to_undirected,
                        votes_from_run)
from .config import STAGES, PipelineConfig
from .decompose import DiscoveryRunResult, execute_subproblems, plan_subproblems
from .dtw import Clustering, DtwConfig, cluster_features, distance_matrix, elbow_profile
from .exceptions import ConfigError, CtgcnError, DataError, DependencyError
from .metrics import adjacency_scores, benchmark_decomposition, rmse, scores_table
from .model import (CtgcnModel, chronological_split, evaluate, forward, load_checkpoint,
                    normalize_adjacency, save_checkpoint, train, tune)
from .synth import (block_scm, carriageway_network, generate_diffusion_dataset, generate_scm_dataset, knn_graph,
                    random_layout, random_scm, squared_distances)
from .timeseries import (NormalizationStats, TimeSeriesDataset, WindowSpec, downsample_mean,
                         load_csv, write_csv, zscore_normalize)

log = logging.getLogger("ctgcn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 2, 3, 4

# artifact file names, relative to the output directory
DATA_CSV = "data.csv"
TRUTH_JSON = "truth.json"
LAYOUT_JSON = "layout.json"
CLUSTERING_JSON = "clustering.json"
ELBOW_JSON = "elbow.json"
DISCOVERY_JSON = "discovery.json"
TIMINGS_JSON = "discovery_timings.json"
ADJACENCY = "adjacency"
CHECKPOINT_JSON = "checkpoint.json"
HISTORY_JSON = "train_history.json"
TUNE_JSON = "tune.json"
FORECAST_CSV = "forecast.csv"
RMSE_JSON = "rmse.json"
SCORES_JSON = "scores.json"
REPORT_TXT = "report.txt"
BENCHMARK_JSON = "benchmark.json"
BENCHMARK_TXT = "benchmark.txt"
MANIFEST_JSON = "manifest.json"


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


class Pipeline:
    """Runs stages against one output directory."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.out = cfg.output_dir
        os.makedirs(self.out, exist_ok=True)
        self._data = None

    def path(self, name):
        return os.path.join(self.out, name)

    def require(self, name, producer):
        p = self.path(name)
        if not os.path.exists(p):
            raise DependencyError(f"missing {name} in {self.out}; run the '{producer}' stage first")
        return p

    # ---- shared inputs -------------------------------------------------

    def raw_dataset(self):
        if self._data is None:
            dc = self.cfg.data
            if dc.path is not None:
                ds = load_csv(dc.path, dc.delimiter, dc.timestamp_column)
            elif self.cfg.simulate is not None:
                ds = load_csv(self.require(DATA_CSV, "simulate"))
            else:
                raise ConfigError("no input: set data.path or a simulate section", "data.path")
            self._data = downsample_mean(ds, dc.downsample)
        return self._data

    def normalized_dataset(self):
        scaled, _ = zscore_normalize(self.raw_dataset())
        return scaled

    def window(self):
        f = self.cfg.forecast
        return WindowSpec(f.history_len, f.horizon)

    def train_stats(self):
        """Normalisation fitted on the training segment only."""
        ds = self.raw_dataset()
        n_train = int(round(self.cfg.forecast.train_fraction * ds.n_steps))
        _, stats = zscore_normalize(ds.slice(0, n_train))
        return stats

    def clustering(self):
        d = self.cfg.discovery
        names = self.raw_dataset().feature_names
        p = self.path(CLUSTERING_JSON)
        if os.path.exists(p):
            cl = Clustering.from_dict(_read_json(p), names)
            if d.elbow_range() is None and cl.n_clusters != d.clusters:
                raise DependencyError(f"{CLUSTERING_JSON} has {cl.n_clusters} clusters, config asks "
                                      f"for {d.clusters}; re-run the 'cluster' stage")
            return cl
        if d.clusters == 1:
            return Clustering.single(len(names), names)
        self.require(CLUSTERING_JSON, "cluster")

    def adjacency(self, source=None):
        f = self.cfg.forecast
        source = source or f.adjacency
        names = self.raw_dataset().feature_names
        if source == "discovered":
            return CausalAdjacency.read_json(self.require(ADJACENCY + ".json", "aggregate")).matrix
        if source == "discovered-undirected":
            return to_undirected(CausalAdjacency.read_json(self.require(ADJACENCY + ".json", "aggregate"))).matrix
        if source == "truth":
            return CausalAdjacency.read_json(self.require(TRUTH_JSON, "simulate")).matrix
        if source == "none":
            return np.zeros((len(names), len(names)))
        if source == "distance":
            pts = np.asarray(_read_json(self.require(LAYOUT_JSON, "simulate"))["positions"])
            return distance_adjacency(np.sqrt(squared_distances(pts)), f.sigma2, f.epsilon)
        adj = CausalAdjacency.read_json(source)
        if adj.node_names != tuple(names):
            raise DataError(f"{source}: node names do not match the dataset features")
        return adj.matrix

    # ---- stages --------------------------------------------------------

    def simulate(self):
        s = self.cfg.simulate
        if s is None:
            raise ConfigError("the simulate stage needs a 'simulate' section", "simulate")
        seed = self.cfg.stage_seed("simulate")
        written = [DATA_CSV, TRUTH_JSON]
        if s.kind == "diffusion":
            if s.layout == "carriageway":
                graph, geo = carriageway_network(s.n_nodes // 2, s.extent, s.neighbours, s.jitter, seed)
            else:
                graph = knn_graph(random_layout(s.n_nodes, s.extent, seed), s.neighbours)
                # observed sensor coordinates: an independent draw from the same region
                geo = random_layout(s.n_nodes, s.extent, seed + 1)
            ds, truth = generate_diffusion_dataset(graph, s.n_steps, s.rho, s.noise, seed, s.decay)
            _write_json(self.path(LAYOUT_JSON), {"nodes": list(ds.feature_names),
                                                 "positions": geo.tolist()})
            written.append(LAYOUT_JSON)
        else:
            if s.kind == "scm":
                spec = random_scm(s.n_vars, s.n_edges, tuple(s.coef_range), s.max_lag, noise=s.noise,
                                  seed=seed)
            else:
                spec = block_scm(s.n_blocks, s.block_size, noise=s.noise, seed=seed)
            ds, truth = generate_scm_dataset(spec, s.n_steps)
        write_csv(ds, self.path(DATA_CSV))
        truth.write_json(self.path(TRUTH_JSON))
        self._data = None
        return written

    def cluster(self):
        d = self.cfg.discovery
        ds = self.normalized_dataset()
        dcfg = DtwConfig(d.dtw_band, d.dtw_downsample)
        seed = self.cfg.stage_seed("cluster")
        written = [CLUSTERING_JSON]
        k_range = d.elbow_range()
        if k_range is not None:
            D = distance_matrix(ds, dcfg)
            prof = elbow_profile(ds, k_range, dcfg, seed, distances=D)
            _write_json(self.path(ELBOW_JSON), prof.to_dict())
            written.append(ELBOW_JSON)
            cl = cluster_features(ds, prof.suggested, dcfg, seed, distances=D)
        elif d.clusters == 1:
            cl = Clustering.single(ds.n_features, ds.feature_names)
        else:
            cl = cluster_features(ds, d.clusters, dcfg, seed)
        cl.write_json(self.path(CLUSTERING_JSON))
        return written

    def _plan(self):
        d = self.cfg.discovery
        ds = self.normalized_dataset()
        period_len = d.period_len or ds.n_steps
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return plan_subproblems(ds, period_len, self.clustering(), d.discovery_config())

    def discover(self):
        run = execute_subproblems(self._plan(), self.cfg.resolved_workers())
        run.write_json(self.path(DISCOVERY_JSON), include_timings=False)
        _write_json(self.path(TIMINGS_JSON), run.to_dict()["timings"])
        return [DISCOVERY_JSON]

    def aggregate(self):
        d = self.cfg.discovery
        run = DiscoveryRunResult.read_json(self.require(DISCOVERY_JSON, "discover"))
        adj = build_adjacency(votes_from_run(run, d.vote_mode), d.strategy, run.feature_names)
        if not d.directed:
            adj = to_undirected(adj)
        adj.write_json(self.path(ADJACENCY + ".json"))
        adj.write_csv(self.path(ADJACENCY + ".csv"))
        with open(self.path(ADJACENCY + ".dot"), "w", encoding="utf-8") as fh:
            fh.write(adj.to_dot())
        return [ADJACENCY + ".json", ADJACENCY + ".csv", ADJACENCY + ".dot"]

    def train(self):
        f = self.cfg.forecast
        seed = self.cfg.stage_seed("train")
        stats = self.train_stats()
        values = stats.apply(self.raw_dataset().values)
        a_hat = normalize_adjacency(self.adjacency())
        w = self.window()
        tcfg = f.train_config(seed)
        written = [CHECKPOINT_JSON, HISTORY_JSON]
        if f.tune:
            result = tune(f.tune, values, a_hat, w, base=tcfg)
            _write_json(self.path(TUNE_JSON), {
                "selected": {**result.model_params,
                             **{k: getattr(result.train_config, k) for k in f.tune if hasattr(result.train_config, k)}},
                "val_rmse": result.val_rmse,
                "trials": result.trials,
            })
            written.append(TUNE_JSON)
            mk = f.model_kwargs() | result.model_params
            tcfg = result.train_config
        else:
            mk = f.model_kwargs()
        model = CtgcnModel.init(w.history_len, w.horizon, seed=seed, **mk)
        best, hist = train(model, a_hat, values, w, tcfg)
        save_checkpoint(self.path(CHECKPOINT_JSON), best, a_hat, stats,
                        extra={"adjacency_source": f.adjacency, "train_config": tcfg.__dict__})
        _write_json(self.path(HISTORY_JSON), {"train_loss": hist.train_loss, "val_loss": hist.val_loss,
                                              "best_epoch": hist.best_epoch})
        return written

    def _load_model(self):
        a_hat = normalize_adjacency(self.adjacency())
        model, payload = load_checkpoint(self.require(CHECKPOINT_JSON, "train"), a_hat)
        stats = NormalizationStats.from_dict(payload["normalization"])
        return model, a_hat, stats

    def forecast(self):
        model, a_hat, stats = self._load_model()
        ds = self.raw_dataset()
        if ds.n_steps < model.history_len:
            raise DataError(f"need {model.history_len} steps to forecast, dataset has {ds.n_steps}")
        window = stats.apply(ds.values[:, -model.history_len:])
        pred = stats.invert(forward(model, a_hat, window))
        with open(self.path(FORECAST_CSV), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["feature"] + [f"h{i + 1}" for i in range(model.horizon)])
            for name, row in zip(ds.feature_names, pred):
                w.writerow([name] + [format(v, ".17g") for v in row])
        return [FORECAST_CSV]

    def evaluate(self):
        written = []
        report = []
        if os.path.exists(self.path(CHECKPOINT_JSON)):
            model, a_hat, stats = self._load_model()
            f = self.cfg.forecast
            values = stats.apply(self.raw_dataset().values)
            splits = chronological_split(values, self.window(), f.train_config(0))
            x, y = splits.test
            pred = np.concatenate([forward(model, a_hat, x[s:s + 256]) for s in range(0, len(x), 256)])
            out = {"test_windows": int(len(x)),
                   "rmse_normalized": evaluate(model, a_hat, x, y),
                   "rmse": rmse(pred, y, stats)}
            _write_json(self.path(RMSE_JSON), out)
            written.append(RMSE_JSON)
            report.append(f"test RMSE (normalized): {out['rmse_normalized']:.6f}\n"
                          f"test RMSE (data units): {out['rmse']:.6f}\n")
        if os.path.exists(self.path(TRUTH_JSON)) and os.path.exists(self.path(ADJACENCY + ".json")):
            truth = CausalAdjacency.read_json(self.path(TRUTH_JSON))
            pred_adj = CausalAdjacency.read_json(self.path(ADJACENCY + ".json"))
            directed = pred_adj.directed
            scores = {"discovered": adjacency_scores(pred_adj, truth, directed)}
            _write_json(self.path(SCORES_JSON), {"directed": directed,
                                                  **{k: v.to_dict() for k, v in scores.items()}})
            written.append(SCORES_JSON)
            report.append(scores_table(scores))
        if not written:
            raise DependencyError("nothing to evaluate: run 'train' and/or 'aggregate' first")
        with open(self.path(REPORT_TXT), "w", encoding="utf-8") as fh:
            fh.write("\n".join(report))
        return written + [REPORT_TXT]

    def benchmark(self):
        b = self.cfg.benchmark
        plan_cfg = self.cfg.discovery
        ds = self.normalized_dataset()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = benchmark_decomposition(ds, plan_cfg.period_len or ds.n_steps, self.clustering(),
                                          plan_cfg.discovery_config(), b.repetitions,
                                          self.cfg.resolved_workers())
        with open(self.path(BENCHMARK_JSON), "w", encoding="utf-8") as fh:
            fh.write(rep.to_json() + "\n")
        with open(self.path(BENCHMARK_TXT), "w", encoding="utf-8") as fh:
            fh.write(rep.to_table())
        return [BENCHMARK_JSON, BENCHMARK_TXT]

    # ---- orchestration -------------------------------------------------

    def run(self, stages):
        for stage in stages:
            log.info("stage %s", stage)
            try:
                written = getattr(self, stage)()
            except (ConfigError, DataError, DependencyError):
                raise
            except CtgcnError as exc:
                raise StageFailure(stage, exc) from exc
            except Exception as exc:
                raise StageFailure(stage, exc) from exc
            self.record(stage, written)

    def record(self, stage, written):
        p = self.path(MANIFEST_JSON)
        manifest = _read_json(p) if os.path.exists(p) else {}
        if manifest.get("config_hash") != self.cfg.config_hash():
            manifest = {}
        manifest.update({
            "version": __version__,
            "config_hash": self.cfg.config_hash(),
            "seed": self.cfg.seed,
            "seeds": {s: self.cfg.stage_seed(s) for s in STAGES},
            "config": {k: v for k, v in self.cfg.to_dict().items() if k not in ("output_dir", "workers")},
        })
        manifest.setdefault("stages", {})[stage] = {"artifacts": {n: _sha256(self.path(n)) for n in written}}
        _write_json(p, manifest)


class StageFailure(CtgcnError):
    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}' failed: {type(exc).__name__}: {exc}")
        self.stage = stage


def _pipeline_stages(cfg):
    stages = [s for s in STAGES if s != "simulate" or cfg.simulate is not None]
    if not cfg.benchmark.enabled:
        stages.remove("benchmark")
    return stages


# (flag, config key, type) for flags that mirror config keys
FLAG_KEYS = [
    ("--seed", "seed", int),
    ("--workers", "workers", int),
    ("--output-dir", "output_dir", str),
    ("--data", "data.path", str),
    ("--downsample", "data.downsample", int),
    ("--tau-max", "discovery.tau_max", int),
    ("--alpha", "discovery.alpha", float),
    ("--pc-alpha", "discovery.pc_alpha", float),
    ("--period-len", "discovery.period_len", int),
    ("--clusters", "discovery.clusters", str),
    ("--vote-mode", "discovery.vote_mode", str),
    ("--strategy", "discovery.strategy", str),
    ("--history-len", "forecast.history_len", int),
    ("--horizon", "forecast.horizon", int),
    ("--epochs", "forecast.epochs", int),
    ("--learning-rate", "forecast.learning_rate", float),
    ("--batch-size", "forecast.batch_size", int),
    ("--adjacency", "forecast.adjacency", str),
    ("--repetitions", "benchmark.repetitions", int),
]


def _parse_set(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"--set expects key=value, got {text!r}", "set")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    for flag, key, typ in FLAG_KEYS:
        common.add_argument(flag, dest=key.replace(".", "__"), type=typ, default=None,
                            help=f"overrides '{key}'")
    common.add_argument("--undirected", action="store_true", help="aggregate to an undirected adjacency")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (dotted path, JSON value)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    parser = argparse.ArgumentParser(prog="ctgcn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ctgcn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("pipeline",):
        sub.add_parser(name, parents=[common])
    return parser


def load_config(args, environ=None):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    cfg = cfg.apply_environment(environ)
    overrides = {}
    for _, key, _ in FLAG_KEYS:
        value = getattr(args, key.replace(".", "__"))
        if value is not None:
            if key == "discovery.clusters" and value.isdigit():
                value = int(value)
            if key == "data.path":
                value = os.path.abspath(value)
            overrides[key] = value
    if args.undirected:
        overrides["discovery.directed"] = False
    for item in args.set:
        k, v = _parse_set(item)
        overrides[k] = v
    if args.command == "simulate" and cfg.simulate is None and "simulate" not in {k.split(".")[0] for k in overrides}:
        overrides["simulate"] = {}
    return cfg.apply_overrides(overrides) if overrides else cfg


def main(argv=None, environ=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args, environ)
        stages = _pipeline_stages(cfg) if args.command == "pipeline" else [args.command]
        Pipeline(cfg).run(stages)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DependencyError as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
