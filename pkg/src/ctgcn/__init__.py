"""Decomposed causal discovery for multivariate time series, causal adjacency
aggregation, and a temporal graph-convolution forecaster built on it."""

__version__ = "0.1.0"

from .aggregate import (CausalAdjacency, build_adjacency, distance_adjacency, to_undirected,
                        vote_sample_set, votes_from_run)
from .citest import parcorr_pvalue
from .decompose import DiscoveryRunResult, execute_subproblems, plan_subproblems
from .dtw import Clustering, DtwConfig, cluster_features, dtw_distance, elbow_profile
from .exceptions import (ConfigError, CtgcnError, DataError, DependencyError,
                         InsufficientDataError, StationarityError)
from .metrics import GraphScore, adjacency_scores, benchmark_decomposition, rmse
from .model import (CtgcnModel, TrainConfig, forward, load_checkpoint, loss_and_grads,
                    normalize_adjacency, save_checkpoint, train, tune)
from .pcmci import CausalTestResults, DiscoveryConfig, discover_full_graph, discover_lagged_parents
from .synth import ScmSpec, block_scm, generate_diffusion_dataset, generate_scm_dataset, random_scm
from .timeseries import (NormalizationStats, TimeSeriesDataset, WindowSpec, load_csv, make_windows,
                         split_periods, zscore_normalize)
