"""Temporal-convolution + causal graph-convolution forecaster.

Per node, a valid 1-D convolution over the input window is mean-pooled over
time into a feature vector. The node features pass through two graph
convolutions sharing the normalised adjacency,

    H = act(A_hat @ relu(A_hat @ X' @ W0) @ W1),

and a linear head maps every node's row of H to ``horizon`` forecasts. The
output activation ``act`` is the identity by default.

Gradients are written out by hand (reverse mode through head, graph layers,
pooling and convolution); there is no autodiff dependency.
"""
import hashlib
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .aggregate import CausalAdjacency
from .exceptions import ConfigError, DataError, InsufficientDataError
from .timeseries import WindowSpec, make_windows

log = logging.getLogger(__name__)

RMSE_EPS = 1e-12
CHECKPOINT_VERSION = 1
PARAM_NAMES = ("kernel", "conv_bias", "w0", "w1", "head_w", "head_b")


def normalize_adjacency(A):
    """A_hat = D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    if isinstance(A, CausalAdjacency):
        A = A.matrix
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DataError(f"adjacency must be square, got shape {A.shape}")
    if np.any(A < 0):
        raise DataError("adjacency has negative entries")
    A_tilde = A + np.eye(A.shape[0])
    d = A_tilde.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return A_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


def adjacency_fingerprint(a_hat):
    a = np.ascontiguousarray(a_hat, dtype=np.float64)
    return hashlib.sha256(a.tobytes() + str(a.shape).encode()).hexdigest()


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class CtgcnModel:
    kernel: np.ndarray      # (channels, kernel_width)
    conv_bias: np.ndarray   # (channels,)
    w0: np.ndarray          # (channels, hidden)
    w1: np.ndarray          # (hidden, hidden_out)
    head_w: np.ndarray      # (hidden_out, horizon)
    head_b: np.ndarray      # (horizon,)
    history_len: int
    output_activation: str = "identity"

    @classmethod
    def init(cls, history_len, horizon, kernel_width=3, channels=16, hidden=16, hidden_out=16,
             seed=0, output_activation="identity"):
        if not 1 <= kernel_width <= history_len:
            raise ConfigError(f"kernel width {kernel_width} must lie in [1, {history_len}]", "kernel_width")
        rng = np.random.default_rng(seed)
        return cls(
            kernel=_glorot(rng, kernel_width, channels, (channels, kernel_width)),
            conv_bias=np.zeros(channels),
            w0=_glorot(rng, channels, hidden, (channels, hidden)),
            w1=_glorot(rng, hidden, hidden_out, (hidden, hidden_out)),
            head_w=_glorot(rng, hidden_out, horizon, (hidden_out, horizon)),
            head_b=np.zeros(horizon),
            history_len=int(history_len),
            output_activation=output_activation,
        )

    def __post_init__(self):
        if self.output_activation not in ("identity", "sigmoid"):
            raise ConfigError(f"unknown activation {self.output_activation!r}", "output_activation")
        c, k = self.kernel.shape
        if (self.conv_bias.shape != (c,) or self.w0.shape[0] != c
                or self.w1.shape[0] != self.w0.shape[1] or self.head_w.shape[0] != self.w1.shape[1]
                or self.head_b.shape != (self.head_w.shape[1],) or k > self.history_len):
            raise DataError("inconsistent parameter shapes")

    @property
    def horizon(self):
        return self.head_w.shape[1]

    @property
    def kernel_width(self):
        return self.kernel.shape[1]

    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_params(self, params):
        return replace(self, **{k: np.array(v, dtype=np.float64) for k, v in params.items()})

    def copy(self):
        return self.with_params(self.params())

    def hyperparameters(self):
        return {
            "history_len": self.history_len,
            "horizon": self.horizon,
            "kernel_width": self.kernel_width,
            "channels": self.kernel.shape[0],
            "hidden": self.w0.shape[1],
            "hidden_out": self.w1.shape[1],
            "output_activation": self.output_activation,
        }


def _forward(model, a_hat, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    b, n, lam = x.shape
    if lam != model.history_len:
        raise DataError(f"window length {lam} does not match model history_len {model.history_len}")
    if a_hat.shape != (n, n):
        raise DataError(f"adjacency shape {a_hat.shape} does not match {n} nodes")
    k = model.kernel_width
    # conv then mean-pool == kernel applied to the mean of each sliding patch
    patches = np.lib.stride_tricks.sliding_window_view(x, k, axis=2)   # (B, N, L, k)
    conv = patches @ model.kernel.T + model.conv_bias                  # (B, N, L, C)
    pooled = conv.mean(axis=2)                                          # (B, N, C)
    ax = a_hat @ pooled
    z1 = ax @ model.w0
    h1 = np.maximum(z1, 0.0)
    ah1 = a_hat @ h1
    z2 = ah1 @ model.w1
    h2 = z2 if model.output_activation == "identity" else 1.0 / (1.0 + np.exp(-z2))
    y = h2 @ model.head_w + model.head_b
    cache = dict(mean_patch=patches.mean(axis=2), ax=ax, z1=z1, h1=h1, ah1=ah1, h2=h2)
    return y, cache


def forward(model, a_hat, window):
    """Forecast of shape (N, horizon) for one (N, history_len) window, or
    (B, N, horizon) for a batch."""
    y, _ = _forward(model, np.asarray(a_hat, dtype=np.float64), window)
    return y[0] if np.ndim(window) == 2 else y


def rmse_loss(pred, target):
    return float(np.sqrt(np.mean((pred - target) ** 2) + RMSE_EPS))


def loss_and_grads(model, a_hat, inputs, targets):
    """RMSE loss ``sqrt(MSE + 1e-12)`` and its gradient for every parameter."""
    a_hat = np.asarray(a_hat, dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim == 2:
        inputs, targets = inputs[None], targets[None]
    if inputs.shape[0] == 0:
        raise InsufficientDataError("empty batch")
    y, c = _forward(model, a_hat, inputs)
    if y.shape != targets.shape:
        raise DataError(f"target shape {targets.shape} does not match forecast shape {y.shape}")
    err = y - targets
    loss = np.sqrt(np.mean(err ** 2) + RMSE_EPS)
    d_y = err / (err.size * loss)
    g = {}
    g["head_w"] = np.einsum("bnh,bnq->hq", c["h2"], d_y)
    g["head_b"] = d_y.sum(axis=(0, 1))
    d_h2 = d_y @ model.head_w.T
    d_z2 = d_h2 if model.output_activation == "identity" else d_h2 * c["h2"] * (1.0 - c["h2"])
    g["w1"] = np.einsum("bnh,bnk->hk", c["ah1"], d_z2)
    d_h1 = a_hat.T @ (d_z2 @ model.w1.T)
    d_z1 = d_h1 * (c["z1"] > 0)
    g["w0"] = np.einsum("bnc,bnh->ch", c["ax"], d_z1)
    d_pooled = a_hat.T @ (d_z1 @ model.w0.T)
    g["kernel"] = np.einsum("bnc,bnk->ck", d_pooled, c["mean_patch"])
    g["conv_bias"] = d_pooled.sum(axis=(0, 1))
    return float(loss), g


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.0
    seed: int = 0
    train_fraction: float = 0.7
    val_fraction: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("must be >= 1", "epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "batch_size")
        if not self.learning_rate > 0:
            raise ConfigError("must be positive", "learning_rate")
        if not 0 <= self.momentum < 1:
            raise ConfigError("must lie in [0, 1)", "momentum")
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"fractions must be positive and sum to 1, got {fr}", "fractions")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch] if self.best_epoch >= 0 else np.inf


@dataclass
class SplitWindows:
    train: tuple
    val: tuple
    test: tuple


def chronological_split(values, window, cfg):
    """Cut the time axis into train/val/test segments and window each one.

    No window straddles a segment boundary.
    """
    values = values.values if hasattr(values, "values") else np.asarray(values)
    p = values.shape[1]
    n_train = int(round(cfg.train_fraction * p))
    n_val = int(round(cfg.val_fraction * p))
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, p)]
    parts = []
    need = window.history_len + window.horizon
    for (lo, hi), name in zip(bounds, ("train", "validation", "test")):
        if hi - lo < need:
            raise InsufficientDataError(
                f"{name} segment has {hi - lo} steps, a window needs {need}")
        w = make_windows(values[:, lo:hi], window)
        parts.append((np.ascontiguousarray(w.inputs), np.ascontiguousarray(w.targets)))
    return SplitWindows(*parts)


def evaluate(model, a_hat, inputs, targets, batch_size=256):
    """RMSE of the model over a set of windows (exact, batched)."""
    sq, count = 0.0, 0
    for s in range(0, len(inputs), batch_size):
        y, _ = _forward(model, a_hat, inputs[s:s + batch_size])
        sq += float(np.sum((y - targets[s:s + batch_size]) ** 2))
        count += y.size
    return float(np.sqrt(sq / count))


def train(model, a_hat, data, window, cfg=None, splits=None):
    """Mini-batch SGD on RMSE; returns the best-validation-epoch model and history.

    ``data`` is a TimeSeriesDataset or (N, P) array; precomputed ``splits``
    from :func:`chronological_split` may be passed instead.
    """
    cfg = cfg or TrainConfig()
    a_hat = np.asarray(a_hat, dtype=np.float64)
    if window.history_len != model.history_len or window.horizon != model.horizon:
        raise ConfigError("window does not match model history_len / horizon", "window")
    if splits is None:
        splits = chronological_split(data, window, cfg)
    x_tr, y_tr = splits.train
    x_va, y_va = splits.val
    rng = np.random.default_rng(cfg.seed)
    params = {k: v.copy() for k, v in model.params().items()}
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    history = TrainHistory()
    best = model.copy()
    best_val = np.inf
    current = model.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(x_tr))
            total, count = 0.0, 0
            for s in range(0, len(order), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                loss, grads = loss_and_grads(current, a_hat, x_tr[idx], y_tr[idx])
                total += loss ** 2 * len(idx)
                count += len(idx)
                for k in params:
                    velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * grads[k]
                    params[k] += velocity[k]
                current = current.with_params(params)
            train_loss = float(np.sqrt(total / count))
            val_loss = evaluate(current, a_hat, x_va, y_va)
            history.train_loss.append(train_loss)
            history.val_loss.append(val_loss)
            if np.isfinite(val_loss) and val_loss < best_val:
                best_val = val_loss
                best = current.copy()
                history.best_epoch = epoch
            if not np.isfinite(train_loss):
                log.info("training diverged at epoch %d", epoch)
                break
    return best, history


# --------------------------------------------------------------------------
# Grid tuning
# --------------------------------------------------------------------------

MODEL_KEYS = ("kernel_width", "channels", "hidden", "hidden_out")
TRAIN_KEYS = ("epochs", "batch_size", "learning_rate", "momentum")


@dataclass
class TuneResult:
    train_config: TrainConfig
    model_params: dict
    val_rmse: float
    model: CtgcnModel
    trials: list


def tune(space, data, a_hat, window, base=None, seed=0):
    """Exhaustive grid search on validation RMSE.

    ``space`` maps hyperparameter names (``kernel_width``, ``channels``,
    ``hidden``, ``hidden_out``, ``epochs``, ``batch_size``,
    ``learning_rate``, ``momentum``) to candidate lists. Combinations are
    enumerated in sorted-key order; ties keep the earliest.
    """
    if not space or any(len(v) == 0 for v in space.values()):
        raise ConfigError("search space is empty", "space")
    unknown = set(space) - set(MODEL_KEYS) - set(TRAIN_KEYS)
    if unknown:
        raise ConfigError(f"unknown hyperparameters {sorted(unknown)}", "space")
    base = base or TrainConfig(seed=seed)
    keys = sorted(space)
    splits = chronological_split(data, window, base)
    best = None
    trials = []
    for combo in itertools.product(*(space[k] for k in keys)):
        point = dict(zip(keys, combo))
        mparams = {k: point[k] for k in MODEL_KEYS if k in point}
        tcfg = replace(base, **{k: point[k] for k in TRAIN_KEYS if k in point})
        model = CtgcnModel.init(window.history_len, window.horizon, seed=base.seed, **mparams)
        fitted, hist = train(model, a_hat, None, window, tcfg, splits=splits)
        score = hist.best_val_loss
        trials.append({**point, "val_rmse": score})
        if best is None or score < best.val_rmse:
            best = TuneResult(tcfg, mparams, score, fitted, trials)
    best.trials = trials
    return best


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path, model, a_hat, stats=None, extra=None):
    payload = {
        "format": "ctgcn-checkpoint",
        "version": CHECKPOINT_VERSION,
        "hyperparameters": model.hyperparameters(),
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in model.params().items()},
        "adjacency_fingerprint": adjacency_fingerprint(a_hat),
        "n_nodes": int(np.shape(a_hat)[0]),
        "normalization": stats.to_dict() if stats is not None else None,
        "extra": extra or {},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path, a_hat=None):
    """Load a checkpoint; refuses a mismatched adjacency when one is given."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "ctgcn-checkpoint" or payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
    hp = payload["hyperparameters"]
    params = {}
    for k in PARAM_NAMES:
        entry = payload["params"][k]
        params[k] = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
    model = CtgcnModel(**params, history_len=int(hp["history_len"]),
                       output_activation=hp.get("output_activation", "identity"))
    if model.kernel_width != hp["kernel_width"] or model.horizon != hp["horizon"]:
        raise DataError(f"{path}: parameter shapes disagree with recorded hyperparameters")
    if a_hat is not None:
        if np.shape(a_hat)[0] != payload["n_nodes"]:
            raise DataError(f"{path}: trained on {payload['n_nodes']} nodes, got {np.shape(a_hat)[0]}")
        if adjacency_fingerprint(a_hat) != payload["adjacency_fingerprint"]:
            raise DataError(f"{path}: adjacency fingerprint mismatch")
    return model, payload
