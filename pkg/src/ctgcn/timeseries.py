"""Multivariate time series container, CSV I/O, scaling, windowing and
temporal splitting."""
import csv
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import DataError, InsufficientDataError

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Feature matrix with one row per feature and one column per timestep.

    ``values`` is stored read-only with shape (N, P). ``timestamps`` is an
    optional length-P array (integers or ``datetime64``) kept for writing
    the data back out.
    """

    feature_names: tuple
    values: np.ndarray
    sample_interval: float = 1.0
    timestamps: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.feature_names)
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D (features x timesteps), got shape {values.shape}")
        n, p = values.shape
        if n < 1 or p < 2:
            raise InsufficientDataError(f"need N >= 1 and P >= 2, got N={n}, P={p}")
        if len(names) != n:
            raise DataError(f"{len(names)} feature names for {n} rows")
        if len(set(names)) != n:
            raise DataError("feature names must be unique")
        if not np.all(np.isfinite(values)):
            raise DataError("values contain NaN or Inf")
        if not self.sample_interval > 0:
            raise DataError("sample_interval must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "values", values)
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps)
            if ts.shape != (p,):
                raise DataError(f"timestamps length {ts.shape} does not match P={p}")
            object.__setattr__(self, "timestamps", ts)

    @property
    def n_features(self):
        return self.values.shape[0]

    @property
    def n_steps(self):
        return self.values.shape[1]

    def select(self, indices):
        """Dataset restricted to the given feature rows (order preserved)."""
        idx = list(indices)
        return TimeSeriesDataset(
            tuple(self.feature_names[i] for i in idx),
            self.values[idx],
            self.sample_interval,
            self.timestamps,
        )

    def slice(self, start, stop):
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return TimeSeriesDataset(self.feature_names, self.values[:, start:stop],
                                 self.sample_interval, ts)

    def index_of(self, name):
        return self.feature_names.index(name)


@dataclass(frozen=True)
class WindowSpec:
    history_len: int
    horizon: int
    stride: int = 1

    def __post_init__(self):
        for name in ("history_len", "horizon", "stride"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DataError(f"{name} must be a positive integer, got {v!r}")


@dataclass(frozen=True)
class NormalizationStats:
    """Per-feature mean and (unclamped, P-1 denominator) standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def scale(self):
        return np.maximum(self.std, STD_FLOOR)

    def apply(self, values):
        values = np.asarray(values, dtype=np.float64)
        return (values - self._col(self.mean, values)) / self._col(self.scale, values)

    def invert(self, values):
        values = np.asarray(values, dtype=np.float64)
        return values * self._col(self.scale, values) + self._col(self.mean, values)

    @staticmethod
    def _col(v, values):
        # broadcast per-feature vectors against (..., N, T) blocks
        return v.reshape((-1, 1)) if values.ndim >= 2 else v

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


class Windows(NamedTuple):
    inputs: np.ndarray   # (W, N, history_len)
    targets: np.ndarray  # (W, N, horizon)

    def __len__(self):
        return self.inputs.shape[0]


def _parse_timestamp(text):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    if text.endswith("Z"):
        text = text[:-1]
    return np.datetime64(text, "ns")


def load_csv(path, delimiter=",", timestamp_column=True, encoding="utf-8"):
    """Read a column-per-feature CSV file into a :class:`TimeSeriesDataset`.

    The header row is mandatory. With ``timestamp_column`` the first column
    holds ISO-8601 datetimes or integer indices which must be strictly
    increasing. Errors name the 1-based data row and file column.
    """
    with open(path, newline="", encoding=encoding) as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        first = 1 if timestamp_column else 0
        names = header[first:]
        if not names:
            raise DataError(f"{path}: no feature columns in header")
        if len(set(names)) != len(names):
            raise DataError(f"{path}: duplicate feature names in header")
        rows = []
        stamps = []
        for r, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataError(f"expected {len(header)} cells, got {len(record)}", r, len(record) + 1)
            if timestamp_column:
                try:
                    stamps.append(_parse_timestamp(record[0]))
                except ValueError:
                    raise DataError(f"unparseable timestamp {record[0]!r}", r, 1) from None
            row = []
            for c, cell in enumerate(record[first:], start=first + 1):
                cell = cell.strip()
                if cell == "":
                    raise DataError("missing value", r, c)
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"non-numeric cell {cell!r}", r, c) from None
                if not np.isfinite(v):
                    raise DataError(f"non-finite value {cell!r}", r, c)
                row.append(v)
            rows.append(row)
    if len(rows) < 2:
        raise InsufficientDataError(f"{path}: need at least 2 data rows, got {len(rows)}")
    values = np.array(rows, dtype=np.float64).T
    timestamps = None
    interval = 1.0
    if timestamp_column:
        kinds = {type(s) for s in stamps}
        if len(kinds) > 1:
            raise DataError(f"{path}: mixed integer and datetime timestamps")
        timestamps = np.array(stamps)
        if np.issubdtype(timestamps.dtype, np.datetime64):
            steps = np.diff(timestamps).astype("timedelta64[ns]").astype(np.int64) / 1e9
        else:
            timestamps = timestamps.astype(np.int64)
            steps = np.diff(timestamps).astype(np.float64)
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            raise DataError(f"timestamps not strictly increasing", int(bad[0]) + 2, 1)
        interval = float(np.median(steps))
    return TimeSeriesDataset(tuple(names), values, interval, timestamps)


def write_csv(ds, path, delimiter=","):
    """Write ``ds`` in the layout read by :func:`load_csv` (17 significant digits)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(["timestamp", *ds.feature_names])
        if ds.timestamps is None:
            stamps = [str(i) for i in range(ds.n_steps)]
        elif np.issubdtype(ds.timestamps.dtype, np.datetime64):
            stamps = [str(s) for s in ds.timestamps]
        else:
            stamps = [str(int(s)) for s in ds.timestamps]
        for t, stamp in enumerate(stamps):
            w.writerow([stamp, *(format(v, ".17g") for v in ds.values[:, t])])


def zscore_normalize(ds):
    """Z-score every feature row; returns the scaled dataset and its stats."""
    mean = ds.values.mean(axis=1)
    std = ds.values.std(axis=1, ddof=1)
    stats = NormalizationStats(mean, std)
    out = TimeSeriesDataset(ds.feature_names, stats.apply(ds.values), ds.sample_interval, ds.timestamps)
    return out, stats


def make_windows(ds, spec):
    """Chronological (input, target) windows; both arrays are strided views."""
    values = ds.values if isinstance(ds, TimeSeriesDataset) else np.asarray(ds)
    lam, q, stride = spec.history_len, spec.horizon, spec.stride
    p = values.shape[1]
    if lam + q > p:
        raise InsufficientDataError(
            f"window needs history_len + horizon = {lam + q} steps, dataset has {p}")
    span = np.lib.stride_tricks.sliding_window_view(values, lam + q, axis=1)[:, ::stride]
    span = np.moveaxis(span, 1, 0)  # (W, N, lam + q)
    return Windows(span[..., :lam], span[..., lam:])


def window_count(p, spec):
    return (p - spec.history_len - spec.horizon) // spec.stride + 1


def split_periods(ds, period_len, tau_max=None):
    """Split along time into ``floor(P / period_len)`` consecutive periods.

    A trailing remainder shorter than ``period_len`` is dropped with a warning.
    """
    if int(period_len) != period_len or period_len <= 0:
        raise DataError(f"period_len must be a positive integer, got {period_len!r}")
    p = ds.n_steps
    if period_len > p:
        raise InsufficientDataError(f"period_len {period_len} exceeds series length {p}")
    if tau_max is not None and period_len < 3 * tau_max:
        warnings.warn(f"period_len {period_len} is below 3 * tau_max = {3 * tau_max}", stacklevel=2)
    n_periods = p // period_len
    dropped = p - n_periods * period_len
    if dropped:
        warnings.warn(f"dropping trailing {dropped} samples that do not fill a period", stacklevel=2)
    return [ds.slice(k * period_len, (k + 1) * period_len) for k in range(n_periods)]


def downsample_mean(ds, factor):
    """Average consecutive non-overlapping blocks of ``factor`` samples."""
    factor = int(factor)
    if factor < 1:
        raise DataError("downsample factor must be >= 1")
    if factor == 1:
        return ds
    p = (ds.n_steps // factor) * factor
    if p // factor < 2:
        raise InsufficientDataError("downsampling leaves fewer than 2 samples")
    vals = ds.values[:, :p].reshape(ds.n_features, -1, factor).mean(axis=2)
    ts = None if ds.timestamps is None else ds.timestamps[:p:factor]
    return TimeSeriesDataset(ds.feature_names, vals, ds.sample_interval * factor, ts)


def dataset_from_array(values, names: Sequence[str] = None, sample_interval=1.0):
    values = np.asarray(values, dtype=np.float64)
    if names is None:
        names = [f"x{i}" for i in range(values.shape[0])]
    return TimeSeriesDataset(tuple(names), values, sample_interval)
