"""Linear partial-correlation conditional independence test."""
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import _kernels
from .exceptions import InsufficientDataError

R_CLAMP = 1.0 - 1e-15


@dataclass(frozen=True)
class CiOutcome:
    statistic: float
    p_value: float
    effective_samples: int
    rank_deficient: bool = False


def _as_condition_matrix(Z, n):
    if Z is None:
        return np.empty((0, n))
    if isinstance(Z, np.ndarray):
        Z = np.atleast_2d(Z) if Z.size else np.empty((0, n))
        return Z
    if len(Z) == 0:
        return np.empty((0, n))
    return np.vstack([np.asarray(z, dtype=np.float64) for z in Z])


def t_test_pvalue(r, df):
    """Two-sided p-value of a correlation ``r`` with ``df`` degrees of freedom."""
    r = min(max(r, -R_CLAMP), R_CLAMP)
    t = r * np.sqrt(df / (1.0 - r * r))
    return float(min(1.0, 2.0 * special.stdtr(df, -abs(t))))


def parcorr_pvalue(x, y, Z=None):
    """Test ``x`` independent of ``y`` given the rows of ``Z``.

    Residuals of x and y after least squares on Z (plus intercept) are
    correlated; the p-value comes from a two-sided Student-t transform with
    ``n - |Z| - 2`` degrees of freedom. A rank-deficient Z is handled by the
    minimum-norm solution and flagged on the outcome.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError(f"x and y lengths differ: {n} vs {y.shape[0]}")
    Zm = _as_condition_matrix(Z, n)
    if Zm.shape[1] != n:
        raise ValueError(f"conditioning vectors have length {Zm.shape[1]}, expected {n}")
    k = Zm.shape[0]
    df = n - k - 2
    if df < 1:
        raise InsufficientDataError(f"{n} samples cannot support {k} conditions (need n > |Z| + 2)")
    rcond = np.finfo(np.float64).eps * max(n, k)
    r, rank = _kernels.parcorr_residual(x, y, Zm, rcond)
    return CiOutcome(float(r), t_test_pvalue(r, df), df, rank < k)


class ParCorr:
    """Callable wrapper so discovery can take any test with the same contract."""

    name = "parcorr"

    def __call__(self, x, y, Z=None):
        return parcorr_pvalue(x, y, Z)
