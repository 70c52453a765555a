"""Hot numeric kernels.

Every kernel exists twice: a numba ``@njit`` version and a pure numpy
version. The public names (``dtw``, ``dtw_matrix``, ``parcorr_residual``,
``simulate_linear``) dispatch to numba unless the environment variable
``CTGCN_DISABLE_JIT`` is set to a truthy value or numba is not importable.
Both paths are always importable so tests and benchmarks can compare them.
"""
import os

import numpy as np

_FLAG = os.environ.get("CTGCN_DISABLE_JIT", "").strip().lower()
JIT_REQUESTED = _FLAG not in ("1", "true", "yes", "on")

try:
    import numba
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = JIT_REQUESTED and HAS_NUMBA


# --------------------------------------------------------------------------
# Dynamic time warping
# --------------------------------------------------------------------------

def _dtw_py(a, b, band):
    n, m = a.shape[0], b.shape[0]
    inf = np.inf
    prev = np.full(m + 1, inf)
    prev[0] = 0.0
    cur = np.empty(m + 1)
    for i in range(1, n + 1):
        cur[:] = inf
        lo, hi = 1, m
        if band >= 0:
            lo = max(1, i - band)
            hi = min(m, i + band)
        ai = a[i - 1]
        for j in range(lo, hi + 1):
            d = ai - b[j - 1]
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = d * d + best
        prev, cur = cur, prev
    return prev[m]


def dtw_numpy(a, b, band=-1):
    """Anti-diagonal wavefront DTW; every cell of one diagonal is independent."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    n, m = a.shape[0], b.shape[0]
    # diag arrays are indexed by i (row of the (n+1)x(m+1) lattice)
    prev2 = np.full(n + 1, np.inf)
    prev2[0] = 0.0
    prev1 = np.full(n + 1, np.inf)
    for k in range(2, n + m + 1):
        cur = np.full(n + 1, np.inf)
        lo = max(1, k - m)
        hi = min(n, k - 1)
        if lo <= hi:
            i = np.arange(lo, hi + 1)
            j = k - i
            d = a[i - 1] - b[j - 1]
            best = np.minimum(prev2[i - 1], np.minimum(prev1[i - 1], prev1[i]))
            val = d * d + best
            if band >= 0:
                val[np.abs(i - j) > band] = np.inf
            cur[i] = val
        prev2, prev1 = prev1, cur
    return float(prev1[n]) if n + m >= 2 else 0.0


def dtw_matrix_numpy(X, band=-1):
    n = X.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = dtw_numpy(X[i], X[j], band)
    return out


# --------------------------------------------------------------------------
# Partial correlation residuals
# --------------------------------------------------------------------------

def parcorr_residual_numpy(x, y, Z, rcond):
    """Pearson correlation of OLS residuals of x and y on [1, Z].

    ``Z`` has shape (k, n). Returns ``(r, rank)`` where rank is the numerical
    rank of the centered design (``k`` when full rank).
    """
    xc = x - x.mean()
    yc = y - y.mean()
    k = Z.shape[0]
    rank = 0
    if k > 0:
        M = (Z - Z.mean(axis=1)[:, None]).T
        B = np.stack((xc, yc), axis=1)
        coef, _, rank, _ = np.linalg.lstsq(M, B, rcond=rcond)
        R = B - M @ coef
        xc = R[:, 0]
        yc = R[:, 1]
    sxx = np.dot(xc, xc)
    syy = np.dot(yc, yc)
    den = np.sqrt(sxx * syy)
    if den == 0.0:
        return 0.0, rank
    return float(np.dot(xc, yc) / den), int(rank)


# --------------------------------------------------------------------------
# Linear recursions (structural causal models, diffusion)
# --------------------------------------------------------------------------

def simulate_linear_numpy(lag_mats, mix, noise, x0):
    """Iterate x_t = mix @ (sum_tau lag_mats[tau-1] @ x_{t-tau} + noise_t).

    ``lag_mats`` has shape (L, N, N), ``noise`` (T, N), ``x0`` (L, N) holds the
    initial history (x0[-1] is the most recent). Returns an array (T, N).
    """
    L = lag_mats.shape[0]
    T, N = noise.shape
    hist = np.concatenate((x0, np.empty((T, N))), axis=0)
    for t in range(T):
        acc = noise[t].copy()
        for tau in range(1, L + 1):
            acc += lag_mats[tau - 1] @ hist[L + t - tau]
        hist[L + t] = mix @ acc
    return hist[L:]


if HAS_NUMBA:
    dtw_numba = njit(cache=False, nogil=True)(_dtw_py)

    @njit(nogil=True)
    def dtw_matrix_numba(X, band):
        n = X.shape[0]
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                d = dtw_numba(X[i], X[j], band)
                out[i, j] = d
                out[j, i] = d
        return out

    @njit(nogil=True)
    def parcorr_residual_numba(x, y, Z, rcond):
        n = x.shape[0]
        k = Z.shape[0]
        xm = 0.0
        ym = 0.0
        for t in range(n):
            xm += x[t]
            ym += y[t]
        xm /= n
        ym /= n
        rx = np.empty(n)
        ry = np.empty(n)
        for t in range(n):
            rx[t] = x[t] - xm
            ry[t] = y[t] - ym
        rank = 0
        if k > 0:
            M = np.empty((n, k))
            for c in range(k):
                zm = 0.0
                for t in range(n):
                    zm += Z[c, t]
                zm /= n
                for t in range(n):
                    M[t, c] = Z[c, t] - zm
            B = np.empty((n, 2))
            B[:, 0] = rx
            B[:, 1] = ry
            coef, _, rank, _ = np.linalg.lstsq(M, B, rcond)
            fit = M @ coef
            for t in range(n):
                rx[t] -= fit[t, 0]
                ry[t] -= fit[t, 1]
        sxx = 0.0
        syy = 0.0
        sxy = 0.0
        for t in range(n):
            sxx += rx[t] * rx[t]
            syy += ry[t] * ry[t]
            sxy += rx[t] * ry[t]
        den = np.sqrt(sxx * syy)
        if den == 0.0:
            return 0.0, rank
        return sxy / den, rank

    @njit(nogil=True)
    def simulate_linear_numba(lag_mats, mix, noise, x0):
        L = lag_mats.shape[0]
        T, N = noise.shape
        hist = np.empty((L + T, N))
        hist[:L] = x0
        acc = np.empty(N)
        for t in range(T):
            for a in range(N):
                acc[a] = noise[t, a]
            for tau in range(1, L + 1):
                prev = hist[L + t - tau]
                for a in range(N):
                    s = 0.0
                    for b in range(N):
                        s += lag_mats[tau - 1, a, b] * prev[b]
                    acc[a] += s
            for a in range(N):
                s = 0.0
                for b in range(N):
                    s += mix[a, b] * acc[b]
                hist[L + t, a] = s
        return hist[L:]


def dtw(a, b, band=-1):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if USE_NUMBA:
        return float(dtw_numba(a, b, int(band)))
    return dtw_numpy(a, b, int(band))


def dtw_matrix(X, band=-1):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if USE_NUMBA:
        return dtw_matrix_numba(X, int(band))
    return dtw_matrix_numpy(X, int(band))


def parcorr_residual(x, y, Z, rcond):
    if USE_NUMBA:
        r, rank = parcorr_residual_numba(
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64),
            np.ascontiguousarray(Z, dtype=np.float64),
            float(rcond),
        )
        return float(r), int(rank)
    return parcorr_residual_numpy(x, y, Z, rcond)


def simulate_linear(lag_mats, mix, noise, x0):
    args = [np.ascontiguousarray(v, dtype=np.float64) for v in (lag_mats, mix, noise, x0)]
    if USE_NUMBA:
        return simulate_linear_numba(*args)
    return simulate_linear_numpy(*args)
