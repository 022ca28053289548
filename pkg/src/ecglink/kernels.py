"""Hot numeric kernels with paired numba and pure-numpy implementations.

Every kernel exists twice: a ``_np_*`` pure-numpy version and, when numba
is importable, an ``_nb_*`` @njit version compiled from the same formulas.
The public names are bound once at import time according to the
``ECGLINK_BACKEND`` environment variable:

    ECGLINK_BACKEND=numba   force the jit kernels (error if numba missing)
    ECGLINK_BACKEND=numpy   force the pure-numpy fallback
    unset                   numba when importable, numpy otherwise

Both paths are deterministic run-to-run; they agree to ~1e-12 relative
(summation order differs), so the active backend is part of a run's
reproducibility envelope. ``benchmarks/bench_kernels.py`` compares them.

Matrix products are deliberately not here: numpy's BLAS already owns those.
"""

import math
import os

import numpy as np

from .errors import ConfigError

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715

# Gaussian bumps are truncated at 6 sigma in both backends; beyond that the
# contribution is < 2e-8 of the wave amplitude.
_BUMP_SUPPORT_SIGMAS = 6.0


# ---------------------------------------------------------------------------
# pure-numpy kernels
# ---------------------------------------------------------------------------


def _np_layer_norm_fwd(x, gain, bias, eps):
    """Row-wise layer norm. x (R, d) -> (y, xhat, rstd)."""
    mean = x.mean(axis=1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * rstd
    return gain * xhat + bias, xhat, rstd[:, 0]


def _np_layer_norm_bwd(dy, xhat, gain, rstd):
    """Gradients of row-wise layer norm: (dx, dgain, dbias)."""
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def _np_softmax_fwd(x):
    """Row-wise stable softmax. x (R, d) -> y."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_bwd(dy, y):
    """dx for y = softmax(x) rows: y * (dy - sum(dy*y))."""
    inner = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - inner)


def _np_gelu_fwd(x):
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def _np_gelu_bwd(dy, x):
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x * x * x)
    t = np.tanh(u)
    du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _np_resample_linear(values, ratio, n_out):
    """Linear interpolation at output grid j*ratio over input sample index."""
    pos = np.arange(n_out, dtype=np.float64) * ratio
    idx = np.minimum(pos.astype(np.int64), len(values) - 2)
    idx = np.maximum(idx, 0)
    frac = pos - idx
    lo = values[idx]
    return lo + (values[np.minimum(idx + 1, len(values) - 1)] - lo) * frac


def _np_beat_train(onsets, centers, amps, widths, rate_hz, n):
    """Sum of per-beat Gaussian bumps sampled on an n-point grid."""
    out = np.zeros(n, dtype=np.float64)
    t = np.arange(n, dtype=np.float64) / rate_hz
    for onset in onsets:
        for w in range(len(centers)):
            c = onset + centers[w]
            half = _BUMP_SUPPORT_SIGMAS * widths[w]
            lo = max(0, int(math.ceil((c - half) * rate_hz)))
            hi = min(n, int(math.floor((c + half) * rate_hz)) + 1)
            if hi <= lo:
                continue
            d = t[lo:hi] - c
            out[lo:hi] += amps[w] * np.exp(-0.5 * (d / widths[w]) ** 2)
    return out


# ---------------------------------------------------------------------------
# numba kernels (same formulas, loop form)
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_layer_norm_fwd(x, gain, bias, eps):
        rows, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(rows, dtype=np.float64)
        for i in range(rows):
            m = 0.0
            for j in range(d):
                m += x[i, j]
            m /= d
            v = 0.0
            for j in range(d):
                diff = x[i, j] - m
                v += diff * diff
            v /= d
            r = 1.0 / math.sqrt(v + eps)
            rstd[i] = r
            for j in range(d):
                h = (x[i, j] - m) * r
                xhat[i, j] = h
                y[i, j] = gain[j] * h + bias[j]
        return y, xhat, rstd

    @njit(cache=True)
    def _nb_layer_norm_bwd(dy, xhat, gain, rstd):
        rows, d = dy.shape
        dx = np.empty_like(dy)
        dgain = np.zeros(d, dtype=np.float64)
        dbias = np.zeros(d, dtype=np.float64)
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                g = dy[i, j] * gain[j]
                m1 += g
                m2 += g * xhat[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                g = dy[i, j] * gain[j]
                dx[i, j] = rstd[i] * (g - m1 - xhat[i, j] * m2)
                dgain[j] += dy[i, j] * xhat[i, j]
                dbias[j] += dy[i, j]
        return dx, dgain, dbias

    @njit(cache=True)
    def _nb_softmax_fwd(x):
        rows, d = x.shape
        y = np.empty_like(x)
        for i in range(rows):
            mx = x[i, 0]
            for j in range(1, d):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(d):
                e = math.exp(x[i, j] - mx)
                y[i, j] = e
                s += e
            for j in range(d):
                y[i, j] /= s
        return y

    @njit(cache=True)
    def _nb_softmax_bwd(dy, y):
        rows, d = dy.shape
        dx = np.empty_like(dy)
        for i in range(rows):
            inner = 0.0
            for j in range(d):
                inner += dy[i, j] * y[i, j]
            for j in range(d):
                dx[i, j] = y[i, j] * (dy[i, j] - inner)
        return dx

    @njit(cache=True)
    def _nb_gelu_fwd(x):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            v = flat[i]
            u = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
            out[i] = 0.5 * v * (1.0 + math.tanh(u))
        return out.reshape(x.shape)

    @njit(cache=True)
    def _nb_gelu_bwd(dy, x):
        flat_x = x.ravel()
        flat_dy = dy.ravel()
        out = np.empty_like(flat_x)
        for i in range(flat_x.size):
            v = flat_x[i]
            u = _SQRT_2_OVER_PI * (v + _GELU_C * v * v * v)
            t = math.tanh(u)
            du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * v * v)
            out[i] = flat_dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
        return out.reshape(x.shape)

    @njit(cache=True)
    def _nb_resample_linear(values, ratio, n_out):
        n_in = len(values)
        out = np.empty(n_out, dtype=np.float64)
        for j in range(n_out):
            pos = j * ratio
            idx = int(pos)
            if idx > n_in - 2:
                idx = n_in - 2
            if idx < 0:
                idx = 0
            frac = pos - idx
            nxt = idx + 1
            if nxt > n_in - 1:
                nxt = n_in - 1
            out[j] = values[idx] + (values[nxt] - values[idx]) * frac
        return out

    @njit(cache=True)
    def _nb_beat_train(onsets, centers, amps, widths, rate_hz, n):
        out = np.zeros(n, dtype=np.float64)
        for b in range(len(onsets)):
            for w in range(len(centers)):
                c = onsets[b] + centers[w]
                half = _BUMP_SUPPORT_SIGMAS * widths[w]
                lo = int(math.ceil((c - half) * rate_hz))
                if lo < 0:
                    lo = 0
                hi = int(math.floor((c + half) * rate_hz)) + 1
                if hi > n:
                    hi = n
                inv_w = 1.0 / widths[w]
                for i in range(lo, hi):
                    d = (i / rate_hz - c) * inv_w
                    out[i] += amps[w] * math.exp(-0.5 * d * d)
        return out


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------


def _resolve_backend():
    flag = os.environ.get("ECGLINK_BACKEND", "").strip().lower()
    if flag not in ("", "numba", "numpy"):
        raise ConfigError(
            f"ECGLINK_BACKEND must be 'numba' or 'numpy', got {flag!r}"
        )
    if flag == "numba" and not HAS_NUMBA:
        raise ConfigError("ECGLINK_BACKEND=numba but numba is not importable")
    if flag == "":
        return "numba" if HAS_NUMBA else "numpy"
    return flag


BACKEND = _resolve_backend()

if BACKEND == "numba":
    layer_norm_fwd = _nb_layer_norm_fwd
    layer_norm_bwd = _nb_layer_norm_bwd
    softmax_fwd = _nb_softmax_fwd
    softmax_bwd = _nb_softmax_bwd
    gelu_fwd = _nb_gelu_fwd
    gelu_bwd = _nb_gelu_bwd
    resample_linear = _nb_resample_linear
    beat_train = _nb_beat_train
else:
    layer_norm_fwd = _np_layer_norm_fwd
    layer_norm_bwd = _np_layer_norm_bwd
    softmax_fwd = _np_softmax_fwd
    softmax_bwd = _np_softmax_bwd
    gelu_fwd = _np_gelu_fwd
    gelu_bwd = _np_gelu_bwd
    resample_linear = _np_resample_linear
    beat_train = _np_beat_train


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND
