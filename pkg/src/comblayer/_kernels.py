"""Hot inner loops of the comb layer, each in a numba and a numpy flavour.

All kernels take float64 signals and accumulate in float64. Offsets are
given per (channel, echo) as the floor delay ``lo``; the ceil tap always sits
at ``lo + 1`` and carries weight ``whi`` (zero when the delay is integral).
Reads before the start of the signal are zero.

The public names at the bottom are bound to one flavour according to
``_accel.USE_NUMBA``; both flavours stay importable for tests and benchmarks.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit, prange


def n_frames(n_samples, window, stride):
    return (n_samples - window) // stride + 1


# ---------------------------------------------------------------- numba

@njit(cache=True)
def _iir_nb(x, K, alpha):
    y = np.empty(x.shape[0])
    for n in range(x.shape[0]):
        if n >= K:
            y[n] = x[n] + alpha * y[n - K]
        else:
            y[n] = x[n]
    return y


@njit(cache=True)
def _sparse_row_nb(x, lo, wlo, whi, y):
    # y <- x + sum of scaled slices, one channel
    T = x.shape[0]
    for n in range(T):
        y[n] = x[n]
    for e in range(lo.shape[0]):
        o = lo[e]
        a = wlo[e]
        for n in range(o, T):
            y[n] += a * x[n - o]
        b = whi[e]
        if b != 0.0:
            for n in range(o + 1, T):
                y[n] += b * x[n - o - 1]


@njit(cache=True)
def _pool_row_nb(y, window, stride, val, idx, peak):
    for f in range(val.shape[0]):
        start = f * stride
        best = -1.0
        arg = start
        for n in range(start, start + window):
            v = abs(y[n])
            if v > best:
                best = v
                arg = n
        val[f] = best
        idx[f] = arg
        peak[f] = y[arg]


@njit(cache=True, parallel=True)
def _sparse_bank_nb(x, lo, wlo, whi):
    M = lo.shape[0]
    out = np.empty((M, x.shape[0]))
    for m in prange(M):
        _sparse_row_nb(x, lo[m], wlo[m], whi[m], out[m])
    return out


@njit(cache=True, parallel=True)
def _sparse_bank_pool_nb(x, lo, wlo, whi, window, stride):
    B, T = x.shape
    M = lo.shape[0]
    F = (T - window) // stride + 1
    val = np.empty((B, M, F))
    idx = np.empty((B, M, F), dtype=np.int64)
    peak = np.empty((B, M, F))
    for j in prange(B * M):
        b = j // M
        m = j - b * M
        # one scratch row per task, never the full B x M x T response
        y = np.empty(T)
        _sparse_row_nb(x[b], lo[m], wlo[m], whi[m], y)
        _pool_row_nb(y, window, stride, val[b, m], idx[b, m], peak[b, m])
    return val, idx, peak


@njit(cache=True, parallel=True)
def _iir_bank_pool_nb(x, K, alpha, window, stride):
    B, T = x.shape
    M = K.shape[0]
    F = (T - window) // stride + 1
    val = np.empty((B, M, F))
    idx = np.empty((B, M, F), dtype=np.int64)
    peak = np.empty((B, M, F))
    for j in prange(B * M):
        b = j // M
        m = j - b * M
        y = _iir_nb(x[b], K[m], alpha)
        _pool_row_nb(y, window, stride, val[b, m], idx[b, m], peak[b, m])
    return val, idx, peak


@njit(cache=True, parallel=True)
def _delay_grad_at_nb(x, lo, coef, idx, g):
    B = x.shape[0]
    M, E = lo.shape
    F = idx.shape[2]
    out = np.zeros(M)
    for m in prange(M):
        acc = 0.0
        for b in range(B):
            for f in range(F):
                gv = g[b, m, f]
                if gv == 0.0:
                    continue
                n = idx[b, m, f]
                d = 0.0
                for e in range(E):
                    o = lo[m, e]
                    x_lo = x[b, n - o] if n - o >= 0 else 0.0
                    x_hi = x[b, n - o - 1] if n - o - 1 >= 0 else 0.0
                    d += coef[m, e] * (x_hi - x_lo)
                acc += gv * d
        out[m] = acc
    return out


# ---------------------------------------------------------------- numpy

def _iir_np(x, K, alpha):
    # the recursion only reaches back K samples, so a K-block is vectorizable
    y = np.array(x, dtype=np.float64)
    T = y.shape[0]
    for start in range(K, T, K):
        stop = min(start + K, T)
        y[start:stop] += alpha * y[start - K:stop - K]
    return y


def _sparse_rows_np(x, lo, wlo, whi):
    # x: (B, T); lo/wlo/whi: (E,) for one channel -> (B, T)
    T = x.shape[-1]
    y = x.copy()
    for o, a, b in zip(lo, wlo, whi):
        if o < T:
            y[..., o:] += a * x[..., :T - o]
        if b != 0.0 and o + 1 < T:
            y[..., o + 1:] += b * x[..., :T - o - 1]
    return y


def _pool_np(y, window, stride):
    T = y.shape[-1]
    F = n_frames(T, window, stride)
    win = sliding_window_view(np.abs(y), window, axis=-1)[..., ::stride, :][..., :F, :]
    arg = np.argmax(win, axis=-1)
    val = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    idx = arg + np.arange(F) * stride
    peak = np.take_along_axis(y, idx, axis=-1)
    return val, idx.astype(np.int64), peak


def _sparse_bank_np(x, lo, wlo, whi):
    return np.stack([_sparse_rows_np(x, lo[m], wlo[m], whi[m]) for m in range(lo.shape[0])])


def _sparse_bank_pool_np(x, lo, wlo, whi, window, stride):
    outs = [_pool_np(_sparse_rows_np(x, lo[m], wlo[m], whi[m]), window, stride)
            for m in range(lo.shape[0])]
    return tuple(np.stack([o[i] for o in outs], axis=1) for i in range(3))


def _iir_bank_pool_np(x, K, alpha, window, stride):
    outs = []
    for k in K:
        y = np.stack([_iir_np(row, int(k), alpha) for row in x])
        outs.append(_pool_np(y, window, stride))
    return tuple(np.stack([o[i] for o in outs], axis=1) for i in range(3))


def _delay_grad_at_np(x, lo, coef, idx, g):
    B, T = x.shape
    M, E = lo.shape
    xp = np.concatenate([np.zeros((B, int(lo.max()) + 1)), x], axis=1)
    pad = xp.shape[1] - T
    rows = np.arange(B)[:, None]
    out = np.zeros(M)
    for m in range(M):
        n = idx[:, m, :] + pad
        d = np.zeros(n.shape)
        for e in range(E):
            o = lo[m, e]
            d += coef[m, e] * (xp[rows, n - o - 1] - xp[rows, n - o])
        out[m] = np.sum(g[:, m, :] * d)
    return out


# ---------------------------------------------------------------- dispatch

if USE_NUMBA:
    iir = _iir_nb
    sparse_bank = _sparse_bank_nb
    sparse_bank_pool = _sparse_bank_pool_nb
    iir_bank_pool = _iir_bank_pool_nb
    delay_grad_at = _delay_grad_at_nb
else:
    iir = _iir_np
    sparse_bank = _sparse_bank_np
    sparse_bank_pool = _sparse_bank_pool_np
    iir_bank_pool = _iir_bank_pool_np
    delay_grad_at = _delay_grad_at_np

NUMBA_KERNELS = dict(iir=_iir_nb, sparse_bank=_sparse_bank_nb,
                     sparse_bank_pool=_sparse_bank_pool_nb,
                     iir_bank_pool=_iir_bank_pool_nb, delay_grad_at=_delay_grad_at_nb)
NUMPY_KERNELS = dict(iir=_iir_np, sparse_bank=_sparse_bank_np,
                     sparse_bank_pool=_sparse_bank_pool_np,
                     iir_bank_pool=_iir_bank_pool_np, delay_grad_at=_delay_grad_at_np)
