"""Feedback comb filter maths.

Four ways of evaluating the same filter live here:

* ``iir_comb``: the recursion ``y[n] = x[n] + alpha * y[n - K]`` (inference).
* ``fir_comb_dense``: convolution with the truncated impulse response.
* ``interp_comb_wholekernel``: linear blend of two whole integer-delay kernels.
* ``sparse_comb``: sum of scaled slices with a fractional delay per echo
  (the path used for training).

Every FIR path is causal, left zero-padded and returns as many samples as it
is given. Computation is done in float64.
"""
from dataclasses import dataclass
import math

import numpy as np

from . import _kernels


class CombConfigError(ValueError):
    """Raised for filter settings outside the stable / representable range."""


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise ValueError("AudioSignal is mono; got shape %s" % (samples.shape,))
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioSignal samples contain NaN or Inf")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class ScalingConfig:
    f_min: float
    f_max: float

    def validate(self, sample_rate=None):
        if not 0 < self.f_min < self.f_max:
            raise CombConfigError("need 0 < f_min < f_max, got %r" % (self,))
        if sample_rate is not None and self.f_max > sample_rate / 2:
            raise CombConfigError(
                "f_max=%g Hz exceeds Nyquist for sample_rate=%d" % (self.f_max, sample_rate))
        return self


@dataclass(frozen=True)
class CombChannelConfig:
    f0: float
    alpha: float = 0.9
    echo_count: int = 10
    sample_rate: int = 16000

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.echo_count < 1:
            raise CombConfigError("echo_count must be >= 1")
        if not 0 < self.f0 <= self.sample_rate / 2:
            raise CombConfigError("f0 must lie in (0, sample_rate/2], got %g" % self.f0)

    def delay(self):
        return continuous_delay(self.f0, self.sample_rate)


@dataclass(frozen=True)
class FirKernel:
    """Sparse taps of the truncated comb impulse response, passthrough first."""
    offsets: np.ndarray
    weights: np.ndarray

    def dense(self):
        h = np.zeros(int(self.offsets[-1]) + 1)
        np.add.at(h, self.offsets, self.weights)
        return h

    @property
    def taps(self):
        return list(zip(self.offsets.tolist(), self.weights.tolist()))


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise CombConfigError("feedback gain alpha must satisfy 0 < alpha < 1, got %r" % alpha)


def _signal(x):
    if isinstance(x, AudioSignal):
        x = x.samples
    return np.asarray(x, dtype=np.float64)


def sigmoid(w):
    w = np.asarray(w, dtype=np.float64)
    # split on sign so neither branch overflows
    e = np.exp(-np.abs(w))
    return np.where(w >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def scale_to_f0(w, cfg):
    """Map free parameters to frequencies in (f_min, f_max), geometrically."""
    return cfg.f_min * (cfg.f_max / cfg.f_min) ** sigmoid(w)


def scale_to_f0_gradient(w, cfg):
    s = sigmoid(w)
    return scale_to_f0(w, cfg) * math.log(cfg.f_max / cfg.f_min) * s * (1.0 - s)


def f0_to_w(f0, cfg):
    """Inverse of ``scale_to_f0`` for f0 strictly inside (f_min, f_max)."""
    s = np.log(np.asarray(f0, dtype=np.float64) / cfg.f_min) / math.log(cfg.f_max / cfg.f_min)
    if np.any((s <= 0) | (s >= 1)):
        raise CombConfigError("f0 must lie strictly inside (f_min, f_max)")
    return np.log(s) - np.log1p(-s)


def continuous_delay(f0, sample_rate):
    f0 = np.asarray(f0, dtype=np.float64)
    if np.any(f0 <= 0):
        raise CombConfigError("f0 must be positive to define a delay")
    out = sample_rate / f0
    return float(out) if out.ndim == 0 else out


def magnitude_response(cfg, f):
    a = cfg.alpha
    f = np.asarray(f, dtype=np.float64)
    out = 1.0 / np.sqrt(1.0 + a * a - 2.0 * a * np.cos(2.0 * np.pi * f / cfg.f0))
    return float(out) if out.ndim == 0 else out


def iir_comb(x, K, alpha):
    """Sequential feedback comb with zero initial conditions."""
    _check_alpha(alpha)
    if int(K) != K or K < 1:
        raise CombConfigError("integer delay K must be >= 1, got %r" % (K,))
    return _kernels.iir(np.ascontiguousarray(_signal(x)), int(K), float(alpha))


def build_fir_kernel(K, alpha, echo_count):
    _check_alpha(alpha)
    if K < 1 or echo_count < 1:
        raise CombConfigError("need K >= 1 and echo_count >= 1")
    t = np.arange(echo_count + 1)
    return FirKernel(offsets=t * int(K), weights=float(alpha) ** t)


def fir_comb_dense(x, kernel):
    x = _signal(x)
    h = kernel.dense()
    return np.convolve(x, h)[: x.shape[0]]


def interp_comb_wholekernel(x, delay, alpha, echo_count):
    """Blend of the floor- and ceil-delay FIR combs by the delay's fraction.

    For two or more echoes this does not match ``sparse_comb``: here the
    t-th echo sits at ``t*floor(delay)`` / ``t*ceil(delay)`` rather than at
    ``floor(t*delay)`` / ``ceil(t*delay)``.
    """
    if delay < 1:
        raise CombConfigError("delay must be >= 1 sample, got %g" % delay)
    lo = math.floor(delay)
    beta = delay - lo
    y = (1.0 - beta) * fir_comb_dense(x, build_fir_kernel(lo, alpha, echo_count))
    if beta > 0:
        y += beta * fir_comb_dense(x, build_fir_kernel(lo + 1, alpha, echo_count))
    return y


def echo_taps(delay, alpha, echo_count):
    """Per-echo floor offsets and the weights on the floor and floor+1 taps.

    Accepts a scalar or an array of delays (one per channel); returns arrays
    shaped ``(..., echo_count)``.
    """
    delay = np.asarray(delay, dtype=np.float64)
    t = np.arange(1, echo_count + 1, dtype=np.float64)
    pos = delay[..., None] * t
    lo = np.floor(pos)
    beta = pos - lo
    gain = float(alpha) ** t
    return lo.astype(np.int64), (1.0 - beta) * gain, beta * gain


def sparse_comb(x, delay, alpha, echo_count):
    """Fractional-delay truncated comb as a sum of shifted, scaled slices."""
    _check_alpha(alpha)
    if delay < 1:
        raise CombConfigError("delay must be >= 1 sample, got %g" % delay)
    lo, wlo, whi = echo_taps([delay], alpha, echo_count)
    x = np.ascontiguousarray(_signal(x))
    return _kernels.sparse_bank(x, lo, wlo, whi)[0]


def sparse_comb_grad_delay(x, delay, alpha, echo_count, upstream):
    """d(loss)/d(delay) for ``sparse_comb`` given d(loss)/dy.

    Uses the right-sided derivative where t*delay is integral: the ceil tap is
    taken to be floor+1 even when the fraction is zero.
    """
    x = _signal(x)
    upstream = np.asarray(upstream, dtype=np.float64)
    T = x.shape[0]
    total = 0.0
    for t in range(1, echo_count + 1):
        lo = int(math.floor(t * delay))
        coef = t * alpha ** t
        # sum_n u[n] * (x[n-lo-1] - x[n-lo])
        if lo + 1 < T:
            total += coef * np.dot(upstream[lo + 1:], x[: T - lo - 1])
        if lo < T:
            total -= coef * np.dot(upstream[lo:], x[: T - lo])
    return float(total)


def discretize_for_inference(delay):
    """Nearest integer delay (ties to even), at least one sample."""
    return max(1, int(round(float(delay))))


def measured_gain(f0, alpha, freq, sample_rate, duration=1.0, settle=None):
    """Empirical gain of the recursive comb for a unit sinusoid at ``freq``.

    The delay is ``f0`` discretized to whole samples. RMS is taken over the
    tail after the filter has rung up (by default, once ``alpha**t`` < 1e-6).
    """
    K = discretize_for_inference(continuous_delay(f0, sample_rate))
    n = int(duration * sample_rate)
    if settle is None:
        settle = K * int(math.ceil(math.log(1e-6) / math.log(alpha)))
    if settle >= n:
        n = settle + sample_rate
    t = np.arange(n) / sample_rate
    y = iir_comb(np.sin(2.0 * np.pi * freq * t), K, alpha)
    tail = y[settle:]
    # whole number of cycles keeps the RMS unbiased; fall back to the full tail
    period = sample_rate / freq if freq > 0 else 0
    if period > 0:
        cycles = int(len(tail) // period)
        if cycles > 0:
            tail = tail[: int(round(cycles * period))]
    return float(np.sqrt(np.mean(tail ** 2)) * math.sqrt(2.0))
