"""The combolutional layer: a learnable comb filter bank plus envelope detector.

Each channel owns exactly one free parameter ``w``. Its fundamental is
``scale_to_f0(w)``, its delay ``sample_rate / f0``. The filter output is
rectified and max-pooled; pooling is fused with filtering so training never
holds the full channels x samples response.
"""
from dataclasses import dataclass, replace

import numpy as np
import yaml

from . import _kernels
from .comb import (CombConfigError, ScalingConfig, continuous_delay, discretize_for_inference,
                   echo_taps, scale_to_f0, scale_to_f0_gradient, _check_alpha)

TRAINING = "training"
INFERENCE = "inference"


@dataclass
class CombBankParams:
    w: np.ndarray
    scaling: ScalingConfig
    alpha: float = 0.9
    echo_count: int = 10
    sample_rate: int = 16000

    def __post_init__(self):
        self.w = np.atleast_1d(np.asarray(self.w))
        if self.w.ndim != 1 or self.w.shape[0] < 1:
            raise CombConfigError("need at least one channel")
        _check_alpha(self.alpha)
        if self.echo_count < 1:
            raise CombConfigError("echo_count must be >= 1")

    @property
    def channels(self):
        return self.w.shape[0]

    def f0(self):
        return scale_to_f0(self.w, self.scaling)

    def delays(self):
        return continuous_delay(self.f0(), self.sample_rate)

    def discrete_delays(self):
        return np.array([discretize_for_inference(k) for k in np.atleast_1d(self.delays())],
                        dtype=np.int64)


@dataclass(frozen=True)
class EnvelopeConfig:
    pool_window: int = 1024
    pool_stride: int = 512

    def __post_init__(self):
        if self.pool_window < 1 or self.pool_stride < 1:
            raise CombConfigError("pool window and stride must be positive")
        if self.pool_stride > self.pool_window:
            raise CombConfigError("pool_stride > pool_window would skip samples")

    def n_frames(self, n_samples):
        return _kernels.n_frames(n_samples, self.pool_window, self.pool_stride)


@dataclass
class FeatureMap:
    values: np.ndarray
    frame_rate: float


@dataclass
class LayerGradients:
    d_w: np.ndarray
    argmax_index_map: np.ndarray


@dataclass
class SavedActivations:
    x: np.ndarray
    params: CombBankParams
    mode: str
    lo: np.ndarray
    coef: np.ndarray
    argmax: np.ndarray
    peak: np.ndarray
    batched: bool


def init_params(M, scaling, seed, alpha=0.9, echo_count=10, sample_rate=16000,
                dtype=np.float32):
    if M < 1:
        raise CombConfigError("a comb bank needs M >= 1 channels, got %d" % M)
    rng = np.random.default_rng(seed)
    w = rng.uniform(-2.0, 2.0, size=M).astype(dtype)
    return CombBankParams(w=w, scaling=scaling, alpha=alpha, echo_count=echo_count,
                          sample_rate=sample_rate)


def _prepare(x, params, env):
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    x = np.ascontiguousarray(np.atleast_2d(x))
    if x.ndim != 2:
        raise ValueError("expected a signal (T,) or a batch (B, T)")
    if env.n_frames(x.shape[1]) < 1:
        raise ValueError("signal of %d samples is shorter than the pooling window (%d)"
                         % (x.shape[1], env.pool_window))
    params.scaling.validate()
    delays = np.atleast_1d(params.delays())
    bad = np.flatnonzero(delays < 1.0)
    if bad.size:
        m = int(bad[0])
        raise CombConfigError("channel %d has delay %.4g < 1 sample (f0=%.4g Hz)"
                              % (m, delays[m], np.atleast_1d(params.f0())[m]))
    return x, batched, delays


def comb_layer_forward(x, params, env=EnvelopeConfig(), mode=TRAINING):
    """Filter, rectify and max-pool. Returns ``(FeatureMap, SavedActivations)``.

    ``x`` may be one signal (T,) giving an (M, T') map or a batch (B, T)
    giving (B, M, T').
    """
    x, batched, delays = _prepare(x, params, env)
    E = params.echo_count
    if mode == TRAINING:
        lo, wlo, whi = echo_taps(delays, params.alpha, E)
        val, idx, peak = _kernels.sparse_bank_pool(x, lo, wlo, whi, env.pool_window,
                                                   env.pool_stride)
        t = np.arange(1, E + 1)
        coef = np.broadcast_to(t * params.alpha ** t, lo.shape).copy()
    elif mode == INFERENCE:
        K = params.discrete_delays()
        val, idx, peak = _kernels.iir_bank_pool(x, K, float(params.alpha), env.pool_window,
                                                env.pool_stride)
        lo = coef = None
    else:
        raise ValueError("mode must be %r or %r" % (TRAINING, INFERENCE))
    saved = SavedActivations(x=x, params=params, mode=mode, lo=lo, coef=coef, argmax=idx,
                             peak=peak, batched=batched)
    values = val if batched else val[0]
    return FeatureMap(values=values, frame_rate=params.sample_rate / env.pool_stride), saved


def comb_layer_forward_reference(x, params, env=EnvelopeConfig()):
    """Unfused training-mode forward: full response, then abs, then pool."""
    x, batched, delays = _prepare(x, params, env)
    lo, wlo, whi = echo_taps(delays, params.alpha, params.echo_count)
    F = env.n_frames(x.shape[1])
    out = np.empty((x.shape[0], params.channels, F))
    for b in range(x.shape[0]):
        y = np.abs(_kernels.NUMPY_KERNELS["sparse_bank"](x[b], lo, wlo, whi))
        for f in range(F):
            s = f * env.pool_stride
            out[b, :, f] = y[:, s:s + env.pool_window].max(axis=1)
    return out if batched else out[0]


def comb_layer_backward(upstream, saved):
    """Gradient of the loss with respect to each channel's free parameter."""
    if saved.mode != TRAINING:
        raise ValueError("backward needs a training-mode forward pass")
    p = saved.params
    upstream = np.asarray(upstream, dtype=np.float64)
    if not saved.batched:
        upstream = upstream[None]
    if upstream.shape != saved.argmax.shape:
        raise ValueError("upstream shape %s does not match feature map %s"
                         % (upstream.shape, saved.argmax.shape))
    # d|y|/dy at the pooled argmax; sign(0) = 0
    g = np.ascontiguousarray(upstream * np.sign(saved.peak))
    d_delay = _kernels.delay_grad_at(saved.x, saved.lo, saved.coef, saved.argmax, g)
    f0 = np.atleast_1d(p.f0())
    d_f0 = d_delay * (-p.sample_rate / f0 ** 2)
    d_w = d_f0 * scale_to_f0_gradient(np.asarray(p.w, dtype=np.float64), p.scaling)
    idx = saved.argmax if saved.batched else saved.argmax[0]
    return LayerGradients(d_w=d_w, argmax_index_map=idx)


class CombLayer:
    """Network-layer wrapper holding ``params`` / ``grads`` dicts for the optimizer."""

    def __init__(self, params, env=EnvelopeConfig(), mode=TRAINING):
        self.bank = params
        self.env = env
        self.mode = mode
        self.params = {"w": params.w}
        self.grads = {"w": np.zeros(params.channels)}
        self._saved = None

    def sync(self):
        # optimizer replaces arrays in self.params; keep the bank pointing at them
        self.bank = replace(self.bank, w=self.params["w"])

    def forward(self, x):
        self.sync()
        fmap, self._saved = comb_layer_forward(x, self.bank, self.env, self.mode)
        return fmap.values

    def backward(self, dy):
        self.grads["w"] = comb_layer_backward(dy, self._saved).d_w
        return None

    def f0(self):
        self.sync()
        return np.atleast_1d(self.bank.f0())


def save_comb_params(path, params):
    """Write a human-readable checkpoint of a comb bank (w at full precision)."""
    w = [float(v) for v in np.asarray(params.w, dtype=np.float64)]
    doc = {
        "M": int(params.channels),
        "f_min_hz": float(params.scaling.f_min),
        "f_max_hz": float(params.scaling.f_max),
        "alpha": float(params.alpha),
        "echo_count": int(params.echo_count),
        "sample_rate_hz": int(params.sample_rate),
        "w_dtype": str(np.asarray(params.w).dtype),
        "w": w,
        # derived, ignored on load
        "f0_hz": [float(v) for v in np.atleast_1d(params.f0())],
    }
    with open(path, "w") as fh:
        fh.write("# comb bank parameters; f0_hz is derived and regenerated on load\n")
        yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None, width=100)


def load_comb_params(path):
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    try:
        w = np.asarray(doc["w"], dtype=np.float64).astype(doc.get("w_dtype", "float64"))
        if w.shape[0] != int(doc["M"]):
            raise ValueError("M=%s but %d w values" % (doc["M"], w.shape[0]))
        return CombBankParams(
            w=w, scaling=ScalingConfig(float(doc["f_min_hz"]), float(doc["f_max_hz"])),
            alpha=float(doc["alpha"]), echo_count=int(doc["echo_count"]),
            sample_rate=int(doc["sample_rate_hz"]))
    except (KeyError, TypeError) as exc:
        raise ValueError("malformed comb checkpoint %s: %s" % (path, exc)) from exc
