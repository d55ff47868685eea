"""Just enough neural network for the transcription experiments.

Layers keep two dicts, ``params`` and ``grads``, keyed by the same names, and
expose ``forward``/``backward``. Gradients are written by hand per layer;
there is no autograd graph. Parameters are stored as float32 (so checkpoints
round-trip bit for bit) while activations and gradients are float64.
"""
from dataclasses import dataclass, field
import io
import json
import zipfile

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .comb import sigmoid


class ShapeError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_steps: int = 20000
    batch_size: int = 8
    grad_clip: float = 0.5
    seed: int = 0
    eval_interval: int = 200
    patience: int = 10
    crop_seconds: float = 2.0
    log_interval: int = 10
    # a finite loss this many times the first step's loss also counts as divergence
    divergence_factor: float = 100.0

    def __post_init__(self):
        if self.lr < 0 or self.grad_clip <= 0:
            raise ValueError("need lr >= 0 and grad_clip > 0")
        if self.divergence_factor <= 1:
            raise ValueError("divergence_factor must exceed 1")
        if self.max_steps < 0 or self.batch_size < 1:
            raise ValueError("need max_steps >= 0 and batch_size >= 1")


# ---------------------------------------------------------------- layers

def _uniform(rng, bound, shape, dtype):
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d:
    """Strided cross-correlation over (batch, channels, time) with optional zero padding."""

    def __init__(self, c_in, c_out, kernel_size, stride=1, padding=0, rng=None,
                 dtype=np.float32):
        rng = np.random.default_rng(rng)
        bound = np.sqrt(1.0 / (c_in * kernel_size))
        self.stride = int(stride)
        self.padding = (padding, padding) if np.isscalar(padding) else tuple(padding)
        self.params = {
            "weight": _uniform(rng, bound, (c_out, c_in, kernel_size), dtype),
            "bias": _uniform(rng, bound, (c_out,), dtype),
        }
        self.grads = {k: np.zeros(v.shape) for k, v in self.params.items()}
        self._cache = None

    @property
    def kernel_size(self):
        return self.params["weight"].shape[2]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        left, right = self.padding
        if left or right:
            x = np.pad(x, ((0, 0), (0, 0), (left, right)))
        W = self.params["weight"].astype(np.float64)
        L = W.shape[2]
        if x.shape[2] < L:
            raise ShapeError("input length %d (after padding) < kernel length %d"
                             % (x.shape[2], L))
        cols = sliding_window_view(x, L, axis=2)[:, :, ::self.stride, :]
        y = np.tensordot(cols, W, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
        y += self.params["bias"].astype(np.float64)[None, :, None]
        self._cache = (x.shape, cols)
        return y

    def backward(self, dy):
        shape, cols = self._cache
        W = self.params["weight"].astype(np.float64)
        L = W.shape[2]
        self.grads["weight"] = np.tensordot(dy, cols, axes=([0, 2], [0, 2]))
        self.grads["bias"] = dy.sum(axis=(0, 2))
        dcols = np.tensordot(dy, W, axes=([1], [0]))  # (B, T_out, C_in, L)
        dx = np.zeros(shape)
        T_out = dy.shape[2]
        span = self.stride * (T_out - 1) + 1
        for l in range(L):
            dx[:, :, l:l + span:self.stride] += dcols[:, :, :, l].transpose(0, 2, 1)
        left, right = self.padding
        return dx[:, :, left:shape[2] - right]


def conv1d_forward(x, layer):
    """Valid (after the layer's own padding) strided cross-correlation.

    Accepts (C_in, T) or (B, C_in, T).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return layer.forward(x[None])[0]
    return layer.forward(x)


def elu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


class ELU:
    params = {}
    grads = {}

    def forward(self, x):
        self._x = np.asarray(x, dtype=np.float64)
        return elu(self._x)

    def backward(self, dy):
        x = self._x
        return dy * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


class Dense:
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        rng = np.random.default_rng(rng)
        bound = np.sqrt(1.0 / n_in)
        self.params = {"weight": _uniform(rng, bound, (n_out, n_in), dtype),
                       "bias": _uniform(rng, bound, (n_out,), dtype)}
        self.grads = {k: np.zeros(v.shape) for k, v in self.params.items()}

    def forward(self, x):
        self._x = np.asarray(x, dtype=np.float64)
        return self._x @ self.params["weight"].astype(np.float64).T + self.params["bias"]

    def backward(self, dy):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.grads["weight"] = dy2.T @ x2
        self.grads["bias"] = dy2.sum(axis=0)
        return dy @ self.params["weight"].astype(np.float64)


# ---------------------------------------------------------------- loss

def bce_with_logits(logits, targets):
    """Mean binary cross-entropy over all cells and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ShapeError("logits %s vs targets %s" % (z.shape, y.shape))
    # log(1 + e^z) - z*y, written so that exp never sees a large argument
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean()), (sigmoid(z) - y) / z.size


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Returns ``(new_params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in tensor %r" % name)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        out[name] = (p.astype(np.float64) - step).astype(p.dtype)
    return out, state


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))


def clip_global_norm(grads, threshold):
    """Rescale all gradients together so their joint L2 norm is at most ``threshold``."""
    if threshold <= 0:
        raise ValueError("clip threshold must be positive")
    norm = global_norm(grads)
    if norm > threshold:
        scale = threshold / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return dict(grads), norm


# ---------------------------------------------------------------- checkpoint

_MANIFEST = "manifest.json"
_BLOB = "tensors.bin"


def save_checkpoint(path, tensors, metadata=None):
    """Archive tensors as little-endian float32 in one blob plus a JSON manifest."""
    entries = []
    blob = io.BytesIO()
    for name, arr in tensors.items():
        data = np.array(arr, dtype="<f4", order="C")
        entries.append({"name": name, "shape": list(data.shape), "offset": blob.tell(),
                        "nbytes": data.nbytes})
        blob.write(data.tobytes())
    manifest = {"format": "comblayer-tensors/1", "dtype": "<f4", "tensors": entries,
                "metadata": metadata or {}}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo(_MANIFEST, date_time=(1980, 1, 1, 0, 0, 0)),
                    json.dumps(manifest, indent=1, sort_keys=True))
        zf.writestr(zipfile.ZipInfo(_BLOB, date_time=(1980, 1, 1, 0, 0, 0)), blob.getvalue())


def load_checkpoint(path):
    """Return ``(tensors, metadata)`` from an archive written by ``save_checkpoint``."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read(_MANIFEST))
        blob = zf.read(_BLOB)
    tensors = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise ValueError("tensor %r runs past the end of the blob" % e["name"])
        arr = np.frombuffer(blob[e["offset"]:end], dtype="<f4").astype(np.float32)
        tensors[e["name"]] = arr.reshape(e["shape"])
    return tensors, manifest.get("metadata", {})
