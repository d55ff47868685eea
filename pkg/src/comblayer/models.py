"""CombNet and ConvNet for frame-wise note detection.

Both are three layers deep. ConvNet's first layer is a wide causal
convolution over raw audio followed by max-pooling to the frame rate and an
ELU; CombNet swaps that layer for a comb bank. The remaining two layers are
shared: a C->C convolution with ELU and a C->12 convolution producing logits.
"""
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .comb import ScalingConfig
from .layer import CombLayer, EnvelopeConfig, init_params
from .nn import ELU, Conv1d, elu

N_CLASSES = 12
CHANNEL_PLAN = (8, 16, 32, 64, 128)


@dataclass(frozen=True)
class ModelSpec:
    frontend: str = "comb"
    channels: int = 32
    later_kernel: int = 9
    conv_kernel: int = 251
    conv_stride: int = 1
    f_min: float = 200.0
    f_max: float = 500.0
    alpha: float = 0.9
    echo_count: int = 10
    sample_rate: int = 16000
    pool_window: int = 1024
    pool_stride: int = 512

    def __post_init__(self):
        if self.frontend not in ("comb", "conv"):
            raise ValueError("frontend must be 'comb' or 'conv', got %r" % self.frontend)
        if self.channels < 1 or self.later_kernel < 1 or self.conv_kernel < 1:
            raise ValueError("channels and kernel sizes must be positive")
        if self.later_kernel % 2 == 0:
            raise ValueError("later_kernel must be odd for centred padding")
        if self.frontend == "conv" and (self.pool_window % self.conv_stride
                                        or self.pool_stride % self.conv_stride):
            raise ValueError("conv_stride must divide the pooling window and stride")

    @property
    def env(self):
        return EnvelopeConfig(self.pool_window, self.pool_stride)

    @property
    def scaling(self):
        return ScalingConfig(self.f_min, self.f_max)

    @property
    def name(self):
        return "%sNet_%d" % ("Comb" if self.frontend == "comb" else "Conv", self.channels)

    def to_dict(self):
        return asdict(self)


class ConvFrontend:
    """Causal conv over raw audio -> max-pool to frames -> ELU.

    ELU is monotone, so pooling the pre-activation first gives the same
    result while only the pooled argmax positions are kept for backward.
    """

    def __init__(self, channels, kernel_size, stride, env, rng=None, dtype=np.float32):
        rng = np.random.default_rng(rng)
        bound = np.sqrt(1.0 / kernel_size)
        self.stride = stride
        self.window = env.pool_window // stride
        self.hop = env.pool_stride // stride
        self.params = {
            "weight": rng.uniform(-bound, bound, (channels, 1, kernel_size)).astype(dtype),
            "bias": rng.uniform(-bound, bound, channels).astype(dtype),
        }
        self.grads = {k: np.zeros(v.shape) for k, v in self.params.items()}

    def _cols(self, xb):
        L = self.params["weight"].shape[2]
        xp = np.concatenate([np.zeros(L - 1), xb])
        return sliding_window_view(xp, L)[::self.stride]

    def _conv(self, xb, W, bias, chunk=8192):
        # contiguous column blocks let BLAS run at full speed
        cols = self._cols(xb)
        z = np.empty((W.shape[0], cols.shape[0]))
        for s in range(0, cols.shape[0], chunk):
            block = np.ascontiguousarray(cols[s:s + chunk])
            z[:, s:s + chunk] = (block @ W.T + bias).T
        return z

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        W = self.params["weight"][:, 0, :].astype(np.float64)
        bias = self.params["bias"].astype(np.float64)
        B = x.shape[0]
        T_out = self._cols(x[0]).shape[0]
        F = (T_out - self.window) // self.hop + 1
        C = W.shape[0]
        zmax = np.empty((B, C, F))
        idx = np.empty((B, C, F), dtype=np.int64)
        for b in range(B):
            z = self._conv(x[b], W, bias)
            win = sliding_window_view(z, self.window, axis=1)[:, ::self.hop][:, :F]
            arg = win.argmax(axis=2)
            idx[b] = arg + np.arange(F) * self.hop
            zmax[b] = np.take_along_axis(win, arg[..., None], axis=2)[..., 0]
        self._saved = (x, zmax, idx)
        return elu(zmax)

    def backward(self, dy):
        x, zmax, idx = self._saved
        g = dy * np.where(zmax > 0, 1.0, np.exp(np.minimum(zmax, 0.0)))
        C, _, L = self.params["weight"].shape
        dW = np.zeros((C, L))
        for b in range(x.shape[0]):
            cols = self._cols(x[b])
            dW += np.einsum("cf,cfl->cl", g[b], cols[idx[b]])
        self.grads["weight"] = dW[:, None, :]
        self.grads["bias"] = g.sum(axis=(0, 2))
        return None


class TranscriptionNet:
    def __init__(self, spec, seed=0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        C, k = spec.channels, spec.later_kernel
        if spec.frontend == "comb":
            bank = init_params(C, spec.scaling, int(rng.integers(2 ** 31)), alpha=spec.alpha,
                               echo_count=spec.echo_count, sample_rate=spec.sample_rate)
            self.frontend = CombLayer(bank, spec.env)
        else:
            self.frontend = ConvFrontend(C, spec.conv_kernel, spec.conv_stride, spec.env, rng)
        self.layers = [
            ("frontend", self.frontend),
            ("conv2", Conv1d(C, C, k, padding=k // 2, rng=rng)),
            ("elu2", ELU()),
            ("conv3", Conv1d(C, N_CLASSES, k, padding=k // 2, rng=rng)),
        ]

    def forward(self, x):
        h = x
        for _, layer in self.layers:
            h = layer.forward(h)
        return h

    def backward(self, dlogits):
        g = dlogits
        for _, layer in reversed(self.layers):
            g = layer.backward(g)

    def parameters(self):
        return {"%s.%s" % (name, k): v for name, layer in self.layers
                for k, v in layer.params.items()}

    def gradients(self):
        return {"%s.%s" % (name, k): v for name, layer in self.layers
                for k, v in layer.grads.items()}

    def set_parameters(self, tensors):
        for name, layer in self.layers:
            for k in layer.params:
                arr = tensors["%s.%s" % (name, k)]
                if arr.shape != layer.params[k].shape:
                    raise ValueError("shape mismatch for %s.%s" % (name, k))
                layer.params[k] = arr
        if self.spec.frontend == "comb":
            self.frontend.sync()

    def f0(self):
        return self.frontend.f0() if self.spec.frontend == "comb" else None

    def parameter_count(self):
        return int(sum(v.size for v in self.parameters().values()))
