"""Time each hot kernel under numba and under its numpy twin.

    python3 benchmarks/bench_kernels.py [--batch 8] [--channels 32] [--seconds 2]

Both flavours are checked for agreement before timing. Shapes follow one
training step of CombNet: a batch of crops through an M-channel bank.
"""
import argparse
import time

import numpy as np

from comblayer import _kernels
from comblayer.comb import ScalingConfig, echo_taps
from comblayer.layer import init_params


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--seconds", type=float, default=2.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    fs, W, S = 16000, 1024, 512
    T = int(args.seconds * fs)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.batch, T))
    bank = init_params(args.channels, ScalingConfig(200.0, 500.0), 0)
    lo, wlo, whi = echo_taps(bank.delays(), bank.alpha, bank.echo_count)
    t = np.arange(1, bank.echo_count + 1)
    coef = np.broadcast_to(t * bank.alpha ** t, lo.shape).copy()
    K = bank.discrete_delays()
    _, idx, _ = _kernels.NUMPY_KERNELS["sparse_bank_pool"](x, lo, wlo, whi, W, S)
    g = rng.standard_normal(idx.shape)

    cases = {
        "iir": (x[0], int(K[0]), bank.alpha),
        "sparse_bank": (x[0], lo, wlo, whi),
        "sparse_bank_pool": (x, lo, wlo, whi, W, S),
        "iir_bank_pool": (x, K, bank.alpha, W, S),
        "delay_grad_at": (x, lo, coef, idx, g),
    }
    print("%-18s %12s %12s %8s" % ("kernel", "numpy (s)", "numba (s)", "speedup"))
    for name, call_args in cases.items():
        a = _kernels.NUMPY_KERNELS[name](*call_args)
        b = _kernels.NUMBA_KERNELS[name](*call_args)
        for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
            np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-9)
        tn = best_of(lambda: _kernels.NUMPY_KERNELS[name](*call_args), args.repeat)
        tb = best_of(lambda: _kernels.NUMBA_KERNELS[name](*call_args), args.repeat)
        print("%-18s %12.5f %12.5f %7.1fx" % (name, tn, tb, tn / tb))


if __name__ == "__main__":
    main()
