import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from comblayer.comb import build_fir_kernel, fir_comb_dense
from comblayer.nn import (ELU, AdamState, Conv1d, Dense, ShapeError, TrainConfig, adam_step,
                          bce_with_logits, clip_global_norm, conv1d_forward, elu, global_norm,
                          load_checkpoint, save_checkpoint)


def central_diff(f, arr, h=1e-6):
    g = np.zeros(arr.shape)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


class TestConv1d:
    def test_identity(self, rng):
        layer = Conv1d(1, 1, 1, dtype=np.float64)
        layer.params["weight"][:] = 1.0
        layer.params["bias"][:] = 0.0
        x = rng.standard_normal((1, 50))
        np.testing.assert_array_equal(conv1d_forward(x, layer), x)

    def test_three_tap_on_ramp(self):
        layer = Conv1d(1, 1, 3, dtype=np.float64)
        layer.params["weight"][0, 0] = [1.0, -2.0, 3.0]
        layer.params["bias"][:] = 0.5
        x = np.arange(6, dtype=float)[None]
        # y[n] = x[n] - 2x[n+1] + 3x[n+2] + 0.5 = 2n + 4.5 on a unit ramp
        np.testing.assert_allclose(conv1d_forward(x, layer)[0], [4.5, 6.5, 8.5, 10.5])

    @pytest.mark.parametrize("T,L,s", [(20, 3, 2), (21, 3, 2), (100, 7, 3), (8, 8, 5)])
    def test_output_length(self, T, L, s):
        layer = Conv1d(2, 3, L, stride=s)
        assert conv1d_forward(np.zeros((2, T)), layer).shape == (3, (T - L) // s + 1)

    def test_too_short(self):
        with pytest.raises(ShapeError):
            conv1d_forward(np.zeros((1, 4)), Conv1d(1, 1, 5))

    def test_comb_kernel_matches_fir_comb(self, rng):
        kern = build_fir_kernel(13, 0.9, 6)
        dense = kern.dense()
        layer = Conv1d(1, 1, dense.size, padding=(dense.size - 1, 0), dtype=np.float64)
        layer.params["weight"][0, 0] = dense[::-1]
        layer.params["bias"][:] = 0.0
        x = rng.standard_normal(400)
        np.testing.assert_allclose(conv1d_forward(x[None], layer)[0], fir_comb_dense(x, kern),
                                   rtol=0, atol=1e-12)

    def test_init_bound(self):
        layer = Conv1d(4, 6, 9, rng=0)
        assert np.max(np.abs(layer.params["weight"])) <= np.sqrt(1 / 36)
        assert layer.params["weight"].dtype == np.float32

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, (2, 0))])
    def test_backward_matches_finite_differences(self, rng, stride, padding):
        layer = Conv1d(3, 2, 4, stride=stride, padding=padding, rng=1, dtype=np.float64)
        x = rng.standard_normal((2, 3, 17))
        up = rng.standard_normal(layer.forward(x).shape)
        loss = lambda: float(np.sum(up * layer.forward(x)))
        layer.forward(x)
        dx = layer.backward(up)
        analytic = {k: v.copy() for k, v in layer.grads.items()}
        for name in ("weight", "bias"):
            assert rel_err(analytic[name], central_diff(loss, layer.params[name])) < 1e-4
        assert rel_err(dx, central_diff(loss, x)) < 1e-4


class TestElu:
    def test_values(self):
        np.testing.assert_allclose(elu(np.array([0.0, 1.0, -1.0])), [0.0, 1.0, np.exp(-1) - 1])
        assert abs(float(elu(-1.0)) + 0.63212) < 1e-5

    def test_large_negative_is_finite(self):
        assert float(elu(-1e4)) == -1.0

    def test_backward(self, rng):
        x = rng.standard_normal(30)
        x[np.abs(x) < 1e-3] = 0.5
        act = ELU()
        up = rng.standard_normal(30)
        act.forward(x)
        dx = act.backward(up)
        fd = central_diff(lambda: float(np.sum(up * elu(x))), x)
        assert rel_err(dx, fd) < 1e-4


class TestDense:
    def test_backward(self, rng):
        layer = Dense(5, 3, rng=2, dtype=np.float64)
        x = rng.standard_normal((4, 5))
        up = rng.standard_normal((4, 3))
        loss = lambda: float(np.sum(up * layer.forward(x)))
        layer.forward(x)
        dx = layer.backward(up)
        g = {k: v.copy() for k, v in layer.grads.items()}
        for name in ("weight", "bias"):
            assert rel_err(g[name], central_diff(loss, layer.params[name])) < 1e-4
        assert rel_err(dx, central_diff(loss, x)) < 1e-4


class TestBce:
    def test_log_two(self):
        loss, _ = bce_with_logits(np.zeros((1, 1)), np.ones((1, 1)))
        assert abs(loss - np.log(2)) < 1e-12

    def test_stable_at_extremes(self):
        z = np.array([[50.0, -50.0, 800.0, -800.0]])
        loss, grad = bce_with_logits(z, np.array([[1.0, 0.0, 1.0, 0.0]]))
        assert loss < 1e-20 and np.all(np.isfinite(grad))
        loss, _ = bce_with_logits(np.array([[800.0]]), np.array([[0.0]]))
        assert loss == pytest.approx(800.0)

    def test_gradient(self, rng):
        z = rng.standard_normal((6, 12)) * 3
        y = (rng.random((6, 12)) < 0.3).astype(float)
        _, g = bce_with_logits(z, y)
        fd = central_diff(lambda: bce_with_logits(z, y)[0], z)
        assert rel_err(g, fd) < 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_with_logits(np.zeros((2, 3)), np.zeros((3, 2)))


class TestAdam:
    def test_zero_gradient(self):
        p = {"a": np.array([1.0, 2.0], dtype=np.float32)}
        new, st_ = adam_step(p, {"a": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(new["a"], p["a"])
        assert st_.step == 1

    def test_first_step(self):
        new, _ = adam_step({"x": np.array(0.0)}, {"x": np.array(1.0)}, AdamState(lr=0.1))
        assert float(new["x"]) == pytest.approx(-0.1, abs=1e-6)

    def test_keeps_dtype(self):
        new, _ = adam_step({"x": np.ones(3, np.float32)}, {"x": np.ones(3)}, AdamState())
        assert new["x"].dtype == np.float32

    def test_nan_names_tensor(self):
        with pytest.raises(FloatingPointError, match="conv2.weight"):
            adam_step({"conv2.weight": np.ones(2)}, {"conv2.weight": np.array([1.0, np.nan])},
                      AdamState())

    def test_deterministic(self, rng):
        grads = [rng.standard_normal(4) for _ in range(20)]

        def run():
            p, s = {"w": np.zeros(4, np.float32)}, AdamState(lr=0.01)
            for g in grads:
                p, s = adam_step(p, {"w": g}, s)
            return p["w"]

        np.testing.assert_array_equal(run(), run())

    def test_minimizes_quadratic(self):
        p, s = {"x": np.array([3.0, -2.0])}, AdamState(lr=0.05)
        for _ in range(500):
            p, s = adam_step(p, {"x": 2 * p["x"]}, s)
        assert np.max(np.abs(p["x"])) < 0.05


class TestClip:
    def test_halves(self):
        g = {"a": np.array([0.6]), "b": np.array([0.8])}
        out, norm = clip_global_norm(g, 0.5)
        assert norm == pytest.approx(1.0)
        np.testing.assert_allclose(out["a"], [0.3])
        np.testing.assert_allclose(out["b"], [0.4])

    def test_below_threshold_unchanged(self):
        g = {"a": np.array([0.3])}
        out, _ = clip_global_norm(g, 0.5)
        np.testing.assert_array_equal(out["a"], g["a"])

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            clip_global_norm({"a": np.ones(1)}, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20),
           st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=5))
    def test_post_clip_norm(self, a, b):
        out, _ = clip_global_norm({"a": np.array(a), "b": np.array(b)}, 0.5)
        assert global_norm(out) <= 0.5 + 1e-7


class TestCheckpoint:
    def test_bit_exact(self, tmp_path, rng):
        t = {"conv.weight": rng.standard_normal((3, 2, 5)).astype(np.float32),
             "conv.bias": np.array([np.float32(1e-38), -0.0, np.float32(np.pi)], np.float32),
             "scalar": np.float32(7.25) * np.ones((), np.float32)}
        save_checkpoint(tmp_path / "m.ckpt", t, {"note": "x"})
        back, meta = load_checkpoint(tmp_path / "m.ckpt")
        assert meta == {"note": "x"}
        assert list(back) == list(t)
        for k in t:
            assert back[k].shape == t[k].shape
            assert back[k].tobytes() == t[k].tobytes()

    def test_file_is_reproducible(self, tmp_path):
        t = {"w": np.arange(10, dtype=np.float32)}
        save_checkpoint(tmp_path / "a", t)
        save_checkpoint(tmp_path / "b", t)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.grad_clip == 0.5 and cfg.lr == 1e-3 and cfg.batch_size == 8

    @pytest.mark.parametrize("kw", [{"grad_clip": 0}, {"lr": -1}, {"batch_size": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
