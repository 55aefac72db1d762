import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cforge.core import ops
from cforge.core.container import (ContainerError, load_arrays, load_dataset, load_model,
                                   save_arrays, save_dataset, save_model)
from cforge.core.graph import (Dataset, LayerDescriptor, ModelGraph, evaluate_accuracy,
                               loss_and_gradients, loss_gradients, model_forward)
from cforge.core.linalg import least_squares_solve
from cforge.core.mlp import MLP, Linear, NoisyLinear

from conftest import conv_layer, fc_layer, residual_toy, toy_batch


def naive_conv(x, w, b, stride, pad):
    C_in, H, W = x.shape
    C_o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - k) // stride + 1
    Wo = (W + 2 * pad - k) // stride + 1
    y = np.zeros((C_o, Ho, Wo))
    for o in range(C_o):
        for i in range(Ho):
            for j in range(Wo):
                acc = b[o]
                for c in range(C_in):
                    for u in range(k):
                        for v in range(k):
                            acc += w[o, c, u, v] * xp[c, i * stride + u, j * stride + v]
                y[o, i, j] = acc
    return y


class TestConvFC:
    def test_identity_1x1(self):
        x = np.random.default_rng(0).normal(size=(3, 5, 5))
        layer = LayerDescriptor("conv", np.eye(3).reshape(3, 3, 1, 1), np.zeros(3), 0, 1, 0)
        assert np.array_equal(ops.conv2d_forward(x, layer), x)

    def test_zero_weights(self):
        layer = conv_layer(0, 2, 4, pad=0)
        layer.weight[:] = 0
        layer.bias[:] = 0
        assert not ops.conv2d_forward(np.ones((2, 6, 6)), layer).any()

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_against_loops(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.normal(size=(1, 4, 4))
        w = rng.normal(size=(2, 1, 3, 3))
        b = rng.normal(size=2)
        layer = LayerDescriptor("conv", w, b, 0, stride, pad)
        np.testing.assert_allclose(ops.conv2d_forward(x, layer), naive_conv(x, w, b, stride, pad),
                                   atol=1e-6)

    def test_output_shape_formula(self):
        out = ops.conv2d(np.zeros((1, 3, 11, 9)), np.zeros((5, 3, 3, 3)), None, 2, 0)
        assert out.shape == (1, 5, 5, 4)

    def test_shape_errors(self):
        with pytest.raises(ops.ShapeError, match="channels"):
            ops.conv2d(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)))
        with pytest.raises(ops.ShapeError):
            ops.conv2d(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 3, 3)))
        with pytest.raises(ops.ShapeError):
            ops.linear(np.zeros((1, 3)), np.zeros((2, 4)))

    def test_fc(self):
        x = np.array([1.0, -2.0, 0.5, 3.0])
        layer = LayerDescriptor("fc", np.eye(4), np.zeros(4), 0)
        assert np.array_equal(ops.fc_forward(x, layer), x)
        layer = LayerDescriptor("fc", np.zeros((3, 4)), np.array([1.0, 2.0, 3.0]), 0)
        assert np.array_equal(ops.fc_forward(x, layer), [1.0, 2.0, 3.0])
        W = np.arange(12.0).reshape(3, 4) - 5
        b = np.array([0.5, -1.0, 2.0])
        expected = [sum(W[i, j] * x[j] for j in range(4)) + b[i] for i in range(3)]
        np.testing.assert_allclose(ops.fc_forward(x, LayerDescriptor("fc", W, b, 0)), expected)


class TestGraph:
    def test_single_layer_is_conv(self):
        layer = conv_layer(0, 2, 3, relu=False)
        model = ModelGraph((2, 6, 6), [layer], [])
        x = np.random.default_rng(1).normal(size=(2, 6, 6))
        np.testing.assert_array_equal(model_forward(model, x), ops.conv2d_forward(x, layer))

    def test_residual_with_zero_conv(self):
        model = residual_toy()
        model.layers[3].weight[:] = 0
        model.layers[3].bias[:] = 0
        x = np.random.default_rng(2).normal(size=(3, 2, 8, 8))
        stem = ops.relu(ops.conv2d(x, model.layers[0].weight, model.layers[0].bias, 1, 1))
        short = ops.conv2d(stem, model.layers[1].weight, model.layers[1].bias, 2, 0)
        fc = model.layers[4]
        expect = ops.linear(ops.relu(short).reshape(3, -1), fc.weight, fc.bias)
        np.testing.assert_allclose(model_forward(model, x), expect, atol=1e-12)

    def test_composition_oracle(self):
        rng = np.random.default_rng(3)
        layers = [conv_layer(0, 1, 3, rng=rng), conv_layer(1, 3, 4, stride=2, source=0, rng=rng),
                  fc_layer(2, 4 * 3 * 3, 6, source=1, rng=rng)]
        model = ModelGraph((1, 6, 6), layers, [])
        x = rng.normal(size=(1, 6, 6))
        h = ops.relu(ops.conv2d_forward(x, layers[0]))
        h = ops.relu(ops.conv2d_forward(h, layers[1]))
        np.testing.assert_allclose(model_forward(model, x), ops.fc_forward(h.ravel(), layers[2]))

    def test_validation_errors(self):
        m = residual_toy()
        with pytest.raises(ops.ShapeError, match="dangling"):
            ModelGraph(m.input_shape, m.layers, [(1, 9)])
        with pytest.raises(ops.ShapeError, match="junction"):
            ModelGraph(m.input_shape, m.layers, [(0, 3)])  # 8x8 vs 4x4
        with pytest.raises(ops.ShapeError):
            model_forward(m, np.zeros((3, 8, 8)))

    def test_descriptor_fields(self):
        m = residual_toy()
        l = m.layers[2]
        assert l.n_params == l.C_o * l.C_in * l.k ** 2
        assert l.mem_bits == 32 * l.n_params
        assert (l.h_in, l.w_in, l.h_out) == (8, 8, 4)
        fc = m.layers[4]
        assert (fc.N, fc.M, fc.n_params) == (5, 128, 640)

    def test_forward_determinism(self):
        m = residual_toy(np.float32)
        x = toy_batch(dtype=np.float32).inputs
        assert model_forward(m, x).tobytes() == model_forward(m, x).tobytes()


class TestAccuracy:
    def test_perfect_labels(self, toy_model, toy_data):
        labels = model_forward(toy_model, toy_data.inputs).argmax(1)
        assert evaluate_accuracy(toy_model, Dataset(toy_data.inputs, labels)) == 1.0

    def test_random_labels_binomial(self):
        rng = np.random.default_rng(0)
        layer = fc_layer(0, 20, 10, rng=rng)
        model = ModelGraph((20,), [layer], [])
        n = 4000
        data = Dataset(rng.normal(size=(n, 20)), rng.integers(0, 10, n))
        acc = evaluate_accuracy(model, data)
        assert abs(acc - 0.1) < 4 * np.sqrt(0.09 / n)

    def test_empty(self, toy_model):
        with pytest.raises(ValueError, match="empty"):
            evaluate_accuracy(toy_model, Dataset(np.zeros((0, 2, 8, 8)), np.zeros(0)))

    def test_noop_plan_on_8bit_exact_model(self):
        """Weights on their per-channel 8-bit grids and inputs on an 8-bit grid
        that the Laplace clip leaves untouched: the no-op plan is exact."""
        from cforge.compress import CompressionPlan
        from cforge.compress.quant import quantize_weights

        rng = np.random.default_rng(5)
        w = quantize_weights(rng.normal(size=(10, 16)), 8)[0]
        model = ModelGraph((16,), [LayerDescriptor("fc", w, rng.normal(size=10), 0, relu=False)], [])
        x = rng.integers(0, 256, (500, 16)) / 255.0
        x[0] = 0.0
        x[1] = 1.0
        data = Dataset(x, rng.integers(0, 10, 500))
        dense = evaluate_accuracy(model, data)
        noop = evaluate_accuracy(model, data, CompressionPlan.noop(1), calib=data)
        assert dense == noop


class TestGradients:
    @staticmethod
    def _fd_check(model, batch, coords, rng, tol=1e-5):
        _, grads = loss_and_gradients(model, batch)
        h = 1e-6
        for _ in range(coords):
            t = int(rng.integers(len(model.layers)))
            kind = "weight" if rng.random() < 0.8 else "bias"
            arr = getattr(model.layers[t], kind)
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            old = arr[idx]
            arr[idx] = old + h
            lp, _ = loss_and_gradients(model, batch)
            arr[idx] = old - h
            lm, _ = loss_and_gradients(model, batch)
            arr[idx] = old
            fd = (lp - lm) / (2 * h)
            an = grads[t][0 if kind == "weight" else 1][idx]
            assert abs(fd - an) <= tol * max(1.0, abs(fd), abs(an)), (t, kind, idx, fd, an)

    def test_residual_graph_fd(self):
        rng = np.random.default_rng(0)
        self._fd_check(residual_toy(), toy_batch(n=6), 20, rng)

    def test_gap_head_fd(self):
        rng = np.random.default_rng(1)
        layers = [conv_layer(0, 2, 4, rng=rng), conv_layer(1, 4, 4, stride=2, source=0, rng=rng),
                  fc_layer(2, 4, 3, source=1, rng=rng, in_transform="gap")]
        model = ModelGraph((2, 6, 6), layers, [])
        batch = Dataset(rng.normal(size=(5, 2, 6, 6)), rng.integers(0, 3, 5))
        self._fd_check(model, batch, 20, rng)

    def test_zero_fc_uniform_softmax(self):
        rng = np.random.default_rng(2)
        fc = LayerDescriptor("fc", np.zeros((4, 6)), np.zeros(4), 0, relu=False)
        model = ModelGraph((6,), [fc], [])
        x = rng.normal(size=(8, 6))
        y = rng.integers(0, 4, 8)
        g = loss_gradients(model, Dataset(x, y))[0]
        onehot = np.eye(4)[y]
        np.testing.assert_allclose(g, (0.25 - onehot).T @ x / 8, atol=1e-12)

    def test_duplicated_batch(self, toy_model):
        one = toy_batch(n=1)
        dup = Dataset(np.repeat(one.inputs, 4, 0), np.repeat(one.labels, 4))
        for a, b in zip(loss_gradients(toy_model, one), loss_gradients(toy_model, dup)):
            np.testing.assert_allclose(a, b, atol=1e-12)


class TestLeastSquares:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(least_squares_solve(np.eye(3), b), b)

    def test_overdetermined(self):
        x = least_squares_solve(np.array([[1.0], [1.0]]), np.array([1.0, 3.0]))
        np.testing.assert_allclose(x, [2.0])

    def test_normal_equations(self):
        rng = np.random.default_rng(0)
        A, b = rng.normal(size=(6, 3)), rng.normal(size=6)
        x = least_squares_solve(A, b)
        np.testing.assert_allclose(x, np.linalg.solve(A.T @ A, A.T @ b), atol=1e-10)
        assert np.abs(A.T @ (A @ x - b)).max() < 1e-6

    def test_zero_matrix(self):
        assert not least_squares_solve(np.zeros((4, 2)), np.ones(4)).any()

    def test_min_norm(self):
        A = np.array([[1.0, 1.0]])
        np.testing.assert_allclose(least_squares_solve(A, np.array([2.0])), [1.0, 1.0])


def _mlp_fd(net, x, rng, coords=10, tol=1e-5):
    def loss():
        return 0.5 * float(np.sum(net.forward(x) ** 2))

    y = net.forward(x)
    net.backward(y)
    grads = {k: v.copy() for k, v in net.gradients().items()}
    params = net.parameters()
    names = sorted(params)
    h = 1e-6
    for _ in range(coords):
        name = names[int(rng.integers(len(names)))]
        p = params[name]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        lp = loss()
        p[idx] = old - h
        lm = loss()
        p[idx] = old
        fd = (lp - lm) / (2 * h)
        assert abs(fd - grads[name][idx]) <= tol * max(1.0, abs(fd)), (name, fd, grads[name][idx])


class TestMLP:
    def test_linear_mse(self):
        rng = np.random.default_rng(0)
        net = MLP([Linear(3, 2, rng, np.float64)])
        x = rng.normal(size=(5, 3))
        y = net.forward(x)
        net.backward(y)
        np.testing.assert_allclose(net.gradients()["0.w"], y.T @ x)

    @pytest.mark.parametrize("head", ["sigmoid", "tanh", "linear"])
    def test_fd_two_hidden(self, head):
        rng = np.random.default_rng(1)
        net = MLP.build([4, 7, 5, 3], rng, head=head, dtype=np.float64)
        _mlp_fd(net, rng.normal(size=(6, 4)), rng)

    def test_fd_noisy(self):
        rng = np.random.default_rng(2)
        net = MLP.build([4, 6, 3], rng, dtype=np.float64, noisy_last=True)
        net.reset_noise(rng)
        _mlp_fd(net, rng.normal(size=(5, 4)), rng, coords=20)

    def test_zero_noise_is_linear(self):
        rng = np.random.default_rng(3)
        nl = NoisyLinear(5, 4, rng, sigma0=0.0, dtype=np.float64)
        nl.reset_noise(rng)
        lin = Linear(5, 4, rng, np.float64)
        lin.params["w"], lin.params["b"] = nl.params["mu_w"], nl.params["mu_b"]
        x = rng.normal(size=(3, 5))
        np.testing.assert_array_equal(nl.forward(x), lin.forward(x))


def test_gradient_checks_50_random_nets():
    """Criterion 5 in miniature; the acceptance suite runs the full sweep."""
    from acceptance_checks import gradient_check_sweep

    worst = gradient_check_sweep(n_nets=5, seed=123)
    assert worst <= 1e-5


class TestContainers:
    def test_model_roundtrip_bytes(self, tmp_path, toy_model):
        m = toy_model.astype(np.float32)
        save_model(m, tmp_path / "a")
        loaded = load_model(tmp_path / "a")
        save_model(loaded, tmp_path / "b")
        for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
        for a, b in zip(m.layers, loaded.layers):
            assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
        assert loaded.junctions == m.junctions

    def test_blob_count_mismatch(self, tmp_path, toy_model):
        save_model(toy_model, tmp_path)
        man = json.loads((tmp_path / "manifest.json").read_text())
        man["blob_count"] += 1
        (tmp_path / "manifest.json").write_text(json.dumps(man))
        with pytest.raises(ContainerError, match="blob_count"):
            load_model(tmp_path)

    def test_bad_magic_truncation_checksum(self, tmp_path, toy_model):
        save_model(toy_model, tmp_path)
        blob = tmp_path / "layer0.weight.f32"
        raw = blob.read_bytes()
        blob.write_bytes(raw[:-4])
        with pytest.raises(ContainerError, match="truncated"):
            load_model(tmp_path)
        blob.write_bytes(raw[:-4] + b"\0\0\0\0" if raw[-4:] != b"\0\0\0\0" else raw[:-4] + b"\1\0\0\0")
        with pytest.raises(ContainerError, match="checksum"):
            load_model(tmp_path)
        man = json.loads((tmp_path / "manifest.json").read_text())
        man["magic"] = "NOPE"
        (tmp_path / "manifest.json").write_text(json.dumps(man))
        with pytest.raises(ContainerError, match="magic"):
            load_model(tmp_path)

    def test_dataset_roundtrip(self, tmp_path):
        d = toy_batch(n=7, dtype=np.float32)
        save_dataset(d, tmp_path / "validation")
        raw = (tmp_path / "validation" / "data.bin").read_bytes()
        assert raw[:4] == b"CFDS"
        e = load_dataset(tmp_path, "validation")
        assert np.array_equal(e.inputs, d.inputs) and np.array_equal(e.labels, d.labels)
        assert e.split == "validation"

    def test_checkpoint_roundtrip(self, tmp_path):
        arrs = {"a.w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(4, np.float32)}
        save_arrays(arrs, tmp_path, {"episode": 3})
        back, meta = load_arrays(tmp_path)
        assert meta == {"episode": 3}
        for k in arrs:
            assert np.array_equal(arrs[k], back[k])


class TestDataset:
    def test_subset_seeded(self):
        d = toy_batch(n=100)
        a, b = d.subset(0.1, 7), d.subset(0.1, 7)
        assert len(a) == 10 and np.array_equal(a.labels, b.labels)
        assert not np.array_equal(d.subset(0.1, 8).inputs, a.inputs)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 200), st.floats(0.01, 1.0))
    def test_subset_size(self, n, frac):
        d = Dataset(np.zeros((n, 1)), np.zeros(n))
        assert 1 <= len(d.subset(frac, 0)) <= n
