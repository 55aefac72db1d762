"""Bundled fixture: a 10-class 12x12 shapes dataset and a small residual CNN.

``build_fixture`` regenerates everything deterministically; the shipped
copy under ``cforge/data/fixture`` is what the tests and CLI load.
"""
from __future__ import annotations

import hashlib
from importlib import resources
from pathlib import Path

import numpy as np

from .core.container import load_dataset, load_model, save_dataset, save_model
from .core.graph import Dataset, LayerDescriptor, ModelGraph, evaluate_accuracy, loss_and_gradients

SIZE = 12
N_CLASSES = 10
SPLIT_SIZES = {"train-calib": 6000, "validation": 5000, "test": 1000}
CLASS_NAMES = ("hbar", "vbar", "diag", "antidiag", "box", "block", "plus", "ring", "corner",
               "dots")


def _shape(cls, rng):
    img = np.zeros((SIZE, SIZE))
    s = int(rng.integers(5, 9))               # extent
    r0 = int(rng.integers(0, SIZE - s + 1))
    c0 = int(rng.integers(0, SIZE - s + 1))
    th = int(rng.integers(1, 3))              # stroke
    rr, cc = np.mgrid[0:s, 0:s]
    if cls == 0:
        m = (rr >= s // 2 - th // 2) & (rr < s // 2 - th // 2 + th)
    elif cls == 1:
        m = (cc >= s // 2 - th // 2) & (cc < s // 2 - th // 2 + th)
    elif cls == 2:
        m = np.abs(rr - cc) < th
    elif cls == 3:
        m = np.abs(rr + cc - (s - 1)) < th
    elif cls == 4:
        m = (rr < th) | (cc < th) | (rr >= s - th) | (cc >= s - th)
    elif cls == 5:
        m = np.ones((s, s), bool)
    elif cls == 6:
        m = (np.abs(rr - s // 2) < th) | (np.abs(cc - s // 2) < th)
    elif cls == 7:
        d = np.hypot(rr - (s - 1) / 2, cc - (s - 1) / 2)
        m = np.abs(d - (s - 1) / 2 + 0.5) < 0.5 * th + 0.3
    elif cls == 8:
        m = (rr >= s - th) | (cc < th)
    else:
        m = np.zeros((s, s), bool)
        for a, b in ((0, 0), (0, s - 2), (s - 2, 0), (s - 2, s - 2)):
            m[a:a + 2, b:b + 2] = True
    img[r0:r0 + s, c0:c0 + s][m] = rng.uniform(0.6, 1.0)
    return img


def make_shapes(n, seed):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % N_CLASSES
    rng.shuffle(labels)
    x = np.stack([_shape(int(c), rng) for c in labels])
    x = x + rng.normal(0, 0.15, x.shape)
    return x[:, None].astype(np.float32), labels.astype(np.int64)


def make_dataset(seed=0):
    out = {}
    for i, (split, n) in enumerate(SPLIT_SIZES.items()):
        x, y = make_shapes(n, seed * 100 + i)
        out[split] = Dataset(x, y, split)
    return out


def fixture_architecture(rng, width=32):
    """6 layers: stem, 1x1 stride-2 shortcut, two 3x3 convs (residual add),
    a stride-2 conv, and a flatten fc head."""
    def conv(t, c_in, c_out, k, stride, pad, source, relu=True):
        fan = c_in * k * k
        w = rng.normal(0, np.sqrt(2.0 / fan), (c_out, c_in, k, k)).astype(np.float32)
        return LayerDescriptor("conv", w, np.zeros(c_out, np.float32), t, stride, pad,
                               source=source, relu=relu)

    w2 = 2 * width
    layers = [
        conv(0, 1, width, 3, 1, 1, -1),
        conv(1, width, width, 1, 2, 0, 0, relu=False),
        conv(2, width, width, 3, 2, 1, 0),
        conv(3, width, width, 3, 1, 1, 2),
        conv(4, width, w2, 3, 2, 1, 3),
    ]
    n_in = w2 * 3 * 3
    fc = LayerDescriptor("fc", rng.normal(0, np.sqrt(1.0 / n_in), (N_CLASSES, n_in)).astype(np.float32),
                         np.zeros(N_CLASSES, np.float32), 5, source=4, relu=False)
    return ModelGraph((1, SIZE, SIZE), layers + [fc], [(1, 3)])


def train(model, data, epochs=12, batch=64, lr=2e-3, seed=0, log=None):
    """Plain Adam on softmax cross-entropy using the library's own backward."""
    rng = np.random.default_rng(seed)
    params = [(l, "weight") for l in model.layers] + [(l, "bias") for l in model.layers]
    m = [np.zeros_like(getattr(l, k), dtype=np.float64) for l, k in params]
    v = [np.zeros_like(x) for x in m]
    b1, b2, step = 0.9, 0.999, 0
    for ep in range(epochs):
        order = rng.permutation(len(data))
        lr_ep = lr * 0.5 * (1 + np.cos(np.pi * ep / epochs))
        for i in range(0, len(order), batch):
            idx = order[i:i + batch]
            loss, grads = loss_and_gradients(model, Dataset(data.inputs[idx], data.labels[idx]))
            flat = [g for g, _ in grads] + [g for _, g in grads]
            step += 1
            for j, ((layer, key), g) in enumerate(zip(params, flat)):
                m[j] = b1 * m[j] + (1 - b1) * g
                v[j] = b2 * v[j] + (1 - b2) * g * g
                upd = lr_ep * (m[j] / (1 - b1 ** step)) / (np.sqrt(v[j] / (1 - b2 ** step)) + 1e-8)
                setattr(layer, key, (getattr(layer, key) - upd).astype(np.float32))
        if log:
            log(f"epoch {ep + 1}: loss {loss:.4f}")
    return model


def snap_to_8bit(model):
    """Round weights onto their own per-channel 8-bit grids so that the
    no-op (8-bit) plan is weight-exact."""
    from .compress.quant import quantize_weights

    for layer in model.layers:
        layer.weight = quantize_weights(layer.weight, 8)[0].astype(np.float32)
    return model


def build_fixture(out_dir, seed=0, epochs=10, log=None):
    out = Path(out_dir)
    data = make_dataset(seed)
    model = fixture_architecture(np.random.default_rng(seed))
    train(model, data["train-calib"], epochs=epochs, seed=seed, log=log)
    snap_to_8bit(model)
    save_model(model, out / "model")
    for split, d in data.items():
        save_dataset(d, out / "data" / split)
    acc = evaluate_accuracy(model, data["test"])
    if log:
        log(f"test accuracy {acc:.4f}")
    return model, data, acc


def fixture_dir():
    return Path(str(resources.files("cforge") / "data" / "fixture"))


def load_fixture(split=None):
    """(model, {split: Dataset}) from the bundled fixture."""
    root = fixture_dir()
    model = load_model(root / "model")
    splits = [split] if split else list(SPLIT_SIZES)
    return model, {s: load_dataset(root / "data" / s) for s in splits}


def fixture_digest():
    """SHA-256 over every shipped fixture file (sorted by relative path)."""
    root = fixture_dir()
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()
