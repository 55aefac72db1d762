"""Layer descriptors, the model graph, datasets, inference and gradients."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .ops import ShapeError

Q_BITS_FLOAT = 32


@dataclass
class LayerDescriptor:
    """One conv or fc layer.

    ``source`` is the index of the layer whose output feeds this one
    (-1 for the model input). fc layers consume their source either
    flattened or global-average-pooled (``in_transform``).
    """

    kind: str
    weight: np.ndarray
    bias: np.ndarray
    index: int = 0
    stride: int = 1
    pad: int = 0
    source: int = -1
    relu: bool = True
    in_transform: str = "flatten"
    h_in: int = 1
    w_in: int = 1
    # set by apply_plan: callable fake-quantizer for this layer's input
    act_q: object = None

    @property
    def C_o(self):
        return self.weight.shape[0]

    @property
    def C_in(self):
        return self.weight.shape[1]

    @property
    def k(self):
        return self.weight.shape[2] if self.kind == "conv" else 1

    @property
    def N(self):
        return self.weight.shape[0]

    @property
    def M(self):
        return self.weight.shape[1]

    @property
    def n_params(self):
        return int(self.weight.size)

    P_t = n_params

    @property
    def mem_bits(self):
        return Q_BITS_FLOAT * self.n_params

    @property
    def h_out(self):
        if self.kind == "fc":
            return 1
        return ops.out_size(self.h_in, self.k, self.stride, self.pad)

    @property
    def w_out(self):
        if self.kind == "fc":
            return 1
        return ops.out_size(self.w_in, self.k, self.stride, self.pad)

    @property
    def out_shape(self):
        if self.kind == "fc":
            return (self.N,)
        return (self.C_o, self.h_out, self.w_out)


@dataclass
class ModelGraph:
    input_shape: tuple
    layers: list
    junctions: list = field(default_factory=list)  # (producer, consumer)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.junctions = [tuple(int(v) for v in j) for j in self.junctions]
        self.validate()

    @property
    def head(self):
        return self.layers[-1].out_shape[0]

    def __len__(self):
        return len(self.layers)

    def producer_shape(self, src):
        return self.input_shape if src < 0 else self.layers[src].out_shape

    def validate(self):
        """Infer spatial dims and check the graph is a well-formed DAG."""
        for t, layer in enumerate(self.layers):
            layer.index = t
            if layer.kind not in ("conv", "fc"):
                raise ShapeError(f"layer {t}: unknown kind {layer.kind!r}")
            if not -1 <= layer.source < t:
                raise ShapeError(f"layer {t}: source {layer.source} breaks topological order")
            shp = self.producer_shape(layer.source)
            if layer.kind == "conv":
                if len(shp) != 3 or shp[0] != layer.C_in:
                    raise ShapeError(f"layer {t}: input {shp} incompatible with weight {layer.weight.shape}")
                layer.h_in, layer.w_in = shp[1], shp[2]
                if layer.h_out < 1 or layer.w_out < 1:
                    raise ShapeError(f"layer {t}: empty output")
            else:
                feat = shp[0] if (layer.in_transform == "gap" or len(shp) == 1) else int(np.prod(shp))
                if feat != layer.M:
                    raise ShapeError(f"layer {t}: fc expects {layer.M} inputs, source gives {feat}")
                layer.h_in = layer.w_in = 1
            if layer.bias.shape != (layer.C_o,):
                raise ShapeError(f"layer {t}: bias shape {layer.bias.shape}")
        for p, c in self.junctions:
            if not (0 <= p < len(self.layers) and 0 <= c < len(self.layers)):
                raise ShapeError(f"dangling junction {p}->{c}")
            if p >= c:
                raise ShapeError(f"junction {p}->{c} must point forward")
            if self.layers[p].out_shape != self.layers[c].out_shape:
                raise ShapeError(
                    f"junction {p}->{c} joins {self.layers[p].out_shape} and {self.layers[c].out_shape}")

    def consumers(self, t):
        """Layers reading layer t's output directly."""
        return [l.index for l in self.layers if l.source == t]

    def junction_partners(self, t):
        return [c if p == t else p for p, c in self.junctions if t in (p, c)]

    def copy(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        m = self.copy()
        for layer in m.layers:
            layer.weight = layer.weight.astype(dtype)
            layer.bias = layer.bias.astype(dtype)
        return m


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "validation"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")

    def __len__(self):
        return len(self.labels)

    def subset(self, fraction, seed):
        """Seeded random subset without replacement."""
        n = max(1, int(round(fraction * len(self))))
        idx = np.sort(np.random.default_rng(seed).choice(len(self), n, replace=False))
        return Dataset(self.inputs[idx], self.labels[idx], self.split)

    def head(self, n):
        return Dataset(self.inputs[:n], self.labels[:n], self.split)


def _layer_input(layer, src_out):
    if layer.kind == "fc":
        if layer.in_transform == "gap" and src_out.ndim == 4:
            return src_out.mean(axis=(2, 3))
        return src_out.reshape(src_out.shape[0], -1)
    return src_out


def _run(model, x, keep=False, hook=None):
    """Forward pass; optionally keep per-layer caches for backward.

    ``hook(layer, inp)`` runs before a layer consumes its input and may
    install ``layer.act_q`` / replace weights (used for calibration).
    """
    outs, cache = [], []
    for layer in model.layers:
        src = x if layer.source < 0 else outs[layer.source]
        inp = _layer_input(layer, src)
        if hook is not None:
            hook(layer, inp)
        if layer.act_q is not None:
            inp = layer.act_q(inp)
        if layer.kind == "conv":
            z = ops.conv2d(inp, layer.weight, layer.bias, layer.stride, layer.pad)
        else:
            z = ops.linear(inp, layer.weight, layer.bias)
        for p, c in model.junctions:
            if c == layer.index:
                z = z + outs[p]
        y = ops.relu(z) if layer.relu else z
        outs.append(y)
        if keep:
            cache.append((src, inp, z))
    return outs, cache


def model_forward(model, x):
    """Logits for one sample (CHW) or a batch (NCHW)."""
    single = x.ndim == len(model.input_shape)
    xb = x[None] if single else x
    if tuple(xb.shape[1:]) != model.input_shape:
        raise ShapeError(f"input {xb.shape[1:]} != model input {model.input_shape}")
    outs, _ = _run(model, xb)
    return outs[-1][0] if single else outs[-1]


def layer_outputs(model, x):
    """All per-layer outputs plus per-layer (post-transform) inputs."""
    outs, cache = _run(model, x, keep=True)
    return outs, [c[1] for c in cache]


def predict(model, x, batch_size=512):
    preds = []
    for i in range(0, len(x), batch_size):
        preds.append(model_forward(model, x[i:i + batch_size]).argmax(axis=1))
    return np.concatenate(preds)


def evaluate_accuracy(model, data, plan=None, calib=None, **compress_kw):
    """Top-1 accuracy; with a plan, the compressed model is evaluated.

    ``calib`` is the calibration batch for activation clipping and the
    data-driven pruners; it defaults to the first 64 samples of ``data``.
    """
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    if plan is not None:
        from ..compress import apply_plan, resolve_dependencies

        calib = calib if calib is not None else data.head(64)
        model = apply_plan(model, resolve_dependencies(model, plan), calib, **compress_kw).model
    return float((predict(model, data.inputs) == data.labels).mean())


def loss_gradients(model, batch):
    """d(mean softmax-CE)/dW for every layer, as a list aligned with layers.

    Bias gradients are returned alongside as ``(dW, db)`` pairs via
    ``loss_and_gradients``; this wrapper keeps the weight part only.
    """
    return [g[0] for g in loss_and_gradients(model, batch)[1]]


def loss_and_gradients(model, batch):
    if len(batch) == 0:
        raise ValueError("empty batch")
    outs, cache = _run(model, batch.inputs, keep=True)
    loss, dlogits = ops.cross_entropy(outs[-1], batch.labels)
    L = len(model.layers)
    douts = [None] * L
    douts[-1] = dlogits.astype(outs[-1].dtype)
    grads = [None] * L
    for t in range(L - 1, -1, -1):
        layer = model.layers[t]
        dy = douts[t]
        if dy is None:
            grads[t] = (np.zeros_like(layer.weight), np.zeros_like(layer.bias))
            continue
        src, inp, z = cache[t]
        dz = dy * (z > 0) if layer.relu else dy
        for p, c in model.junctions:
            if c == t:
                douts[p] = dz if douts[p] is None else douts[p] + dz
        # activation fake-quantizers, if any, are treated as identity (STE)
        if layer.kind == "conv":
            dinp, dw, db = ops.conv2d_backward(dz, inp, layer.weight, layer.stride, layer.pad)
            dsrc = dinp
        else:
            dinp, dw, db = ops.linear_backward(dz, inp, layer.weight)
            if layer.in_transform == "gap" and src.ndim == 4:
                hw = src.shape[2] * src.shape[3]
                dsrc = np.broadcast_to((dinp / hw)[:, :, None, None], src.shape).copy()
            else:
                dsrc = dinp.reshape(src.shape)
        grads[t] = (dw, db)
        if layer.source >= 0:
            s = layer.source
            douts[s] = dsrc if douts[s] is None else douts[s] + dsrc
    return float(loss), grads
