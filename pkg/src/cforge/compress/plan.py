"""Compression plans: dependency resolution and application to a model."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..core.graph import _run, layer_outputs, loss_and_gradients
from .pruning import (FINE_GRAINED, TECHNIQUES, ChannelSelector, PruningMask,
                      prune_bernoulli, prune_fm_reconstruction, prune_l1_ranked,
                      prune_l2_ranked, prune_level, prune_sensitivity, prune_splicing)
from .quant import MAX_BITS, MIN_BITS, calibrate_activations, quantize_weights

DEFAULT_S_CAP = 0.9


@dataclass(frozen=True)
class CompressionAction:
    layer: int
    technique: str
    sparsity: float
    bits: int
    # layers whose filter mask this layer must share (set by resolve_dependencies)
    tied: tuple = ()

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"unknown technique {self.technique!r}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity {self.sparsity} outside [0, 1]")
        if not MIN_BITS <= int(self.bits) <= MAX_BITS:
            raise ValueError(f"bits {self.bits} outside [{MIN_BITS}, {MAX_BITS}]")

    @property
    def fine(self):
        return self.technique in FINE_GRAINED


@dataclass
class CompressionPlan:
    actions: list = field(default_factory=list)

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __getitem__(self, t):
        return self.actions[t]

    @classmethod
    def noop(cls, n_layers, bits=8):
        return cls([CompressionAction(t, "Level", 0.0, bits) for t in range(n_layers)])

    @classmethod
    def uniform(cls, n_layers, technique, sparsity, bits):
        return cls([CompressionAction(t, technique, sparsity, bits) for t in range(n_layers)])

    def to_records(self):
        return [{"layer": a.layer, "technique": a.technique,
                 "sparsity": float(a.sparsity), "bits": int(a.bits)} for a in self.actions]

    def to_json(self):
        return json.dumps(self.to_records(), indent=2)

    @classmethod
    def from_records(cls, records):
        acts = [CompressionAction(int(r["layer"]), r["technique"], float(r["sparsity"]), int(r["bits"]))
                for r in records]
        return cls(sorted(acts, key=lambda a: a.layer))

    @classmethod
    def from_json(cls, text):
        return cls.from_records(json.loads(text))

    def check(self, model):
        got = [a.layer for a in self.actions]
        if got != list(range(len(model.layers))):
            missing = sorted(set(range(len(model.layers))) - set(got))
            raise ValueError(f"plan covers layers {got}; model has {len(model.layers)} "
                             f"(missing {missing})")


def granularity(technique, kind, ranked_pattern="filter"):
    """Mask granularity a technique produces on a conv/fc layer."""
    if technique in FINE_GRAINED:
        return "element"
    if kind == "fc":
        return "row"
    if technique in ("L1Ranked", "L2Ranked"):
        return ranked_pattern
    if technique == "Bernoulli":
        return "filter"
    return "channel"


def resolve_dependencies(model, plan, ranked_pattern="filter"):
    """Tie output-channel masks across residual add-junctions.

    When either side of a junction removes whole filters, both sides get
    the same filter mask (the union of removals). Ties are one hop only:
    the mask lands on the first dependent layer and is not chased further.
    """
    plan.check(model)
    ties = {t: set() for t in range(len(plan))}
    for p, c in model.junctions:
        for a, b in ((p, c), (c, p)):
            g = granularity(plan[a].technique, model.layers[a].kind, ranked_pattern)
            if g in ("filter", "row"):
                ties[b].add(a)
    acts = [replace(a, tied=tuple(sorted(ties[a.layer]))) for a in plan.actions]
    return CompressionPlan(acts)


class PruneContext:
    """Per-model caches for the data-dependent pruners (dense-model based)."""

    def __init__(self, model, calib, seed=0, ranked_pattern="filter"):
        self.model, self.calib, self.seed = model, calib, seed
        self.ranked_pattern = ranked_pattern
        self._grads = None
        self._inputs = None
        self._selectors = {}
        self._masks = {}

    @property
    def grads(self):
        if self._grads is None:
            self._grads = [g for g, _ in loss_and_gradients(self.model, self.calib)[1]]
        return self._grads

    @property
    def inputs(self):
        if self._inputs is None:
            self._inputs = layer_outputs(self.model, self.calib.inputs)[1]
        return self._inputs

    def selector(self, t):
        if t not in self._selectors:
            l = self.model.layers[t]
            self._selectors[t] = ChannelSelector(l.weight, self.inputs[t], l.stride, l.pad,
                                                 seed=self.seed)
        return self._selectors[t]

    def mask(self, t, technique, S):
        """(PruningMask, replacement weights or None); memoised."""
        key = (t, technique, round(float(S), 12))
        if key not in self._masks:
            self._masks[key] = self._compute(t, technique, S)
        return self._masks[key]

    def _compute(self, t, technique, S):
        layer = self.model.layers[t]
        w = layer.weight
        pattern = "row" if layer.kind == "fc" else self.ranked_pattern
        if technique == "Level":
            return prune_level(w, S, t), None
        if technique == "Splicing":
            m = prune_splicing(w, S)
            return PruningMask(t, "element", m.keep), None
        if technique == "Sensitivity":
            return prune_sensitivity(self.model, self.calib, t, S, grads=self.grads), None
        if technique == "L1Ranked":
            m = prune_l1_ranked(w, S, pattern)
        elif technique == "L2Ranked":
            m = prune_l2_ranked(w, S, pattern)
        elif technique == "Bernoulli":
            m = prune_bernoulli(w, S, seed=self.seed * 1009 + t)
        else:
            sel = None if layer.kind == "fc" else self.selector(t)
            m, W = prune_fm_reconstruction(self.model, self.calib, t, S, selector=sel,
                                           inputs=self.inputs[t])
            return PruningMask(t, m.granularity, m.keep), (None if m.keep.all() else W)
        return PruningMask(t, m.granularity, m.keep), None


@dataclass
class LayerResult:
    layer: int
    technique: str
    bits: int
    sparsity: float          # overall fraction of zeroed weights
    coarse_sparsity: float   # fraction of weights removed structurally
    fine_sparsity: float     # fraction of structurally-kept weights zeroed
    filter_keep: np.ndarray
    channel_keep: np.ndarray
    element_keep: np.ndarray

    @property
    def effective_params(self):
        return int(self.element_keep.size * (1 - self.coarse_sparsity) + 0.5)

    def summary(self):
        return {"layer": self.layer, "technique": self.technique, "bits": self.bits,
                "sparsity": round(self.sparsity, 6),
                "coarse_sparsity": round(self.coarse_sparsity, 6),
                "fine_sparsity": round(self.fine_sparsity, 6)}


@dataclass
class CompressedModel:
    model: object
    layers: list
    qparams: list

    @property
    def achieved(self):
        return [(r.sparsity, r.bits) for r in self.layers]

    def dead_outputs(self, t):
        """Output channels of layer t that are structurally removed."""
        return ~self.layers[t].filter_keep


def build_masks(model, plan, ctx):
    """Combine each layer's own mask with masks inherited over junctions."""
    own, refits = [], []
    for a in plan:
        m, W = ctx.mask(a.layer, a.technique, a.sparsity)
        own.append(m)
        refits.append(W)
    results = []
    for a, m in zip(plan, own):
        layer = model.layers[a.layer]
        C_o, C_in = layer.weight.shape[:2]
        fk = np.ones(C_o, bool)
        ck = np.ones(C_in, bool)
        ek = np.ones(layer.weight.shape, bool)
        if m.granularity in ("filter", "row"):
            fk &= m.keep
        elif m.granularity == "channel":
            ck &= m.keep
        else:
            ek &= m.keep
        for p in a.tied:
            pm = own[p]
            if pm.granularity in ("filter", "row"):
                if len(pm.keep) != C_o:
                    raise ValueError(f"irreconcilable masks between layers {a.layer} and {p}")
                fk &= pm.keep
        struct = fk.reshape((-1, 1) + (1,) * (layer.weight.ndim - 2)) & \
            ck.reshape((1, -1) + (1,) * (layer.weight.ndim - 2))
        coarse = 1.0 - fk.mean() * ck.mean()
        survivors = np.broadcast_to(struct, layer.weight.shape)
        n_surv = survivors.sum()
        fine = float((survivors & ~ek).sum() / n_surv) if n_surv else 0.0
        total = 1.0 - float((survivors & ek).sum() / ek.size)
        results.append(LayerResult(a.layer, a.technique, int(a.bits), total, float(coarse), fine,
                                   fk, ck, ek))
    return results, refits


def apply_plan(model, plan, calib, ctx=None, quantize=True):
    """Prune, then fake-quantize, a fresh copy of ``model``.

    ``plan`` must already be resolved. Activation clipping ranges are
    calibrated on ``calib`` through the progressively compressed network.
    """
    plan.check(model)
    if ctx is None:
        ctx = PruneContext(model, calib)
    results, refits = build_masks(model, plan, ctx)
    out = model.copy()
    for r, W in zip(results, refits):
        layer = out.layers[r.layer]
        base = layer.weight if W is None else W.astype(layer.weight.dtype)
        shp = layer.weight.shape
        nd = layer.weight.ndim - 2
        keep = r.element_keep & r.filter_keep.reshape((-1, 1) + (1,) * nd) \
            & r.channel_keep.reshape((1, -1) + (1,) * nd)
        layer.weight = np.where(keep, base, 0).astype(layer.weight.dtype).reshape(shp)
        layer.bias = np.where(r.filter_keep, layer.bias, 0).astype(layer.bias.dtype)
        layer._keep = keep
    qparams = [None] * len(out.layers)
    if quantize:
        def hook(layer, inp):
            r = results[layer.index]
            wq, qp = quantize_weights(layer.weight, r.bits, layer._keep)
            aq = calibrate_activations(inp, r.bits)
            qp.act_alpha, qp.act_lo, qp.act_hi = aq.alpha, aq.lo, aq.hi
            layer.weight = wq
            layer.act_q = aq
            qparams[layer.index] = qp

        _run(out, calib.inputs, hook=hook)
    for layer in out.layers:
        del layer._keep
    return CompressedModel(out, results, qparams)
