"""Layer-wise accelerator energy model with pruning/quantization reduction coefficients.

    E_total = sum_l E_mem + E_comp
    E_mem   = #acc  * e_mem  * R_mem
    E_comp  = #comp * e_comp * (R_pruned + R_unpruned)
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compress.plan import CompressedModel, CompressionPlan, granularity

P_FG = 0.2
BITS = range(2, 9)
# the 5/5-bit MAC draws 71% of the 8/8-bit power
RQ_ANCHOR = (5, 5, 0.71)


@dataclass
class CostProfile:
    comp: np.ndarray
    acc: np.ndarray
    e_comp: float = 1.0
    e_mem: float = 10.0

    def __post_init__(self):
        self.comp = np.asarray(self.comp, dtype=np.float64)
        self.acc = np.asarray(self.acc, dtype=np.float64)
        if self.comp.shape != self.acc.shape:
            raise ValueError("comp and acc differ in length")
        if (self.comp < 0).any() or (self.acc < 0).any() or self.e_comp < 0 or self.e_mem < 0:
            raise ValueError("cost profile entries must be non-negative")

    def __len__(self):
        return len(self.comp)

    def to_json(self):
        return {"e_comp": self.e_comp, "e_mem": self.e_mem,
                "layers": [{"t": t, "comp": float(c), "acc": float(a)}
                           for t, (c, a) in enumerate(zip(self.comp, self.acc))]}


@dataclass
class PowerRatioTable:
    rq: np.ndarray          # [Q_W - 2][Q_A - 2]
    p_fg: float = P_FG

    def __post_init__(self):
        self.rq = np.asarray(self.rq, dtype=np.float64)
        if self.rq.shape != (7, 7):
            raise ValueError(f"R_Q table must be 7x7, got {self.rq.shape}")
        if not ((self.rq > 0) & (self.rq <= 1)).all():
            raise ValueError("R_Q entries must lie in (0, 1]")
        if not 0 < self.p_fg < 1:
            raise ValueError("p_fg must lie in (0, 1)")

    def __call__(self, q_w, q_a=None):
        q_a = q_w if q_a is None else q_a
        return float(self.rq[int(q_w) - 2, int(q_a) - 2])

    def is_monotone(self):
        return bool((np.diff(self.rq, axis=0) >= 0).all() and (np.diff(self.rq, axis=1) >= 0).all())


def default_rq_table(p_fg=P_FG):
    """Bilinear surrogate R_Q = c0 + c1 * Q_W*Q_A/64 through (8,8)->1 and (5,5)->0.71."""
    qw, qa, r = RQ_ANCHOR
    c1 = (1 - r) / (1 - qw * qa / 64)
    c0 = 1 - c1
    q = np.arange(2, 9)
    rq = np.round(c0 + c1 * np.outer(q, q) / 64, 10)
    return PowerRatioTable(np.clip(rq, 1e-6, 1.0), p_fg)


def load_rq_table(path):
    obj = json.loads(Path(path).read_text())
    return PowerRatioTable(obj["rq"], obj.get("p_fg", P_FG))


def save_rq_table(table, path):
    Path(path).write_text(json.dumps({"rq": table.rq.tolist(), "p_fg": table.p_fg}, indent=2))


def analytic_cost_provider(model, e_comp=1.0, e_mem=10.0):
    """MAC and memory-access counts per layer.

    #comp = C_o*C_in*k^2*h_out*w_out (fc: N*M).
    #acc  = weights fetched once + input feature map read once
            + output feature map written once.
    """
    comp, acc = [], []
    for l in model.layers:
        if l.kind == "conv":
            macs = l.C_o * l.C_in * l.k * l.k * l.h_out * l.w_out
            fm_in = l.C_in * l.h_in * l.w_in
            fm_out = l.C_o * l.h_out * l.w_out
        else:
            macs = l.N * l.M
            fm_in, fm_out = l.M, l.N
        comp.append(macs)
        acc.append(l.n_params + fm_in + fm_out)
    return CostProfile(np.array(comp), np.array(acc), e_comp, e_mem)


def load_cost_profile(path, model=None, base=None):
    """Read a cost-profile JSON; listed layers override the analytic counts."""
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed cost profile {path}: {exc}") from exc
    if base is None:
        if model is None:
            raise ValueError("need a model or a base profile")
        base = analytic_cost_provider(model)
    comp, acc = base.comp.copy(), base.acc.copy()
    for entry in obj.get("layers", []):
        for key in ("t", "comp", "acc"):
            if key not in entry:
                raise ValueError(f"cost profile entry {entry} lacks {key!r}")
        t = int(entry["t"])
        if not 0 <= t < len(comp):
            raise ValueError(f"cost profile names layer {t}, model has {len(comp)}")
        if entry["comp"] < 0 or entry["acc"] < 0:
            raise ValueError(f"negative counts for layer {t}")
        comp[t], acc[t] = entry["comp"], entry["acc"]
    return CostProfile(comp, acc, float(obj.get("e_comp", base.e_comp)),
                       float(obj.get("e_mem", base.e_mem)))


def reduction_coefficients(S, Q, gran, table=None):
    """(R_mem, R_pruned, R_unpruned) for one layer action.

    ``gran`` is "fine" or "coarse" (element masks are fine, anything
    structured is coarse).
    """
    table = table or default_rq_table()
    if not 0 <= S <= 1:
        raise ValueError(f"sparsity {S} outside [0, 1]")
    rq = table(Q, Q)
    if gran == "fine":
        return 1.0, table.p_fg * S, (1 - S) * rq
    if gran == "coarse":
        return 1 - S, 0.0, (1 - S) * rq
    raise ValueError(f"unknown granularity {gran!r}")


def mixed_coefficients(s_coarse, s_fine, Q, table):
    """Coefficients when a layer carries both structural and element sparsity.

    Structure is removed first; element sparsity ``s_fine`` is the share of
    the surviving weights that are zero. Reduces to the pure cases when
    either sparsity is 0.
    """
    rq = table(Q, Q)
    alive = 1 - s_coarse
    return alive, table.p_fg * s_fine * alive, alive * (1 - s_fine) * rq


def layer_energy(profile, t, coeffs):
    r_mem, r_pr, r_un = coeffs
    e_mem = profile.acc[t] * profile.e_mem * r_mem
    e_comp = profile.comp[t] * profile.e_comp * (r_pr + r_un)
    return float(e_mem), float(e_comp)


@dataclass
class EnergyBreakdown:
    e_mem: np.ndarray
    e_comp: np.ndarray
    coefficients: list
    baseline: float
    baseline_mem: float
    baseline_layers: np.ndarray = field(default=None)

    @property
    def per_layer(self):
        return self.e_mem + self.e_comp

    @property
    def total(self):
        return float(np.sum(self.per_layer))

    @property
    def gain(self):
        """1 - E_total / E_baseline, computed as a difference quotient."""
        return (self.baseline - self.total) / self.baseline if self.baseline > 0 else 0.0

    def as_dict(self):
        return {"e_total": self.total, "e_baseline": self.baseline, "energy_gain": self.gain,
                "layers": [{"t": t, "e_mem": float(m), "e_comp": float(c),
                            "r_mem": r[0], "r_pruned": r[1], "r_unpruned": r[2]}
                           for t, (m, c, r) in enumerate(zip(self.e_mem, self.e_comp,
                                                             self.coefficients))]}


def baseline_energy(profile):
    return [layer_energy(profile, t, (1.0, 0.0, 1.0)) for t in range(len(profile))]


def effective_structure(model, compressed):
    """Per-layer (coarse, fine) sparsity with dead upstream channels folded in.

    A filter removed upstream kills the matching input channel here, which
    is how structured pruning shrinks the next layer's MAC count.
    """
    out = []
    for r in compressed.layers:
        l = model.layers[r.layer]
        ck = r.channel_keep.copy()
        if l.source >= 0:
            alive = compressed.layers[l.source].filter_keep
            if l.kind == "fc" and model.layers[l.source].kind == "conv" and l.in_transform != "gap":
                alive = np.repeat(alive, l.M // len(alive))
            if len(alive) == len(ck):
                ck &= alive
        coarse = 1.0 - r.filter_keep.mean() * ck.mean()
        nd = r.element_keep.ndim - 2
        surv = np.broadcast_to(r.filter_keep.reshape((-1, 1) + (1,) * nd)
                               & ck.reshape((1, -1) + (1,) * nd), r.element_keep.shape)
        n = surv.sum()
        fine = float((surv & ~r.element_keep).sum() / n) if n else 0.0
        out.append((float(coarse), fine))
    return out


def total_energy(model, plan, profile=None, table=None, ranked_pattern="filter"):
    """Energy of a plan (nominal S per action) or of a CompressedModel (achieved masks)."""
    profile = profile or analytic_cost_provider(model)
    table = table or default_rq_table()
    base = baseline_energy(profile)
    coeffs = []
    if isinstance(plan, CompressedModel):
        for (sc, sf), r in zip(effective_structure(model, plan), plan.layers):
            coeffs.append(mixed_coefficients(sc, sf, r.bits, table))
    elif isinstance(plan, CompressionPlan):
        for a in plan:
            g = granularity(a.technique, model.layers[a.layer].kind, ranked_pattern)
            coeffs.append(reduction_coefficients(a.sparsity, a.bits,
                                                 "fine" if g == "element" else "coarse", table))
    else:
        raise TypeError(f"cannot price {type(plan).__name__}")
    e = np.array([layer_energy(profile, t, c) for t, c in enumerate(coeffs)])
    b = np.array(base)
    # same summation path as EnergyBreakdown.total so a no-op prices to gain 0 exactly
    return EnergyBreakdown(e[:, 0], e[:, 1], [tuple(float(v) for v in c) for c in coeffs],
                           float(np.sum(b[:, 0] + b[:, 1])), float(np.sum(b[:, 0])),
                           b[:, 0] + b[:, 1])
