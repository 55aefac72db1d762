"""Per-channel asymmetric linear PTQ with Laplace activation clipping."""
from dataclasses import dataclass

import numpy as np

# optimal clipping multipliers (alpha / b) for a Laplace(b) source, Q = 2..8
LAPLACE_LAMBDA = {2: 2.83, 3: 3.89, 4: 5.03, 5: 6.20, 6: 7.41, 7: 8.64, 8: 9.89}
MIN_BITS, MAX_BITS = 2, 8


def _check_bits(Q):
    if not MIN_BITS <= Q <= MAX_BITS:
        raise ValueError(f"bits {Q} outside [{MIN_BITS}, {MAX_BITS}]")


def affine_grid(lo, hi, Q):
    """Scale and offset of the 2**Q-level grid spanning [lo, hi].

    A degenerate range gets scale 1 so that the lone value maps to itself.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    span = hi - lo
    scale = np.where(span > 0, span / (2 ** Q - 1), 1.0)
    return scale, lo


def fake_quant(x, scale, offset, Q):
    """quantize -> dequantize; values are clipped onto the grid range."""
    q = np.clip(np.rint((x - offset) / scale), 0, 2 ** Q - 1)
    return q * scale + offset


@dataclass
class QuantParams:
    bits: int
    scale: np.ndarray        # per output channel
    offset: np.ndarray       # per output channel (channel minimum)
    zero_point: np.ndarray   # integer code closest to real 0
    act_alpha: float = float("nan")
    act_lo: float = float("nan")
    act_hi: float = float("nan")

    @property
    def levels(self):
        return 2 ** self.bits


def quantize_weights(weights, Q, keep=None):
    """Per-output-channel asymmetric fake quantization.

    The range of each channel is taken over kept weights only and pruned
    positions stay exactly zero.
    """
    _check_bits(Q)
    w = np.asarray(weights)
    C = w.shape[0]
    flat = w.reshape(C, -1).astype(np.float64)
    km = np.ones_like(flat, dtype=bool) if keep is None else np.asarray(keep, bool).reshape(C, -1)
    big = np.finfo(np.float64).max
    lo = np.where(km, flat, big).min(axis=1)
    hi = np.where(km, flat, -big).max(axis=1)
    empty = ~km.any(axis=1)
    lo[empty] = hi[empty] = 0.0
    scale, offset = affine_grid(lo, hi, Q)
    wq = fake_quant(flat, scale[:, None], offset[:, None], Q)
    wq = np.where(km, wq, 0.0).reshape(w.shape).astype(w.dtype)
    zp = np.rint(-offset / scale).astype(np.int64)
    return wq, QuantParams(Q, scale, offset, zp)


class ActQuant:
    """Per-tensor fake quantizer for a layer input."""

    def __init__(self, lo, hi, Q, alpha):
        self.lo, self.hi, self.bits, self.alpha = float(lo), float(hi), Q, float(alpha)
        self.scale, self.offset = (float(v) for v in affine_grid(self.lo, self.hi, Q))

    def __call__(self, x):
        return fake_quant(x, self.scale, self.offset, self.bits).astype(x.dtype)

    def __repr__(self):
        return f"ActQuant([{self.lo:.4g}, {self.hi:.4g}], Q={self.bits})"


def laplace_clip(acts, Q):
    """alpha = lambda(Q) * b with b the Laplace scale E|a - mu|."""
    _check_bits(Q)
    a = np.asarray(acts, dtype=np.float64).ravel()
    mu = a.mean()
    b = np.abs(a - mu).mean()
    return LAPLACE_LAMBDA[Q] * b, mu


def calibrate_activations(acts, Q):
    if np.size(acts) == 0:
        raise ValueError("empty calibration activations")
    alpha, mu = laplace_clip(acts, Q)
    a_min, a_max = float(np.min(acts)), float(np.max(acts))
    lo, hi = max(a_min, mu - alpha), min(a_max, mu + alpha)
    if alpha <= 0 or hi < lo:
        lo = hi = a_min
    return ActQuant(lo, hi, Q, alpha if alpha > 0 else 1.0)


def quantize_layer(weights, activations_calib, Q, keep=None):
    """Fake-quantized weights plus QuantParams for one layer."""
    wq, qp = quantize_weights(weights, Q, keep)
    aq = calibrate_activations(activations_calib, Q)
    qp.act_alpha, qp.act_lo, qp.act_hi = aq.alpha, aq.lo, aq.hi
    return qp, wq, aq
