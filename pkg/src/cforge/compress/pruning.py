"""The seven one-shot pruners.

Every pruner removes exactly floor(S * units) units, where a unit is an
element, a filter (fc: a row), or an input channel. Ties go to the lower
flat index (stable argsort).
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..core.graph import loss_and_gradients
from ..core.ops import im2col

log = logging.getLogger(__name__)

TECHNIQUES = ("Sensitivity", "Level", "Splicing", "L1Ranked", "L2Ranked", "Bernoulli",
              "FMReconstruction")
FINE_GRAINED = frozenset(TECHNIQUES[:3])
SPLICE_BAND = 0.1


@dataclass
class PruningMask:
    """Kept-unit mask. ``keep`` is weight-shaped for element granularity,
    length C_o for filter/row and length C_in for channel."""

    layer: int
    granularity: str
    keep: np.ndarray

    @property
    def units(self):
        return self.keep.size

    @property
    def pruned(self):
        return int(self.units - np.count_nonzero(self.keep))

    @property
    def sparsity(self):
        return self.pruned / self.units if self.units else 0.0

    def weight_mask(self, shape):
        if self.granularity == "element":
            return self.keep.reshape(shape)
        extra = (1,) * (len(shape) - 2)
        if self.granularity in ("filter", "row"):
            return np.broadcast_to(self.keep.reshape((-1, 1) + extra), shape)
        return np.broadcast_to(self.keep.reshape((1, -1) + extra), shape)


def n_pruned(S, units):
    if not 0.0 <= S <= 1.0:
        raise ValueError(f"sparsity {S} outside [0, 1]")
    # guard against S*units landing a hair under an integer
    return min(units, int(math.floor(S * units + 1e-9)))


def _drop_lowest(scores, k):
    keep = np.ones(scores.size, dtype=bool)
    if k:
        keep[np.argsort(scores.ravel(), kind="stable")[:k]] = False
    return keep


def prune_level(weights, S, layer=0):
    w = np.asarray(weights)
    keep = _drop_lowest(np.abs(w), n_pruned(S, w.size)).reshape(w.shape)
    return PruningMask(layer, "element", keep)


def prune_splicing(weights, S, prev_mask=None, band=SPLICE_BAND, layer=0):
    """Two-threshold magnitude mask with hysteresis.

    Below ``(1-band)*theta`` is pruned, above ``(1+band)*theta`` kept, and
    the band in between keeps its ``prev_mask`` state (default: kept).
    ``theta`` is the level threshold; the band is then filled or drained
    (smallest first) so exactly floor(S*P) elements end up pruned.
    """
    w = np.abs(np.asarray(weights)).ravel()
    k = n_pruned(S, w.size)
    prev = np.ones(w.size, dtype=bool) if prev_mask is None else np.asarray(prev_mask, bool).ravel()
    if k in (0, w.size):
        return PruningMask(layer, "element", np.full(weights.shape, k == 0))
    order = np.argsort(w, kind="stable")
    theta = w[order[k - 1]]
    lo, hi = (1 - band) * theta, (1 + band) * theta
    below = w < lo
    in_band = ~below & (w <= hi)
    pruned = below | (in_band & ~prev)
    excess = int(pruned.sum()) - k
    if excess > 0:
        # revive the largest pruned band elements first, then the largest below
        cand = [i for i in order[::-1] if pruned[i] and in_band[i]]
        cand += [i for i in order[::-1] if pruned[i] and below[i]]
        pruned[cand[:excess]] = False
    elif excess < 0:
        cand = [i for i in order if not pruned[i]]
        pruned[cand[:-excess]] = True
    return PruningMask(layer, "element", ~pruned.reshape(weights.shape))


def saliency_from_grad(weights, grad):
    s = np.abs(weights * grad)
    if not np.any(s):
        return np.abs(weights)
    return s


def prune_sensitivity(model, batch, t, S, grads=None):
    """|w * dL/dw| ranking on a calibration batch; |w| if the gradient vanishes."""
    if grads is None:
        grads = [g for g, _ in loss_and_gradients(model, batch)[1]]
    w = model.layers[t].weight
    keep = _drop_lowest(saliency_from_grad(w, grads[t]), n_pruned(S, w.size))
    return PruningMask(t, "element", keep.reshape(w.shape))


def _structured_axis(weights, pattern):
    fc = np.ndim(weights) == 2
    if fc and pattern == "filter":
        raise ValueError("fc layers do not have filters; use pattern='row'")
    if not fc and pattern == "row":
        raise ValueError("row pruning applies to fc layers only")
    if pattern in ("filter", "row"):
        return 0, "filter" if not fc else "row"
    if pattern == "channel":
        return 1, "channel"
    raise ValueError(f"unknown pattern {pattern!r}")


def _prune_ranked(weights, S, pattern, ord_, layer):
    axis, gran = _structured_axis(weights, pattern)
    w = np.moveaxis(np.asarray(weights), axis, 0)
    flat = w.reshape(w.shape[0], -1)
    norms = np.abs(flat).sum(axis=1) if ord_ == 1 else np.sqrt((flat.astype(np.float64) ** 2).sum(axis=1))
    return PruningMask(layer, gran, _drop_lowest(norms, n_pruned(S, len(norms))))


def prune_l1_ranked(weights, S, pattern="filter", layer=0):
    return _prune_ranked(weights, S, pattern, 1, layer)


def prune_l2_ranked(weights, S, pattern="filter", layer=0):
    return _prune_ranked(weights, S, pattern, 2, layer)


def prune_bernoulli(weights, S, seed, layer=0):
    """Uniformly drops floor(S*C_o) filters (fc: rows) without replacement.

    A seeded permutation is used, so masks are nested in S.
    """
    n = np.shape(weights)[0]
    k = n_pruned(S, n)
    keep = np.ones(n, dtype=bool)
    keep[np.random.default_rng(seed).permutation(n)[:k]] = False
    gran = "row" if np.ndim(weights) == 2 else "filter"
    return PruningMask(layer, gran, keep)


class ChannelSelector:
    """Greedy input-channel removal for one conv layer with least-squares refit.

    Works on the patch matrix A of the layer's calibration input and the
    dense pre-bias output Y. At each step the channel whose removal grows
    the refit residual least is dropped; the order is cached so any S is
    a prefix lookup.
    """

    def __init__(self, weight, inputs, stride, pad, ridge=1e-7, max_rows=4096, seed=0):
        C_o, C_in, k, _ = weight.shape
        A = im2col(inputs.astype(np.float64), k, stride, pad).reshape(-1, C_in * k * k)
        if len(A) > max_rows:
            A = A[np.sort(np.random.default_rng(seed).choice(len(A), max_rows, replace=False))]
        self.A = A
        self.Y = A @ weight.reshape(C_o, -1).T.astype(np.float64)
        self.shape, self.k2 = weight.shape, k * k
        self.G = A.T @ A
        self.H = A.T @ self.Y
        self.ridge = ridge * max(np.trace(self.G) / len(self.G), 1e-12)
        self.order = self._greedy()

    def _cols(self, chans):
        return np.concatenate([np.arange(c * self.k2, (c + 1) * self.k2) for c in chans]) \
            if len(chans) else np.zeros(0, dtype=int)

    def _greedy(self):
        C_in = self.shape[1]
        kept = list(range(C_in))
        order = []
        for _ in range(C_in - 1):
            cols = self._cols(kept)
            G = self.G[np.ix_(cols, cols)] + self.ridge * np.eye(len(cols))
            Ginv = np.linalg.inv(G)
            beta = Ginv @ self.H[cols]
            costs = []
            for j in range(len(kept)):
                b = slice(j * self.k2, (j + 1) * self.k2)
                # residual growth from zeroing block b of the refit
                Bb = np.linalg.inv(Ginv[b, b])
                costs.append(float(np.einsum("io,ij,jo->", beta[b], Bb, beta[b])))
            j = int(np.argmin(costs))  # argmin picks the lowest index on ties
            order.append(kept.pop(j))
        order.extend(kept)
        return order

    def residual(self, keep, W=None):
        """Batch reconstruction error ||A W^T - Y||^2 of a channel subset."""
        C_o = self.shape[0]
        if W is None:
            W = self.refit(keep)
        Wm = W * keep[None, :, None, None]
        R = self.A @ Wm.reshape(C_o, -1).T.astype(np.float64) - self.Y
        return float((R ** 2).sum())

    def refit(self, keep):
        from ..core.linalg import least_squares_solve

        C_o = self.shape[0]
        W = np.zeros(self.shape)
        chans = np.flatnonzero(keep)
        if len(chans) == 0:
            return W
        cols = self._cols(chans)
        X = least_squares_solve(self.A[:, cols], self.Y)
        W.reshape(C_o, -1)[:, cols] = X.T
        return W

    def mask(self, S):
        keep = np.ones(self.shape[1], dtype=bool)
        keep[self.order[:n_pruned(S, self.shape[1])]] = False
        return keep


def prune_fm_reconstruction(model, batch, t, S, selector=None, inputs=None):
    """Channel pruning by greedy output-reconstruction, then LS refit.

    Returns (mask, weights). For fc layers this falls back to row pruning
    by output energy on the batch, without refit.
    """
    layer = model.layers[t]
    if layer.kind == "fc":
        if inputs is None:
            from ..core.graph import layer_outputs
            inputs = layer_outputs(model, batch.inputs)[1][t]
        out = inputs @ layer.weight.T
        energy = (out.astype(np.float64) ** 2).mean(axis=0)
        keep = _drop_lowest(energy, n_pruned(S, layer.N))
        return PruningMask(t, "row", keep), layer.weight.copy()
    if selector is None:
        if inputs is None:
            from ..core.graph import layer_outputs
            inputs = layer_outputs(model, batch.inputs)[1][t]
        selector = ChannelSelector(layer.weight, inputs, layer.stride, layer.pad)
    keep = selector.mask(S)
    if keep.all():
        return PruningMask(t, "channel", keep), layer.weight.copy()
    try:
        W = selector.refit(keep)
        if not np.all(np.isfinite(W)):
            raise np.linalg.LinAlgError("non-finite refit")
    except np.linalg.LinAlgError as exc:
        log.warning("layer %d: refit failed (%s); keeping original weights", t, exc)
        W = layer.weight * keep[None, :, None, None]
    return PruningMask(t, "channel", keep), W.astype(layer.weight.dtype)
