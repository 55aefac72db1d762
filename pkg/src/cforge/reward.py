"""40x40 reward table over (accuracy loss %, energy gain %)."""
import csv
import math
from dataclasses import dataclass

import numpy as np

N_BINS = 40
LOSS_RANGE = (0.0, 20.0)
GAIN_RANGE = (0.0, 100.0)
LOW_ACTION_REWARD = -0.1
LOW_GAIN, LOW_LOSS = 5.0, 5.0
SOFT_LOSS = 10.0


def default_generator(loss_pct, gain_pct):
    """gain * w(loss): a quadratic roll-off below 10% loss, negative beyond."""
    gain = gain_pct / 100.0
    x = loss_pct / SOFT_LOSS
    w = np.where(loss_pct < SOFT_LOSS, 1.0 - x ** 2, -0.5 * x)
    return gain * w


@dataclass
class RewardLUT:
    grid: np.ndarray         # [loss bin, gain bin]
    loss_edges: np.ndarray   # N+1 edges
    gain_edges: np.ndarray

    @property
    def shape(self):
        return self.grid.shape

    @property
    def loss_mid(self):
        return 0.5 * (self.loss_edges[:-1] + self.loss_edges[1:])

    @property
    def gain_mid(self):
        return 0.5 * (self.gain_edges[:-1] + self.gain_edges[1:])

    def bin_of(self, loss_pct, gain_pct):
        if math.isnan(loss_pct) or math.isnan(gain_pct):
            raise ValueError("NaN passed to reward lookup")
        loss_pct = min(max(loss_pct, self.loss_edges[0]), self.loss_edges[-1])
        gain_pct = min(max(gain_pct, self.gain_edges[0]), self.gain_edges[-1])
        # left-closed bins; the top edge folds into the last bin
        i = min(int(np.searchsorted(self.loss_edges, loss_pct, side="right")) - 1, len(self.grid) - 1)
        j = min(int(np.searchsorted(self.gain_edges, gain_pct, side="right")) - 1,
                self.grid.shape[1] - 1)
        return i, j

    def lookup(self, loss_pct, gain_pct):
        i, j = self.bin_of(loss_pct, gain_pct)
        return float(self.grid[i, j])

    @property
    def max(self):
        return float(self.grid.max())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in self.grid:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, loss_range=LOSS_RANGE, gain_range=GAIN_RANGE):
        with open(path, newline="") as fh:
            grid = np.array([[float(v) for v in row] for row in csv.reader(fh) if row])
        n_l, n_g = grid.shape
        return cls(grid, np.linspace(*loss_range, n_l + 1), np.linspace(*gain_range, n_g + 1))


def build_lut(n_loss=N_BINS, n_gain=N_BINS, loss_range=LOSS_RANGE, gain_range=GAIN_RANGE,
              generator=default_generator, loss_edges=None, gain_edges=None):
    """Evaluate ``generator`` at bin midpoints, then stamp the low-action region.

    Cells with gain < 5% and loss < 10% get a small negative reward, which
    discourages near-zero compression. Stamping the whole loss < 10% strip
    (not only loss < 5%) keeps that half of the table non-increasing in loss;
    beyond 10% loss every cell is <= 0 and larger gains are penalised more.
    """
    le = np.linspace(*loss_range, n_loss + 1) if loss_edges is None else np.asarray(loss_edges, float)
    ge = np.linspace(*gain_range, n_gain + 1) if gain_edges is None else np.asarray(gain_edges, float)
    for name, e in (("loss", le), ("gain", ge)):
        if e.ndim != 1 or len(e) < 2 or not (np.diff(e) > 0).all():
            raise ValueError(f"{name} edges must be strictly increasing")
    lm = 0.5 * (le[:-1] + le[1:])
    gm = 0.5 * (ge[:-1] + ge[1:])
    grid = np.asarray(generator(lm[:, None], gm[None, :]), dtype=np.float64)
    grid = np.broadcast_to(grid, (len(lm), len(gm))).copy()
    low = (gm[None, :] < LOW_GAIN) & (lm[:, None] < SOFT_LOSS)
    grid[low] = LOW_ACTION_REWARD
    return RewardLUT(grid, le, ge)


def lookup(lut, loss_pct, gain_pct):
    return lut.lookup(loss_pct, gain_pct)
