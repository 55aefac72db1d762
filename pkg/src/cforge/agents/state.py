"""13-dimensional per-layer state embedding."""
import numpy as np

STATE_DIM = 13
STATIC = 11  # t .. M_t are fixed per model


def raw_state(layer, t, e_dense, e_reduced, prev_action):
    if layer.kind == "conv":
        head = [t, 0, layer.C_o, layer.C_in, layer.h_in, layer.w_in, layer.stride, layer.k]
    else:
        head = [t, 1, layer.M, layer.N, layer.h_in, layer.w_in, 0, 1]
    return np.array(head + [e_dense, layer.n_params, layer.mem_bits, e_reduced, prev_action],
                    dtype=np.float64)


class StateBuilder:
    """Raw and normalised layer states for one model.

    Static features are min-max scaled over the model's layers. The energy
    reduced so far is scaled by the dense model energy; the previous
    sparsity action already lives in [0, 1].
    """

    def __init__(self, model, layer_energies):
        self.model = model
        self.energies = np.asarray(layer_energies, dtype=np.float64)
        self.e_total = float(self.energies.sum())
        rows = np.array([raw_state(l, t, self.energies[t], 0.0, 0.0)
                         for t, l in enumerate(model.layers)])[:, :STATIC]
        self.lo = rows.min(axis=0)
        self.span = rows.max(axis=0) - self.lo

    def __call__(self, t, e_reduced=0.0, prev_action=0.0):
        return build_state(self, t, e_reduced, prev_action)


def build_state(builder, t, e_reduced=0.0, prev_action=0.0):
    """(raw, normalised) 13-vectors for layer t."""
    raw = raw_state(builder.model.layers[t], t, builder.energies[t], e_reduced, prev_action)
    norm = np.empty(STATE_DIM)
    span = np.where(builder.span > 0, builder.span, 1.0)
    norm[:STATIC] = np.where(builder.span > 0, (raw[:STATIC] - builder.lo) / span, 0.0)
    norm[STATIC] = e_reduced / builder.e_total if builder.e_total > 0 else 0.0
    norm[STATIC + 1] = prev_action
    return raw, norm.astype(np.float32)
