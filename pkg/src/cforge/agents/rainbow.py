"""Distributional dueling double-Q agent with noisy heads (technique selector).

Consumes the DDPG actor's last hidden features; its loss never reaches the
actor.
"""
import copy

import numpy as np

from ..core.mlp import MLP, Adam
from ..core.ops import log_softmax
from .ddpg import polyak_update

N_TECHNIQUES = 7
N_ATOMS = 51


def distributional_projection(rewards, dones, next_dist, support, gamma):
    """Project r + gamma * z (z ~ next_dist) onto the fixed support.

    Works on a batch: rewards/dones (B,), next_dist (B, n_atoms).
    """
    rewards = np.atleast_1d(np.asarray(rewards, dtype=np.float64))
    dones = np.atleast_1d(np.asarray(dones, dtype=np.float64))
    p = np.atleast_2d(np.asarray(next_dist, dtype=np.float64))
    z = np.asarray(support, dtype=np.float64)
    v_min, v_max, n = z[0], z[-1], len(z)
    dz = (v_max - v_min) / (n - 1)
    B = len(rewards)
    tz = np.clip(rewards[:, None] + (1 - dones[:, None]) * gamma * z[None, :], v_min, v_max)
    b = (tz - v_min) / dz
    lo = np.floor(b).astype(int)
    hi = np.ceil(b).astype(int)
    # guard float noise around integer positions
    near = np.isclose(b, np.rint(b), rtol=0, atol=1e-9)
    lo = np.where(near, np.rint(b).astype(int), lo)
    hi = np.where(near, lo, hi)
    m = np.zeros((B, n))
    rows = np.repeat(np.arange(B), n)
    w_lo = np.where(lo == hi, p, p * (hi - b))
    w_hi = np.where(lo == hi, 0.0, p * (b - lo))
    np.add.at(m, (rows, lo.ravel()), w_lo.ravel())
    np.add.at(m, (rows, hi.ravel()), w_hi.ravel())
    return m


class DuelingDistNet:
    def __init__(self, n_in, n_actions, n_atoms, hidden, rng, sigma0=0.5, dtype=np.float32):
        self.A, self.Z = n_actions, n_atoms
        self.value = MLP.build([n_in, hidden, n_atoms], rng, noisy_last=True, sigma0=sigma0,
                               dtype=dtype)
        self.adv = MLP.build([n_in, hidden, n_actions * n_atoms], rng, noisy_last=True,
                             sigma0=sigma0, dtype=dtype)

    def nets(self):
        return (("value", self.value), ("adv", self.adv))

    def logits(self, x):
        B = len(x)
        v = self.value.forward(x).reshape(B, 1, self.Z)
        a = self.adv.forward(x).reshape(B, self.A, self.Z)
        return v + a - a.mean(axis=1, keepdims=True)

    def dist(self, x):
        return np.exp(log_softmax(self.logits(x).astype(np.float64)))

    def backward(self, dlogits):
        B = len(dlogits)
        dv = dlogits.sum(axis=1)
        da = dlogits - dlogits.mean(axis=1, keepdims=True)
        self.value.backward(dv.astype(self.value.layers[0].params["w"].dtype))
        self.adv.backward(da.reshape(B, -1).astype(self.adv.layers[0].params["w"].dtype))

    def reset_noise(self, rng):
        self.value.reset_noise(rng)
        self.adv.reset_noise(rng)

    def set_noisy(self, flag):
        self.value.set_noisy(flag)
        self.adv.set_noisy(flag)

    def parameters(self):
        return {f"{tag}.{k}": v for tag, net in self.nets() for k, v in net.parameters().items()}

    def load_parameters(self, d):
        for tag, net in self.nets():
            net.load_parameters({k[len(tag) + 1:]: v for k, v in d.items() if k.split(".")[0] == tag})


class RainbowAgent:
    def __init__(self, rng, n_in=300, n_actions=N_TECHNIQUES, n_atoms=N_ATOMS, v_min=-1.0,
                 v_max=1.0, hidden=128, lr=6.25e-5, adam_eps=1.5e-4, gamma=1.0, n_step=3,
                 sigma0=0.5, tau=0.01, dtype=np.float32):
        self.rng = rng
        self.net = DuelingDistNet(n_in, n_actions, n_atoms, hidden, rng, sigma0, dtype)
        self.target = copy.deepcopy(self.net)
        self.opts = [Adam(self.net.value, lr, eps=adam_eps), Adam(self.net.adv, lr, eps=adam_eps)]
        self.support = np.linspace(v_min, v_max, n_atoms)
        self.n_actions, self.gamma, self.n_step, self.tau = n_actions, gamma, n_step, tau
        self.dtype = dtype
        self.updates = 0

    def q_values(self, feats):
        return self.net.dist(np.atleast_2d(feats).astype(self.dtype)) @ self.support

    def act(self, feats, frozen, rng=None):
        rng = rng or self.rng
        if frozen:
            return int(rng.integers(self.n_actions))
        self.net.reset_noise(rng)
        return int(np.argmax(self.q_values(feats)[0]))

    def target_dist(self, rewards, next_feats, dones, gamma_n):
        """Double-Q: online net picks a*, target net supplies its distribution."""
        B = len(rewards)
        a_star = self.q_values(next_feats).argmax(axis=1)
        nd = self.target.dist(next_feats.astype(self.dtype))[np.arange(B), a_star]
        return np.vstack([distributional_projection(rewards[i], dones[i], nd[i], self.support,
                                                    gamma_n[i]) for i in range(B)])

    def update(self, feats, actions, rewards, next_feats, dones, gamma_n=None, weights=None):
        """KL(projected target || predicted) step. Returns (loss, per-sample KL)."""
        B = len(feats)
        gamma_n = np.full(B, self.gamma ** self.n_step) if gamma_n is None else gamma_n
        w = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64)
        self.net.reset_noise(self.rng)
        self.target.reset_noise(self.rng)
        m = self.target_dist(np.asarray(rewards, float), next_feats, np.asarray(dones, float), gamma_n)
        logits = self.net.logits(feats.astype(self.dtype)).astype(np.float64)
        lp = log_softmax(logits[np.arange(B), actions])
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(m > 0, m * np.log(m), 0.0).sum(axis=1)
        kl = ent - (m * lp).sum(axis=1)
        loss = float(np.mean(w * kl))
        dlog = np.zeros_like(logits)
        dlog[np.arange(B), actions] = (np.exp(lp) - m) * (w / B)[:, None]
        self.net.backward(dlog)
        for opt in self.opts:
            opt.step()
        for (_, net), (_, tnet) in zip(self.net.nets(), self.target.nets()):
            polyak_update(net, tnet, self.tau)
        self.updates += 1
        return loss, np.maximum(kl, 0.0)

    def state_dict(self):
        d = {f"online.{k}": v for k, v in self.net.parameters().items()}
        d.update({f"target.{k}": v for k, v in self.target.parameters().items()})
        return d

    def load_state_dict(self, d):
        self.net.load_parameters({k[7:]: v for k, v in d.items() if k.startswith("online.")})
        self.target.load_parameters({k[7:]: v for k, v in d.items() if k.startswith("target.")})


def rainbow_act(agent, features, frozen, rng=None):
    return agent.act(features, frozen, rng)


def rainbow_update(agent, replay, batch_size, rng, feature_fn, beta=None):
    """Prioritised update; features are recomputed by ``feature_fn`` and
    treated as constants."""
    items, idx, w = replay.sample(batch_size, rng, beta)
    s = np.stack([it["state"] for it in items])
    s2 = np.stack([it["next_state"] for it in items])
    feats, nfeats = feature_fn(s), feature_fn(s2)
    a = np.array([it["technique"] for it in items])
    r = np.array([it["reward"] for it in items], dtype=np.float64)
    d = np.array([it["done"] for it in items], dtype=np.float64)
    g = np.array([it["gamma_n"] for it in items], dtype=np.float64)
    loss, kl = agent.update(feats, a, r, nfeats, d, g, w)
    replay.update_priorities(idx, kl + replay.eps)
    return loss
