"""DDPG over the continuous (sparsity, precision) action pair."""
import numpy as np
from scipy.stats import truncnorm

from ..core.mlp import MLP, Adam
from .state import STATE_DIM

S_CAP = 0.9


def map_actions(a_s, a_q, s_cap=S_CAP):
    """[0,1]^2 -> (sparsity, bits): S = a_s * s_cap, Q = round(2 + 6 a_q)."""
    a_s = min(max(float(a_s), 0.0), 1.0)
    a_q = min(max(float(a_q), 0.0), 1.0)
    # round half up so a_q = 0.5 lands on 5 bits
    return a_s * s_cap, int(np.floor(2 + 6 * a_q + 0.5))


def polyak_update(online, target, tau):
    """target <- tau * online + (1 - tau) * target, in place."""
    src = online.parameters() if hasattr(online, "parameters") else online
    for name, layer, k in target.param_items():
        p = src[name]
        if p.shape != layer.params[k].shape:
            raise ValueError(f"shape mismatch for {name}")
        layer.params[k] = (tau * p + (1 - tau) * layer.params[k]).astype(layer.params[k].dtype)


def clone(net):
    import copy
    return copy.deepcopy(net)


class DDPGAgent:
    def __init__(self, rng, state_dim=STATE_DIM, action_dim=2, hidden=(300, 300, 300),
                 actor_lr=1e-3, critic_lr=1e-4, tau=0.01, gamma=1.0, sigma=0.6,
                 dtype=np.float32, logit_penalty=0.0):
        self.rng = rng
        self.actor = MLP.build([state_dim, *hidden, action_dim], rng, head="sigmoid", dtype=dtype,
                               last_init="small")
        self.critic = MLP.build([state_dim + action_dim, *hidden, 1], rng, head="linear",
                                dtype=dtype, last_init="small")
        self.actor_t, self.critic_t = clone(self.actor), clone(self.critic)
        self.actor_opt = Adam(self.actor, actor_lr)
        self.critic_opt = Adam(self.critic, critic_lr)
        self.tau, self.gamma, self.sigma = tau, gamma, sigma
        self.logit_penalty = logit_penalty
        self.state_dim, self.action_dim = state_dim, action_dim
        self.dtype = dtype
        self.updates = 0

    # index of the last hidden ReLU output inside actor.layers
    @property
    def _feature_depth(self):
        return len(self.actor.layers) - 2

    def policy(self, states):
        return self.actor.forward(np.atleast_2d(states).astype(self.dtype))

    def features(self, states):
        """Last hidden-layer activations of the actor (Rainbow's input)."""
        return self.actor.forward(np.atleast_2d(states).astype(self.dtype), upto=self._feature_depth)

    def act(self, state, explore=True, rng=None):
        mu = self.policy(state)[0].astype(np.float64)
        if not explore or self.sigma <= 0:
            return mu
        rng = rng or self.rng
        a, b = (0 - mu) / self.sigma, (1 - mu) / self.sigma
        return np.clip(truncnorm.rvs(a, b, loc=mu, scale=self.sigma, random_state=rng), 0.0, 1.0)

    def q_values(self, states, actions, target=False):
        net = self.critic_t if target else self.critic
        return net.forward(np.concatenate([states, actions], axis=1).astype(self.dtype))[:, 0]

    def update(self, states, actions, rewards, next_states, dones, weights=None,
               update_actor=True):
        """One critic (+ actor) step. Returns (critic_loss, actor_loss, |td|)."""
        B = len(states)
        states = states.astype(self.dtype)
        next_states = next_states.astype(self.dtype)
        actions = actions.astype(self.dtype)
        w = np.ones(B, dtype=self.dtype) if weights is None else weights.astype(self.dtype)
        next_a = self.actor_t.forward(next_states)
        q_next = self.q_values(next_states, next_a, target=True)
        y = rewards + self.gamma * (1 - dones) * q_next
        q = self.q_values(states, actions)
        td = q - y
        critic_loss = float(np.mean(w * td ** 2))
        self.critic.backward((2 * w * td / B)[:, None].astype(self.dtype))
        self.critic_opt.step()
        if not update_actor:
            polyak_update(self.critic, self.critic_t, self.tau)
            return critic_loss, float("nan"), np.abs(td)

        actor_loss = self._actor_backward(states)
        self.actor_opt.step()

        polyak_update(self.actor, self.actor_t, self.tau)
        polyak_update(self.critic, self.critic_t, self.tau)
        self.updates += 1
        return critic_loss, actor_loss, np.abs(td)

    def _actor_backward(self, states):
        """Fill actor gradients of -mean Q(s, mu(s)) (+ optional logit penalty)."""
        B = len(states)
        states = states.astype(self.dtype)
        mu = self.actor.forward(states)
        q_pi = self.critic.forward(np.concatenate([states, mu], axis=1))
        loss = float(-np.mean(q_pi))
        dinp = self.critic.backward(np.full((B, 1), -1.0 / B, dtype=self.dtype))
        head = len(self.actor.layers) - 1
        dz = self.actor.layers[head].backward(dinp[:, self.state_dim:])
        if self.logit_penalty:
            # keeps the sigmoid head out of saturation, where its gradient vanishes
            mu64 = np.clip(mu.astype(np.float64), 1e-7, 1 - 1e-7)
            z = np.log(mu64 / (1 - mu64))
            loss += float(self.logit_penalty * np.mean(np.sum(z * z, axis=1)))
            dz = dz + (2 * self.logit_penalty * z / B).astype(self.dtype)
        self.actor.backward(dz, start=head)
        return loss

    def actor_gradients(self, states):
        """Gradient of -mean Q(s, mu(s)) w.r.t. actor parameters (no step)."""
        self._actor_backward(states)
        return {k: v.copy() for k, v in self.actor.gradients().items()}

    def state_dict(self):
        out = {}
        for tag, net in (("actor", self.actor), ("critic", self.critic),
                         ("actor_t", self.actor_t), ("critic_t", self.critic_t)):
            out.update({f"{tag}.{k}": v for k, v in net.parameters().items()})
        return out

    def load_state_dict(self, d):
        for tag, net in (("actor", self.actor), ("critic", self.critic),
                         ("actor_t", self.actor_t), ("critic_t", self.critic_t)):
            net.load_parameters({k[len(tag) + 1:]: v for k, v in d.items()
                                 if k.split(".")[0] == tag})


def ddpg_act(agent, state, explore=True, rng=None):
    return agent.act(state, explore, rng)


def ddpg_update(agent, replay, batch_size, rng, beta=None, update_actor=True):
    """Sample a prioritised batch, update, and refresh priorities."""
    items, idx, w = replay.sample(batch_size, rng, beta)
    s = np.stack([it["state"] for it in items])
    a = np.stack([it["action"] for it in items])
    r = np.array([it["reward"] for it in items], dtype=np.float64)
    s2 = np.stack([it["next_state"] for it in items])
    d = np.array([it["done"] for it in items], dtype=np.float64)
    closs, aloss, td = agent.update(s, a, r, s2, d, w, update_actor)
    replay.update_priorities(idx, td + replay.eps)
    return closs, aloss
