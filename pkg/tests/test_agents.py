import numpy as np
import pytest
from scipy.stats import chisquare

from cforge.agents.ddpg import DDPGAgent, ddpg_update, map_actions, polyak_update
from cforge.agents.monitor import RewardMonitor
from cforge.agents.rainbow import RainbowAgent, rainbow_update
from cforge.agents.replay import PrioritizedReplay, SumTree
from cforge.agents.state import STATE_DIM, StateBuilder, raw_state
from cforge.core.mlp import MLP

from conftest import residual_toy


def test_map_actions_endpoints():
    assert map_actions(0, 0) == (0.0, 2)
    assert map_actions(1, 1) == (pytest.approx(0.9), 8)
    assert map_actions(0.5, 0.5)[1] == 5
    # out-of-range inputs are clamped
    assert map_actions(-3, 7) == (0.0, 8)


class TestPolyak:
    def nets(self):
        rng = np.random.default_rng(0)
        return (MLP.build([3, 4, 2], rng, dtype=np.float64),
                MLP.build([3, 4, 2], rng, dtype=np.float64))

    def test_tau_one_copies(self):
        a, b = self.nets()
        polyak_update(a, b, 1.0)
        for k, v in a.parameters().items():
            assert np.array_equal(b.parameters()[k], v)

    def test_tau_zero_keeps(self):
        a, b = self.nets()
        before = {k: v.copy() for k, v in b.parameters().items()}
        polyak_update(a, b, 0.0)
        for k, v in before.items():
            assert np.array_equal(b.parameters()[k], v)

    def test_midpoint(self):
        a, b = self.nets()
        for _, layer, k in a.param_items():
            layer.params[k] = np.full_like(layer.params[k], 2.0)
        for _, layer, k in b.param_items():
            layer.params[k] = np.zeros_like(layer.params[k])
        polyak_update(a, b, 0.5)
        assert all((v == 1.0).all() for v in b.parameters().values())

    def test_shape_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            polyak_update(MLP.build([3, 5, 2], rng), MLP.build([3, 4, 2], rng), 0.5)


class TestDDPG:
    def test_zero_noise_is_deterministic(self):
        ag = DDPGAgent(np.random.default_rng(0), hidden=(16, 16), sigma=0.0)
        s = np.linspace(0, 1, STATE_DIM)
        assert np.array_equal(ag.act(s), ag.act(s))
        assert np.array_equal(ag.act(s), ag.act(s, explore=False))

    def test_exploration_stays_in_unit_box(self):
        rng = np.random.default_rng(1)
        ag = DDPGAgent(rng, hidden=(16,), sigma=2.0)
        acts = np.array([ag.act(rng.uniform(size=STATE_DIM)) for _ in range(300)])
        assert acts.min() >= 0 and acts.max() <= 1
        assert acts.std() > 0.1

    @pytest.mark.parametrize("penalty", [0.0, 0.05])
    def test_actor_gradient_matches_finite_differences(self, penalty):
        rng = np.random.default_rng(2)
        ag = DDPGAgent(rng, hidden=(8, 8), dtype=np.float64, logit_penalty=penalty)
        states = rng.uniform(size=(5, STATE_DIM))

        def loss():
            mu = ag.actor.forward(states)
            q = ag.critic.forward(np.concatenate([states, mu], axis=1))
            z = np.log(mu / (1 - mu))
            return -q.mean() + penalty * np.mean(np.sum(z * z, axis=1))

        grads = ag.actor_gradients(states)
        h = 1e-6
        for name, layer, k in ag.actor.param_items():
            p = layer.params[k]
            for flat in rng.choice(p.size, size=min(4, p.size), replace=False):
                i = np.unravel_index(flat, p.shape)
                old = p[i]
                p[i] = old + h
                up = loss()
                p[i] = old - h
                dn = loss()
                p[i] = old
                fd = (up - dn) / (2 * h)
                assert grads[name][i] == pytest.approx(fd, rel=1e-5, abs=1e-8), name

    def test_update_reduces_critic_error_on_fixed_batch(self):
        rng = np.random.default_rng(3)
        ag = DDPGAgent(rng, hidden=(32, 32), critic_lr=1e-3, gamma=0.0)
        s = rng.uniform(size=(16, STATE_DIM))
        a = rng.uniform(size=(16, 2))
        r = rng.uniform(-1, 1, 16)
        first = ag.update(s, a, r, s, np.ones(16), update_actor=False)[0]
        for _ in range(200):
            last = ag.update(s, a, r, s, np.ones(16), update_actor=False)[0]
        assert last < 0.5 * first

    def test_state_dict_roundtrip(self):
        a = DDPGAgent(np.random.default_rng(0), hidden=(8,))
        b = DDPGAgent(np.random.default_rng(1), hidden=(8,))
        b.load_state_dict(a.state_dict())
        s = np.full(STATE_DIM, 0.3)
        assert np.array_equal(a.policy(s), b.policy(s))


class TestReplay:
    def test_sumtree(self):
        t = SumTree(5)
        for i, v in enumerate([1, 2, 3, 4, 0]):
            t.update(i, v)
        assert t.total == 10
        assert [t.find(m) for m in (0, 0.99, 1, 2.99, 3, 6, 9.99)] == [0, 0, 1, 1, 2, 3, 3]

    def test_eviction_is_fifo(self):
        rb = PrioritizedReplay(capacity=3)
        for i in range(5):
            rb.push(i)
        assert len(rb) == 3 and sorted(rb.items) == [2, 3, 4]

    def test_importance_weights(self):
        rb = PrioritizedReplay(capacity=4, alpha=1.0, beta=1.0)
        for i in range(4):
            rb.push(i)
        rb.update_priorities([0, 1, 2, 3], [1, 1, 1, 5])
        items, idx, w = rb.sample(200, np.random.default_rng(0))
        assert w.max() == 1.0
        # the high-priority item carries the smallest weight, exactly 1/5 of the others
        assert np.allclose(w[idx == 3], 0.2) and np.allclose(w[idx != 3], 1.0)

    def test_new_items_get_max_priority(self):
        rb = PrioritizedReplay(capacity=4, alpha=1.0)
        rb.push("a")
        rb.update_priorities([0], [7.0])
        rb.push("b")
        assert rb.priority(1) == pytest.approx(7.0)

    def test_errors(self):
        rb = PrioritizedReplay(capacity=2)
        with pytest.raises(IndexError):
            rb.sample(1, np.random.default_rng(0))
        rb.push(0)
        for bad in (0.0, -1.0, float("nan")):
            with pytest.raises(ValueError):
                rb.update_priorities([0], [bad])


class TestRainbow:
    def test_frozen_draws_uniform(self):
        ag = RainbowAgent(np.random.default_rng(0), n_in=6, hidden=8)
        rng = np.random.default_rng(1)
        draws = [ag.act(np.zeros(6), frozen=True, rng=rng) for _ in range(7000)]
        counts = np.bincount(draws, minlength=7)
        assert chisquare(counts).pvalue > 0.01

    def test_noise_off_is_deterministic(self):
        ag = RainbowAgent(np.random.default_rng(0), n_in=6, hidden=8)
        ag.net.set_noisy(False)
        f = np.random.default_rng(2).normal(size=6)
        assert len({ag.act(f, frozen=False) for _ in range(20)}) == 1

    def test_distributions_are_normalised(self):
        ag = RainbowAgent(np.random.default_rng(0), n_in=6, hidden=8)
        d = ag.net.dist(np.random.default_rng(3).normal(size=(4, 6)).astype(np.float32))
        assert d.shape == (4, 7, 51)
        assert np.allclose(d.sum(axis=2), 1.0)

    def test_update_never_touches_the_actor(self):
        rng = np.random.default_rng(4)
        ddpg = DDPGAgent(rng, hidden=(16, 16))
        rb_agent = RainbowAgent(rng, n_in=16, hidden=8, lr=1e-2)
        replay = PrioritizedReplay(capacity=32)
        for _ in range(32):
            replay.push({"state": rng.uniform(size=STATE_DIM), "next_state": rng.uniform(size=STATE_DIM),
                         "technique": int(rng.integers(7)), "reward": float(rng.uniform(-1, 1)),
                         "done": 0.0, "gamma_n": 1.0})
        actor = {k: v.copy() for k, v in ddpg.actor.parameters().items()}
        online = {k: v.copy() for k, v in rb_agent.net.parameters().items()}
        for _ in range(5):
            rainbow_update(rb_agent, replay, 8, rng, ddpg.features)
        for k, v in actor.items():
            assert np.array_equal(ddpg.actor.parameters()[k], v)
        assert any(not np.array_equal(rb_agent.net.parameters()[k], v) for k, v in online.items())

    def test_ddpg_update_refreshes_priorities(self):
        rng = np.random.default_rng(5)
        ag = DDPGAgent(rng, hidden=(8,))
        replay = PrioritizedReplay(capacity=8)
        for _ in range(8):
            replay.push({"state": rng.uniform(size=STATE_DIM), "action": rng.uniform(size=2),
                         "reward": 1.0, "next_state": rng.uniform(size=STATE_DIM), "done": 1.0})
        ddpg_update(ag, replay, 8, rng)
        prios = [replay.priority(i) for i in range(8)]
        assert any(p != 1.0 for p in prios)


class TestMonitor:
    def test_rising_rewards_unlock_after_window_plus_patience(self):
        m = RewardMonitor(window=20, patience=5)
        for i in range(40):
            m.observe(i)
        assert m.unlocked and m.unlock_episode == 25

    def test_constant_rewards_never_unlock(self):
        m = RewardMonitor()
        assert not any(m.observe(0.3) for _ in range(500))

    def test_unlock_is_sticky(self):
        m = RewardMonitor(window=2, patience=1)
        for r in (0, 1, 2):
            m.observe(r)
        assert m.unlocked
        for r in (-5, -10, -20):
            assert m.observe(r)


def test_state_fields():
    model = residual_toy()
    conv, fc = model.layers[2], model.layers[4]
    rc = raw_state(conv, 2, 10.0, 3.0, 0.4)
    assert rc.tolist()[:8] == [2, 0, conv.C_o, conv.C_in, conv.h_in, conv.w_in, conv.stride, conv.k]
    assert rc[-2:].tolist() == [3.0, 0.4]
    rf = raw_state(fc, 4, 1.0, 0.0, 0.0)
    assert rf.tolist()[:2] == [4, 1] and rf[2] == fc.M and rf[3] == fc.N
    sb = StateBuilder(model, np.ones(len(model.layers)))
    _, norm = sb(1, e_reduced=2.5, prev_action=0.7)
    assert norm.shape == (STATE_DIM,) and norm[:11].min() >= 0 and norm[:11].max() <= 1
    assert norm[11] == pytest.approx(0.5) and norm[12] == pytest.approx(0.7)
