"""Episode loop wiring the agents, compressor, energy model and reward table."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..agents import (DDPGAgent, PrioritizedReplay, RainbowAgent, RewardMonitor, StateBuilder,
                      ddpg_update, map_actions, rainbow_act, rainbow_update)
from ..compress import (TECHNIQUES, CompressionAction, CompressionPlan, PruneContext, apply_plan,
                        granularity, resolve_dependencies)
from ..core.container import load_dataset, load_model, save_arrays
from ..core.graph import predict
from ..energy import (analytic_cost_provider, baseline_energy, default_rq_table, layer_energy,
                      load_cost_profile, load_rq_table, reduction_coefficients, total_energy)
from ..nsga2 import GAConfig, decode_genome, evolve
from ..reward import RewardLUT, build_lut
from .config import RunConfig


class EpisodeError(RuntimeError):
    pass


@dataclass
class Evaluation:
    plan: CompressionPlan
    accuracy: float
    loss_pct: float
    gain_pct: float
    reward: float
    compressed: object = field(default=None, repr=False)
    breakdown: object = field(default=None, repr=False)


@dataclass
class EpisodeRecord:
    episode: int
    plan: CompressionPlan
    loss_pct: float
    gain_pct: float
    reward: float
    sigma: float
    unlocked: bool
    warmup: bool

    def row(self):
        return {"episode": self.episode, "reward": self.reward, "loss_pct": self.loss_pct,
                "gain_pct": self.gain_pct, "sigma": self.sigma, "unlocked": int(self.unlocked)}


@dataclass
class SearchReport:
    method: str
    config: dict
    reference_accuracy: float
    records: list
    unlock_episode: int | None = None
    final_eval: dict | None = None
    timing: dict = field(default_factory=dict)

    @property
    def best(self):
        return max(self.records, key=lambda r: r.reward)  # first wins ties

    @property
    def best_reward(self):
        return self.best.reward

    def pareto(self):
        return pareto_front([(r.loss_pct, r.gain_pct) for r in self.records])

    def as_dict(self):
        b = self.best
        return {
            "method": self.method,
            "config": self.config,
            "reference_accuracy": self.reference_accuracy,
            "evaluations": len(self.records),
            "unlock_episode": self.unlock_episode,
            "best": {"episode": b.episode, "reward": b.reward, "loss_pct": b.loss_pct,
                     "gain_pct": b.gain_pct, "plan": b.plan.to_records()},
            "final_eval": self.final_eval,
            "pareto": [{"loss_pct": l, "gain_pct": g} for l, g in self.pareto()],
        }

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def pareto_front(points):
    """Points not dominated under (minimise loss, maximise gain), sorted by loss."""
    pts = sorted(set((float(l), float(g)) for l, g in points), key=lambda p: (p[0], -p[1]))
    front, best_gain = [], -np.inf
    for l, g in pts:
        if g > best_gain:
            front.append((l, g))
            best_gain = g
    return front


class Environment:
    """Everything the reward needs, built once per run.

    The validation subset is drawn once (seeded) so reward noise only
    reflects the policy. Each evaluation compresses a fresh copy of the
    dense model.
    """

    def __init__(self, model, calib, validation, config: RunConfig, profile=None, table=None,
                 lut=None, test=None):
        self.model, self.config = model, config
        self.calib = calib
        self.val = validation.subset(config.val_fraction, config.seed)
        self.test = test
        self.profile = profile or analytic_cost_provider(model, config.e_comp, config.e_mem)
        self.table = table or default_rq_table()
        self.lut = lut or build_lut()
        self.ctx = PruneContext(model, calib, config.seed, config.ranked_pattern)
        self.base_layers = np.array([m + c for m, c in baseline_energy(self.profile)])
        self.n_layers = len(model.layers)
        self.noop = resolve_dependencies(model, CompressionPlan.noop(self.n_layers),
                                         config.ranked_pattern)
        # the native 8-bit deployment is the accuracy reference
        ref = self.compress(self.noop)
        self.ref_acc = self._accuracy(ref.model, self.val)
        self.evaluations = 0

    @classmethod
    def from_config(cls, config: RunConfig):
        if config.model:
            model = load_model(config.model)
            root = Path(config.dataset or config.model)
            data = {s: load_dataset(root, s) for s in ("train-calib", "validation", "test")
                    if (root / s).exists()}
        else:
            from ..fixtures import load_fixture

            model, data = load_fixture()
        profile = analytic_cost_provider(model, config.e_comp, config.e_mem)
        if config.cost_profile:
            profile = load_cost_profile(config.cost_profile, model, profile)
        table = load_rq_table(config.rq_table) if config.rq_table else None
        lut = RewardLUT.from_csv(config.lut) if config.lut else None
        calib = data["train-calib"].head(config.calib_size)
        return cls(model, calib, data["validation"], config, profile, table, lut,
                   test=data.get("test"))

    def _accuracy(self, model, data):
        return float((predict(model, data.inputs) == data.labels).mean())

    def compress(self, plan):
        return apply_plan(self.model, plan, self.calib, self.ctx)

    def plan_from_actions(self, actions):
        """[(S, Q, technique id)] -> resolved plan."""
        acts = [CompressionAction(t, TECHNIQUES[k], S, Q) for t, (S, Q, k) in enumerate(actions)]
        return resolve_dependencies(self.model, CompressionPlan(acts), self.config.ranked_pattern)

    def evaluate(self, plan, data=None, ref_acc=None):
        """Compress once and derive loss, gain and reward from that instance."""
        plan.check(self.model)
        cm = self.compress(plan)
        data = self.val if data is None else data
        ref = self.ref_acc if ref_acc is None else ref_acc
        acc = self._accuracy(cm.model, data)
        eb = total_energy(self.model, cm, self.profile, self.table, self.config.ranked_pattern)
        loss, gain = 100.0 * (ref - acc), 100.0 * eb.gain
        self.evaluations += 1
        return Evaluation(plan, acc, loss, gain, self.lut.lookup(loss, gain), cm, eb)

    def nominal_layer_energy(self, t, S, Q, technique):
        g = granularity(technique, self.model.layers[t].kind, self.config.ranked_pattern)
        c = reduction_coefficients(S, Q, "fine" if g == "element" else "coarse", self.table)
        return sum(layer_energy(self.profile, t, c))

    def final_metrics(self, plan):
        """Best-plan metrics on the report split (reference = no-op on that split)."""
        split = self.test if self.test is not None else self.val
        ref = self._accuracy(self.compress(self.noop).model, split)
        ev = self.evaluate(plan, split, ref)
        self.evaluations -= 1
        return {"split": "test" if self.test is not None else "validation",
                "reference_accuracy": ref, "accuracy": ev.accuracy, "loss_pct": ev.loss_pct,
                "gain_pct": ev.gain_pct, "reward": ev.reward,
                "layers": [r.summary() for r in ev.compressed.layers],
                "energy": ev.breakdown.as_dict()}


class Agents:
    def __init__(self, config: RunConfig, lut_max, rng_seed):
        ss = np.random.SeedSequence(rng_seed)
        init, explore, replay, rb = (np.random.default_rng(s) for s in ss.spawn(4))
        h = config.hidden
        self.ddpg = DDPGAgent(init, hidden=(h, h, h), actor_lr=config.actor_lr,
                              critic_lr=config.critic_lr, tau=config.tau, gamma=config.gamma,
                              sigma=config.sigma0, logit_penalty=config.logit_penalty)
        self.rainbow = RainbowAgent(rb, n_in=h, n_atoms=config.n_atoms, v_min=-1.0,
                                    v_max=max(lut_max, 1e-3), hidden=config.rainbow_hidden,
                                    lr=config.rainbow_lr, gamma=config.gamma,
                                    n_step=config.n_step, sigma0=config.noisy_sigma0,
                                    tau=config.tau)
        self.ddpg_replay = PrioritizedReplay(config.replay_capacity, config.per_alpha,
                                             config.per_beta0)
        self.rainbow_replay = PrioritizedReplay(config.replay_capacity, config.per_alpha,
                                                config.per_beta0)
        self.monitor = RewardMonitor(config.monitor_window, config.monitor_patience)
        self.explore_rng, self.replay_rng = explore, replay

    def state_dict(self):
        d = {f"ddpg.{k}": v for k, v in self.ddpg.state_dict().items()}
        d.update({f"rainbow.{k}": v for k, v in self.rainbow.state_dict().items()})
        return d


def _beta(config, episode):
    frac = min(1.0, episode / max(1, config.episodes - 1))
    return config.per_beta0 + (1.0 - config.per_beta0) * frac


def _probe_rewards(env, actions, final_reward):
    """Per-step rewards from partial plans on a small probe set.

    Step t is rewarded with the change in probe reward from compressing
    layer t; the last step closes the sum onto the full validation reward.
    """
    probe = env.val.head(env.config.probe_size)
    ref = env._accuracy(env.compress(env.noop).model, probe)
    rewards, prev = [], 0.0
    for t in range(len(actions) - 1):
        partial = [a if i <= t else (0.0, 8, 0) for i, a in enumerate(actions)]
        ev = env.evaluate(env.plan_from_actions(partial), probe, ref)
        env.evaluations -= 1
        rewards.append(ev.reward - prev)
        prev = ev.reward
    rewards.append(final_reward - prev)
    return rewards


def run_episode(agents: Agents, env: Environment, episode: int, warmup: bool,
                explore: bool = True):
    """One pass over the L layers, ending in compression, evaluation and reward."""
    cfg = env.config
    L = env.n_layers
    builder = getattr(env, "_builder", None)
    if builder is None:
        builder = env._builder = StateBuilder(env.model, env.base_layers)
    rng = agents.explore_rng
    states, raw_actions, techniques, actions = [], [], [], []
    e_red, prev_a = 0.0, 0.0
    try:
        for t in range(L):
            _, s = builder(t, e_red, prev_a)
            if warmup:
                a = rng.random(2)
            else:
                a = agents.ddpg.act(s, explore=explore, rng=rng)
            feats = agents.ddpg.features(s)
            k = rainbow_act(agents.rainbow, feats, not agents.monitor.unlocked, rng)
            S, Q = map_actions(a[0], a[1], cfg.s_cap)
            e_red += env.base_layers[t] - env.nominal_layer_energy(t, S, Q, TECHNIQUES[k])
            prev_a = float(a[0])
            states.append(s)
            raw_actions.append(np.asarray(a, dtype=np.float64))
            techniques.append(k)
            actions.append((S, Q, k))
        ev = env.evaluate(env.plan_from_actions(actions))
    except Exception as exc:  # abort with context
        raise EpisodeError(f"episode {episode} failed at layer {len(actions)}: {exc}") from exc

    if cfg.reward_mode == "probe":
        rewards = _probe_rewards(env, actions, ev.reward)
    else:
        rewards = [0.0] * (L - 1) + [ev.reward]
    terminal = np.zeros_like(states[0])
    nexts = states[1:] + [terminal]
    returns = np.zeros(L)
    acc = 0.0
    for t in reversed(range(L)):
        acc = rewards[t] + cfg.gamma * acc
        returns[t] = acc
    for t in range(L):
        if cfg.critic_target == "monte_carlo":
            # full return-to-go as a one-step terminal target: same Q, no bootstrapping
            item = {"reward": float(returns[t]), "next_state": terminal, "done": 1.0}
        else:
            item = {"reward": rewards[t], "next_state": nexts[t], "done": float(t == L - 1)}
        agents.ddpg_replay.push({"state": states[t], "action": raw_actions[t], **item})
        # n-step return for the technique agent
        n = min(cfg.n_step, L - t)
        ret = sum(cfg.gamma ** i * rewards[t + i] for i in range(n))
        done = t + n >= L
        agents.rainbow_replay.push({"state": states[t], "technique": techniques[t], "reward": ret,
                                    "next_state": terminal if done else states[t + n],
                                    "done": float(done), "gamma_n": cfg.gamma ** n})
    if not warmup:
        beta = _beta(cfg, episode)
        for _ in range(L * cfg.updates_per_step):
            if len(agents.ddpg_replay) >= cfg.batch_size:
                ddpg_update(agents.ddpg, agents.ddpg_replay, cfg.batch_size, agents.replay_rng, beta)
            if agents.monitor.unlocked and len(agents.rainbow_replay) >= cfg.batch_size:
                rainbow_update(agents.rainbow, agents.rainbow_replay, cfg.batch_size,
                               agents.replay_rng, agents.ddpg.features, beta)
        agents.monitor.observe(ev.reward)
    return EpisodeRecord(episode, ev.plan, ev.loss_pct, ev.gain_pct, ev.reward,
                         agents.ddpg.sigma, agents.monitor.unlocked, warmup)


def critic_warmstart(agents, config):
    """Critic-only updates on the warm-up replay, so the first actor steps
    follow a critic that has seen data rather than its initialisation."""
    n = min(len(agents.ddpg_replay), config.batch_size)
    if n == 0:  # no warm-up episodes, nothing to fit
        return
    for _ in range(config.critic_warmstart):
        ddpg_update(agents.ddpg, agents.ddpg_replay, n, agents.replay_rng, config.per_beta0,
                    update_actor=False)


def run_search(config: RunConfig, env: Environment | None = None, out_dir=None, log=None,
               on_episode=None):
    """RL search: warm-up episodes, then training with sigma decay.

    ``on_episode(record, agents)`` is called after every episode.
    """
    t0 = time.perf_counter()
    env = env or Environment.from_config(config)
    agents = Agents(config, env.lut.max, config.seed)
    records, unlock = [], None
    for ep in range(config.episodes):
        warm = ep < config.warmup
        if ep == config.warmup and config.critic_warmstart:
            critic_warmstart(agents, config)
        rec = run_episode(agents, env, ep, warm)
        records.append(rec)
        if unlock is None and agents.monitor.unlocked:
            unlock = ep
        if on_episode is not None:
            on_episode(rec, agents)
        if not warm:
            agents.ddpg.sigma *= config.sigma_decay
        if out_dir and config.checkpoint_every and (ep + 1) % config.checkpoint_every == 0:
            save_arrays(agents.state_dict(), Path(out_dir) / "checkpoints" / f"ep{ep + 1:05d}",
                        {"episode": ep + 1})
        if log and (ep + 1) % 10 == 0:
            best = max(r.reward for r in records)
            log(f"episode {ep + 1}/{config.episodes} reward {rec.reward:.4f} best {best:.4f} "
                f"sigma {agents.ddpg.sigma:.3f} unlocked {agents.monitor.unlocked}")
    report = SearchReport("rl", config.to_dict(), env.ref_acc, records, unlock)
    report.final_eval = env.final_metrics(report.best.plan)
    report.timing = {"seconds": time.perf_counter() - t0, "evaluations": len(records)}
    report.agents = agents
    if out_dir:
        write_report(report, out_dir)
        save_arrays(agents.state_dict(), Path(out_dir) / "checkpoints" / "final",
                    {"episode": config.episodes})
    return report


def run_ga_search(config: RunConfig, env: Environment | None = None, out_dir=None, log=None):
    """NSGA-II with the same evaluator (and budget accounting) as the RL path."""
    t0 = time.perf_counter()
    env = env or Environment.from_config(config)
    L = env.n_layers
    evals = {}

    def evaluate(genes):
        plan = decode_genome(genes, env.model, env.config.s_cap)
        ev = env.evaluate(plan)
        evals[genes.tobytes()] = ev
        return ev.reward

    ga_cfg = GAConfig(config.population, config.generations, config.eta_c, config.eta_m,
                      config.crossover_rate, 1.0 / (3 * L), seed=config.seed,
                      threads=config.threads)
    result = evolve(evaluate, 3 * L, ga_cfg)
    records = []
    for i, (genes, reward) in enumerate(result.archive):
        ev = evals[genes.tobytes()]
        records.append(EpisodeRecord(i, ev.plan, ev.loss_pct, ev.gain_pct, ev.reward, 0.0, False,
                                     False))
    report = SearchReport("ga", config.to_dict(), env.ref_acc, records)
    report.history = result.history
    report.final_eval = env.final_metrics(report.best.plan)
    report.timing = {"seconds": time.perf_counter() - t0, "evaluations": result.evaluations}
    if log:
        log(f"GA best reward {report.best_reward:.4f} after {result.evaluations} evaluations")
    if out_dir:
        write_report(report, out_dir)
        with open(Path(out_dir) / "ga_history.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["generation", "best_reward", "mean_reward"])
            w.writerows(result.history)
    return report


def run_random_search(config: RunConfig, env: Environment | None = None, budget=None,
                      out_dir=None):
    """Uniform-random policy baseline: genes ~ U[0,1]^{3L}, same decoder and evaluator."""
    t0 = time.perf_counter()
    env = env or Environment.from_config(config)
    budget = budget or config.episodes
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 7]))
    records = []
    for i in range(budget):
        ev = env.evaluate(decode_genome(rng.random(3 * env.n_layers), env.model, config.s_cap))
        records.append(EpisodeRecord(i, ev.plan, ev.loss_pct, ev.gain_pct, ev.reward, 0.0,
                                     False, False))
    report = SearchReport("random", config.to_dict(), env.ref_acc, records)
    report.final_eval = env.final_metrics(report.best.plan)
    report.timing = {"seconds": time.perf_counter() - t0, "evaluations": budget}
    if out_dir:
        write_report(report, out_dir)
    return report


def evaluate_command(model, plan, data, calib=None, config=None, profile=None, table=None):
    """Metrics for one plan: accuracy loss, energy gain (per layer and total),
    achieved S/Q per layer."""
    config = config or RunConfig(episodes=1, warmup=0, val_fraction=1.0)
    plan.check(model)
    calib = calib if calib is not None else data.head(config.calib_size)
    env = Environment(model, calib, data, config, profile, table)
    ev = env.evaluate(resolve_dependencies(model, plan, config.ranked_pattern))
    return {"reference_accuracy": env.ref_acc, "accuracy": ev.accuracy,
            "loss_pct": ev.loss_pct, "gain_pct": ev.gain_pct, "reward": ev.reward,
            "layers": [r.summary() for r in ev.compressed.layers],
            "energy": ev.breakdown.as_dict()}


def write_report(report: SearchReport, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "best_plan.json").write_text(report.best.plan.to_json() + "\n")
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["episode", "reward", "loss_pct", "gain_pct", "sigma", "unlocked"])
        w.writeheader()
        for r in report.records:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row().items()})
    # wall-clock lives apart so report files stay byte-identical across runs
    (out / "timing.json").write_text(json.dumps(report.timing, indent=2, sort_keys=True) + "\n")
    return out
