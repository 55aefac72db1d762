"""Built-in report experiments: per-technique pruning sweeps and
uniform-vs-mixed precision fronts."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..compress import TECHNIQUES
from .search import Environment, pareto_front

BITS = tuple(range(2, 9))


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))  # map keeps input order
    return [fn(x) for x in items]


def pruning_sweep(env: Environment, techniques=TECHNIQUES, sparsities=None, bits=8, threads=1):
    """Same technique and sparsity on every layer; rows of (technique, S, loss %, gain %)."""
    sparsities = np.round(np.arange(0.1, 0.91, 0.1), 10) if sparsities is None else sparsities
    jobs = [(tech, float(S)) for tech in techniques for S in sparsities]

    def run(job):
        tech, S = job
        ev = env.evaluate(env.plan_from_actions([(S, bits, TECHNIQUES.index(tech))] * env.n_layers))
        return {"technique": tech, "sparsity": S, "bits": bits, "loss_pct": ev.loss_pct,
                "gain_pct": ev.gain_pct}

    return _map(run, jobs, threads)


def _precision_point(env, bits):
    ev = env.evaluate(env.plan_from_actions([(0.0, int(q), 1) for q in bits]))
    return ev.loss_pct, ev.gain_pct


def greedy_bit_path(env: Environment, start=8, stop=2):
    """Lower one layer by one bit at a time, from all-``start`` to all-``stop``.

    Decrements that cost no accuracy are taken first (largest gain first);
    otherwise the step with the best gain increase per unit of extra loss
    wins (loss increases below 0.1 points count as 0.1).
    """
    bits = [start] * env.n_layers
    loss, gain = _precision_point(env, bits)
    path = [(tuple(bits), loss, gain)]
    while any(b > stop for b in bits):
        best = None
        for t in range(env.n_layers):
            if bits[t] == stop:
                continue
            cand = bits.copy()
            cand[t] -= 1
            l, g = _precision_point(env, cand)
            free = l <= loss
            score = (free, (g - gain) if free else (g - gain) / max(l - loss, 0.1))
            if best is None or score > best[0]:
                best = (score, cand, l, g)
        _, bits, loss, gain = best
        path.append((tuple(bits), loss, gain))
    return path


def greedy_bit_climb(env: Environment, start=2, stop=8):
    """Mirror of :func:`greedy_bit_path`: raise one layer by one bit at a time.

    Each step restores the bit that buys back the most accuracy per point of
    gain given up (gain drops below 0.1 points count as 0.1).
    """
    bits = [start] * env.n_layers
    loss, gain = _precision_point(env, bits)
    path = [(tuple(bits), loss, gain)]
    while any(b < stop for b in bits):
        best = None
        for t in range(env.n_layers):
            if bits[t] == stop:
                continue
            cand = bits.copy()
            cand[t] += 1
            l, g = _precision_point(env, cand)
            score = (loss - l) / max(gain - g, 0.1)
            if best is None or score > best[0]:
                best = (score, cand, l, g)
        _, bits, loss, gain = best
        path.append((tuple(bits), loss, gain))
    return path


def uniform_vs_mixed(env: Environment, n_random=100, seed=0, threads=1):
    """(uniform points, mixed points); each point is (bits tuple, loss %, gain %)."""
    uniform = [((q,) * env.n_layers,) + _precision_point(env, [q] * env.n_layers) for q in BITS]
    # the two greedy paths share their uniform endpoints (all-8 / all-2) with
    # the uniform set; every interior point is a genuine mixed assignment
    mixed = greedy_bit_path(env) + greedy_bit_climb(env)[1:-1]
    rng = np.random.default_rng(seed)
    samples = []
    while len(samples) < n_random:
        b = tuple(int(v) for v in rng.integers(2, 9, env.n_layers))
        if len(set(b)) > 1:
            samples.append(b)
    mixed += [(b,) + p for b, p in zip(samples, _map(lambda b: _precision_point(env, b), samples,
                                                     threads))]
    return uniform, mixed


def best_gain_at(points, loss_level):
    gains = [g for _, l, g in points if l <= loss_level]
    return max(gains) if gains else -np.inf


def front_dominance(uniform, mixed, levels=None):
    """Per loss level: best gain reachable within that loss, for both sets."""
    if levels is None:
        levels = sorted({l for _, l, _ in uniform})
    return [(lv, best_gain_at(uniform, lv), best_gain_at(mixed, lv)) for lv in levels]


def write_sweep(rows, out_dir, name):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{name}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return out / f"{name}.csv"


def run_experiment(name, env: Environment, out_dir, threads=1, plot=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if name == "pruning-sweep":
        rows = pruning_sweep(env, threads=threads)
        write_sweep(rows, out, "pruning_sweep")
        result = {"experiment": name, "points": rows}
        if plot:
            from .plotting import plot_pruning_sweep

            plot_pruning_sweep(rows, out / "pruning_sweep.png")
    elif name == "uniform-vs-mixed":
        uniform, mixed = uniform_vs_mixed(env, seed=env.config.seed, threads=threads)
        levels = front_dominance(uniform, mixed)
        rows = [{"kind": k, "bits": " ".join(map(str, b)), "loss_pct": l, "gain_pct": g}
                for k, pts in (("uniform", uniform), ("mixed", mixed)) for b, l, g in pts]
        write_sweep(rows, out, "uniform_vs_mixed")
        result = {
            "experiment": name,
            "uniform_front": pareto_front([(l, g) for _, l, g in uniform]),
            "mixed_front": pareto_front([(l, g) for _, l, g in mixed]),
            "levels": [{"loss_pct": lv, "uniform_gain": u, "mixed_gain": m} for lv, u, m in levels],
            "mixed_dominates": all(m >= u for _, u, m in levels),
        }
        if plot:
            from .plotting import plot_uniform_vs_mixed

            plot_uniform_vs_mixed(uniform, mixed, out / "uniform_vs_mixed.png")
    else:
        raise ValueError(f"unknown experiment {name!r}")
    (out / f"{name}.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result
