"""Acceptance criteria 1-13, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line; the lines are also
collected and repeated in the pytest terminal summary. Run this file
directly (``python tests/test_acceptance.py``) to get only the lines.

Criteria 10-13 share one set of end-to-end searches on the bundled
fixture: RL, uniform-random policy and NSGA-II, seeds 0/1/2, 200
evaluations each.
"""
from __future__ import annotations

import hashlib
import statistics
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_checks as ac  # noqa: E402
from cforge.compress import TECHNIQUES  # noqa: E402
from cforge.orchestrator.config import RunConfig  # noqa: E402
from cforge.orchestrator.experiments import front_dominance, uniform_vs_mixed  # noqa: E402
from cforge.orchestrator.search import (Environment, run_ga_search, run_random_search,  # noqa: E402
                                        run_search)

SEEDS = (0, 1, 2)
BUDGET = 200
RESULTS: list[ac.Check] = []


def _report(check):
    RESULTS.append(check)
    print(check.line())
    assert check.passed, check.line()


def search_config(seed):
    # 10% of the budget as warm-up, as in the full-length runs (100 of 1100)
    return RunConfig(episodes=BUDGET, warmup=BUDGET // 10, seed=seed,
                     population=20, generations=BUDGET // 20)


def _rainbow_digest(agents):
    h = hashlib.sha256()
    for k, v in sorted(agents.rainbow.state_dict().items()):
        h.update(k.encode())
        h.update(np.ascontiguousarray(v).tobytes())
    return h.hexdigest()


def run_all_searches(seeds=SEEDS):
    out = {"rl": [], "random": [], "ga": [], "frozen_draws": [], "frozen_digests": []}
    for seed in seeds:
        cfg = search_config(seed)
        env = Environment.from_config(cfg)
        digests = []

        def watch(rec, agents):
            if not rec.unlocked:
                out["frozen_draws"].extend(TECHNIQUES.index(a.technique) for a in rec.plan)
                digests.append(_rainbow_digest(agents))

        out["rl"].append(run_search(cfg, env, on_episode=watch))
        out["frozen_digests"].append(digests)
        out["random"].append(run_random_search(cfg, env, budget=BUDGET))
        out["ga"].append(run_ga_search(cfg, env))
    return out


@pytest.fixture(scope="module")
def searches():
    return run_all_searches()


# ------------------------------------------------------------ property suite
def test_criterion_01_energy_arithmetic():
    _report(ac.energy_arithmetic())


def test_criterion_02_coefficient_anchors():
    _report(ac.coefficient_anchors())


def test_criterion_03_granularity_dominance():
    _report(ac.granularity_dominance())


def test_criterion_04_quantizer_bound():
    _report(ac.quantizer_bound())


def test_criterion_05_gradient_checks():
    _report(ac.gradient_checks())


def test_criterion_06_distributional_projection():
    _report(ac.projection_mass())


def test_criterion_07_prioritized_replay():
    _report(ac.replay_ratio())


def test_criterion_08_nsga2_sorting():
    _report(ac.nsga2_sorting())


def test_criterion_09_dependency_safety():
    _report(ac.dependency_safety())


# ------------------------------------------------------------- end to end
@pytest.mark.slow
def test_criterion_10_freeze_integrity(searches):
    _report(ac.freeze_integrity(searches["frozen_draws"], searches["frozen_digests"]))


def _median_seed(reports):
    order = sorted(range(len(reports)), key=lambda i: reports[i].best_reward)
    return reports[order[len(order) // 2]]


@pytest.mark.slow
def test_criterion_11_rl_fixture_search(searches):
    rl = searches["rl"]
    med = _median_seed(rl)
    fe = med.final_eval
    slowest = max(r.timing["seconds"] for r in rl)
    per_seed = ", ".join(f"seed {r.config['seed']}: R={r.best_reward:.3f} "
                         f"loss={r.final_eval['loss_pct']:.2f}% gain={r.final_eval['gain_pct']:.1f}%"
                         for r in rl)
    ok = fe["loss_pct"] <= 5.0 and fe["gain_pct"] >= 15.0 and slowest <= 1800
    _report(ac.Check(11, "RL fixture search", ok,
                     f"median seed {med.config['seed']} on {fe['split']}: loss {fe['loss_pct']:.2f}% "
                     f"gain {fe['gain_pct']:.2f}%; slowest run {slowest:.0f} s [{per_seed}]"))


@pytest.mark.slow
def test_criterion_12_budget_matched_comparison(searches):
    med = {k: statistics.median(r.best_reward for r in searches[k]) for k in ("rl", "random", "ga")}
    budgets = {k: {len(r.records) for r in searches[k]} for k in ("rl", "random", "ga")}
    same_budget = all(b == {BUDGET} for b in budgets.values())
    ok = same_budget and med["rl"] > med["random"] and med["rl"] >= med["ga"]
    _report(ac.Check(12, "budget-matched comparison", ok,
                     f"median best reward RL {med['rl']:.4f} vs random {med['random']:.4f} "
                     f"vs NSGA-II {med['ga']:.4f} ({BUDGET} evaluations each, seeds {SEEDS})"))


@pytest.mark.slow
def test_criterion_13_uniform_vs_mixed():
    env = Environment.from_config(RunConfig(episodes=2, warmup=0, seed=0))
    uniform, mixed = uniform_vs_mixed(env, seed=0)
    levels = front_dominance(uniform, mixed)
    ok = all(m >= u for _, u, m in levels)
    pairs = "; ".join(f"<= {lv:.2f}%: {u:.1f} vs {m:.1f}" for lv, u, m in levels)
    _report(ac.Check(13, "mixed vs uniform fronts", ok,
                     f"{len(levels)} loss levels, best gain uniform vs mixed [{pairs}]"))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
