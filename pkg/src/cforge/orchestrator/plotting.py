"""Report figures (PNG). Uses the non-interactive Agg backend."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .search import pareto_front  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_reward_curve(records, path, unlock_episode=None, warmup=0):
    """Per-episode reward with the running best."""
    ep = [r.episode for r in records]
    rew = [r.reward for r in records]
    best, run = [], float("-inf")
    for v in rew:
        run = max(run, v)
        best.append(run)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(ep, rew, ".", ms=3, alpha=0.6, label="episode reward")
    ax.plot(ep, best, "-", lw=1.5, label="best so far")
    if warmup:
        ax.axvspan(0, warmup - 0.5, color="0.9", label="warm-up")
    if unlock_episode is not None:
        ax.axvline(unlock_episode, color="C3", ls="--", lw=1, label="technique agent unlocked")
    ax.set_xlabel("episode")
    ax.set_ylabel("reward")
    ax.legend(fontsize=8, loc="lower right")
    return _save(fig, path)


def plot_pareto(records, path, title=None):
    """Visited (loss, gain) points and their Pareto front."""
    pts = [(r.loss_pct, r.gain_pct) for r in records]
    front = pareto_front(pts)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter([p[0] for p in pts], [p[1] for p in pts], s=6, alpha=0.4, label="visited")
    ax.step([p[0] for p in front], [p[1] for p in front], where="post", color="C3",
            label="Pareto front")
    ax.set_xlabel("accuracy loss [%]")
    ax.set_ylabel("energy gain [%]")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_pruning_sweep(rows, path):
    """One loss-vs-sparsity curve per technique (gain annotated on a twin axis)."""
    fig, (ax_l, ax_g) = plt.subplots(1, 2, figsize=(10, 4))
    for tech in dict.fromkeys(r["technique"] for r in rows):
        sel = [r for r in rows if r["technique"] == tech]
        s = [r["sparsity"] for r in sel]
        ax_l.plot(s, [r["loss_pct"] for r in sel], "o-", ms=3, label=tech)
        ax_g.plot(s, [r["gain_pct"] for r in sel], "o-", ms=3, label=tech)
    ax_l.set_xlabel("sparsity")
    ax_l.set_ylabel("accuracy loss [%]")
    ax_g.set_xlabel("sparsity")
    ax_g.set_ylabel("energy gain [%]")
    ax_l.legend(fontsize=7)
    return _save(fig, path)


def plot_uniform_vs_mixed(uniform, mixed, path):
    """Both point sets with their fronts; uniform points labelled by bit width."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter([p[1] for p in mixed], [p[2] for p in mixed], s=8, alpha=0.4, color="C1",
               label="mixed precision")
    ax.scatter([p[1] for p in uniform], [p[2] for p in uniform], s=25, color="C0", marker="s",
               label="uniform precision")
    for bits, l, g in uniform:
        ax.annotate(f"{bits[0]}b", (l, g), fontsize=7, xytext=(3, -8), textcoords="offset points")
    for pts, c in ((uniform, "C0"), (mixed, "C1")):
        f = pareto_front([(l, g) for _, l, g in pts])
        ax.step([p[0] for p in f], [p[1] for p in f], where="post", color=c, lw=1)
    ax.set_xscale("symlog", linthresh=1.0)
    ax.set_xlabel("accuracy loss [%]")
    ax.set_ylabel("energy gain [%]")
    ax.legend(fontsize=8, loc="lower right")
    return _save(fig, path)


def plot_energy_breakdown(rows, path):
    """Stacked memory/compute energy per layer, baseline next to the plan."""
    t = [r["t"] for r in rows]
    w = 0.38
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for off, (mem, comp), lab in ((-w / 2, ("baseline_mem", "baseline_comp"), "dense"),
                                  (w / 2, ("e_mem", "e_comp"), "plan")):
        x = [v + off for v in t]
        m = [r[mem] for r in rows]
        ax.bar(x, m, w, label=f"{lab} memory")
        ax.bar(x, [r[comp] for r in rows], w, bottom=m, label=f"{lab} compute")
    ax.set_xticks(t)
    ax.set_xlabel("layer")
    ax.set_ylabel("energy [a.u.]")
    ax.legend(fontsize=7)
    return _save(fig, path)
