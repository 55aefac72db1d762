"""NSGA-II over a 3L real genome (sparsity, precision, technique per layer)."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agents.ddpg import map_actions
from .compress.plan import CompressionAction, CompressionPlan, resolve_dependencies
from .compress.pruning import TECHNIQUES


@dataclass
class Chromosome:
    genes: np.ndarray
    fitness: tuple = ()
    rank: int = 0
    crowding: float = 0.0
    reward: float = float("nan")


@dataclass
class GAConfig:
    population: int = 20
    generations: int = 55
    eta_c: float = 15.0
    eta_m: float = 20.0
    crossover_rate: float = 0.9
    mutation_rate: float | None = None  # default 1 / n_genes
    tournament: int = 2
    seed: int = 0
    threads: int = 1


@dataclass
class GAResult:
    best: Chromosome
    history: list = field(default_factory=list)  # (generation, best reward, mean reward)
    evaluations: int = 0
    archive: list = field(default_factory=list)  # every evaluated (genes, reward)


def decode_genome(genes, model, s_cap=0.9):
    """Genes (3 per layer) -> resolved CompressionPlan."""
    genes = np.clip(np.asarray(genes, dtype=np.float64), 0, 1)
    L = len(model.layers)
    if genes.size != 3 * L:
        raise ValueError(f"genome has {genes.size} genes, expected {3 * L}")
    acts = []
    for t in range(L):
        g_s, g_q, g_t = genes[3 * t:3 * t + 3]
        S, Q = map_actions(g_s, g_q, s_cap)
        tech = min(int(np.floor(g_t * len(TECHNIQUES))), len(TECHNIQUES) - 1)
        acts.append(CompressionAction(t, TECHNIQUES[tech], S, Q))
    return resolve_dependencies(model, CompressionPlan(acts))


def dominates(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return bool((a <= b).all() and (a < b).any())


def fast_nondominated_sort(fitness):
    """Fronts (lists of indices) for minimisation objectives, shallowest first."""
    F = np.atleast_2d(np.asarray(fitness, dtype=np.float64))
    if F.shape[0] == 1 and np.ndim(fitness) == 1:
        F = F.T
    n = len(F)
    dominated_by = [[] for _ in range(n)]
    counts = np.zeros(n, dtype=int)
    fronts = [[]]
    for p in range(n):
        for q in range(n):
            if p == q:
                continue
            if dominates(F[p], F[q]):
                dominated_by[p].append(q)
            elif dominates(F[q], F[p]):
                counts[p] += 1
        if counts[p] == 0:
            fronts[0].append(p)
    i = 0
    while fronts[i]:
        nxt = []
        for p in fronts[i]:
            for q in dominated_by[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    nxt.append(q)
        i += 1
        fronts.append(sorted(nxt))
    return fronts[:-1]


def crowding_distance(fitness):
    """Crowding distance within one front; boundary points are infinite."""
    F = np.atleast_2d(np.asarray(fitness, dtype=np.float64))
    n, m = F.shape
    d = np.zeros(n)
    if n <= 2:
        d[:] = np.inf
        return d
    for j in range(m):
        order = np.argsort(F[:, j], kind="stable")
        lo, hi = F[order[0], j], F[order[-1], j]
        d[order[0]] = d[order[-1]] = np.inf
        if hi == lo:
            continue
        gaps = (F[order[2:], j] - F[order[:-2], j]) / (hi - lo)
        d[order[1:-1]] += gaps
    return d


def _better(a, b):
    if a.rank != b.rank:
        return a.rank < b.rank
    return a.crowding > b.crowding


def tournament_select(pop, rng, k=2):
    cand = [pop[i] for i in rng.choice(len(pop), size=min(k, len(pop)), replace=False)]
    best = cand[0]
    for c in cand[1:]:
        if _better(c, best):
            best = c
    return best


def sbx_crossover(p1, p2, rng, eta=15.0, rate=0.9):
    """Simulated binary crossover on [0, 1] genes (Deb & Agrawal bounded form)."""
    c1, c2 = p1.astype(np.float64).copy(), p2.astype(np.float64).copy()
    if rng.random() > rate:
        return c1, c2
    for i in range(len(c1)):
        if rng.random() > 0.5 or abs(p1[i] - p2[i]) < 1e-14:
            continue
        y1, y2 = min(p1[i], p2[i]), max(p1[i], p2[i])
        u = rng.random()
        beta = 1.0 + 2.0 * min(y1, 1.0 - y2) / (y2 - y1)
        alpha = 2.0 - beta ** -(eta + 1)
        bq = (u * alpha) ** (1 / (eta + 1)) if u <= 1 / alpha else (1 / (2 - u * alpha)) ** (1 / (eta + 1))
        a = 0.5 * ((y1 + y2) - bq * (y2 - y1))
        b = 0.5 * ((y1 + y2) + bq * (y2 - y1))
        if rng.random() < 0.5:
            a, b = b, a
        c1[i], c2[i] = a, b
    return np.clip(c1, 0, 1), np.clip(c2, 0, 1)


def polynomial_mutation(x, rng, eta=20.0, rate=None):
    y = x.astype(np.float64).copy()
    rate = 1.0 / len(y) if rate is None else rate
    for i in range(len(y)):
        if rng.random() >= rate:
            continue
        u = rng.random()
        d1, d2 = y[i], 1.0 - y[i]
        mp = 1.0 / (eta + 1)
        if u < 0.5:
            dq = (2 * u + (1 - 2 * u) * (1 - d1) ** (eta + 1)) ** mp - 1
        else:
            dq = 1 - (2 * (1 - u) + 2 * (u - 0.5) * (1 - d2) ** (eta + 1)) ** mp
        y[i] += dq
    return np.clip(y, 0, 1)


def _rank(pop):
    fronts = fast_nondominated_sort([c.fitness for c in pop])
    for r, front in enumerate(fronts):
        cd = crowding_distance([pop[i].fitness for i in front])
        for i, d in zip(front, cd):
            pop[i].rank, pop[i].crowding = r, float(d)
    return fronts


def _survivors(pool, n):
    fronts = _rank(pool)
    out = []
    for front in fronts:
        members = [pool[i] for i in front]
        if len(out) + len(members) <= n:
            out += members
        else:
            members.sort(key=lambda c: -c.crowding)
            out += members[:n - len(out)]
            break
    return out


def evolve(evaluate, n_genes, config=None, objectives=None):
    """Run NSGA-II for ``generations`` x ``population`` evaluations.

    ``evaluate(genes) -> reward``; the fitness minimised is -reward (or
    ``objectives(genes, reward)`` when multi-objective diagnostics are
    wanted). Generation 1 is the random initial population.
    """
    cfg = config or GAConfig()
    rng = np.random.default_rng(cfg.seed)
    mrate = cfg.mutation_rate if cfg.mutation_rate is not None else 1.0 / n_genes
    result = GAResult(best=None)

    def score(children):
        genes = [c.genes for c in children]
        if cfg.threads > 1:
            with ThreadPoolExecutor(cfg.threads) as ex:
                rewards = list(ex.map(evaluate, genes))
        else:
            rewards = [evaluate(g) for g in genes]
        for c, r in zip(children, rewards):
            c.reward = float(r)
            c.fitness = tuple(objectives(c.genes, r)) if objectives else (-float(r),)
            result.archive.append((c.genes.copy(), c.reward))
        result.evaluations += len(children)

    pop = [Chromosome(rng.random(n_genes)) for _ in range(cfg.population)]
    score(pop)
    _rank(pop)
    for gen in range(1, cfg.generations + 1):
        if gen > 1:
            kids = []
            while len(kids) < cfg.population:
                a = tournament_select(pop, rng, cfg.tournament)
                b = tournament_select(pop, rng, cfg.tournament)
                c1, c2 = sbx_crossover(a.genes, b.genes, rng, cfg.eta_c, cfg.crossover_rate)
                kids.append(Chromosome(polynomial_mutation(c1, rng, cfg.eta_m, mrate)))
                if len(kids) < cfg.population:
                    kids.append(Chromosome(polynomial_mutation(c2, rng, cfg.eta_m, mrate)))
            score(kids)
            pop = _survivors(pop + kids, cfg.population)
        rewards = [c.reward for c in pop]
        best = max(pop, key=lambda c: c.reward)
        if result.best is None or best.reward > result.best.reward:
            result.best = Chromosome(best.genes.copy(), best.fitness, best.rank, best.crowding,
                                     best.reward)
        result.history.append((gen, result.best.reward, float(np.mean(rewards))))
    return result
