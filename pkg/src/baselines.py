"""
Meta-heurísticas de referência (GA, PSO, SA, TS) sobre a mesma QUBO.

Todas minimizam a energia penalizada e terminam com reparo guloso da
cardinalidade, então sempre devolvem um conjunto com |S| = k.
"""

import logging
import math
import time
from dataclasses import replace
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from src.annealer import run_sqa
from src.models import (
    AnnealParams,
    AnnealResult,
    HeuristicParams,
    QuboInstance,
)
from src.oracle import DEFAULT_GUARD, enumerate_exact, n_choose_k
from src.qubo import qubo_energy, qubo_matrices

logger = logging.getLogger(__name__)


class _Objective:
    """Energia vetorizada na forma const + h·u + u^T W u."""

    def __init__(self, instance: QuboInstance):
        self.instance = instance
        self.h, self.W, self.const = qubo_matrices(instance)

    def batch(self, population) -> np.ndarray:
        P = population.astype(float)
        return self.const + P @ self.h + np.einsum('ij,ij->i', P @ self.W, P)

    def energy(self, u) -> float:
        return float(self.batch(u[None, :])[0])


class _Board:
    """Ranking dos melhores conjuntos viáveis vistos."""

    def __init__(self, k, keep_top=10):
        self.k = k
        self.keep_top = keep_top
        self.entries = {}

    def threshold(self):
        if len(self.entries) < self.keep_top:
            return math.inf
        return sorted(self.entries.values())[self.keep_top - 1]

    def offer(self, u, energy):
        if int(u.sum()) != self.k or energy >= self.threshold():
            return
        links = tuple(int(i) + 1 for i in np.flatnonzero(u))
        if energy < self.entries.get(links, math.inf):
            self.entries[links] = float(energy)
        if len(self.entries) > 4 * self.keep_top:
            self.entries = dict(self.ranked())

    def offer_many(self, population, energies):
        feasible = np.flatnonzero(population.sum(axis=1) == self.k)
        for i in feasible[np.argsort(energies[feasible], kind='stable')]:
            if energies[i] >= self.threshold():
                break
            self.offer(population[i], energies[i])

    def ranked(self):
        items = sorted(self.entries.items(), key=lambda kv: (kv[1], kv[0]))
        return items[:self.keep_top]


def repair(u, instance: QuboInstance) -> np.ndarray:
    """
    Ajusta a cardinalidade para k: remove os bits ativos de menor |c| ou
    adiciona os inativos de maior |c|.
    """
    u = np.asarray(u, dtype=np.int64).copy()
    weight = np.abs(instance.c)
    excess = int(u.sum()) - instance.k
    if excess > 0:
        on = np.flatnonzero(u)
        drop = on[np.argsort(weight[on], kind='stable')[:excess]]
        u[drop] = 0
    elif excess < 0:
        off = np.flatnonzero(u == 0)
        add = off[np.argsort(-weight[off], kind='stable')[:-excess]]
        u[add] = 1
    return u


def _random_feasible(rng, n, k):
    u = np.zeros(n, dtype=np.int64)
    u[rng.choice(n, size=k, replace=False)] = 1
    return u


def _finish(instance, board, best_u, trace, params, wall_time, method):
    # Energias acumuladas por deltas são recalculadas de forma exata
    ranked = []
    for links, _ in board.ranked():
        u = np.zeros(instance.n, dtype=np.int64)
        u[[i - 1 for i in links]] = 1
        ranked.append((links, qubo_energy(instance, u)))
    ranked.sort(key=lambda item: (item[1], item[0]))

    if ranked:
        links, energy = ranked[0]
        final = np.zeros(instance.n, dtype=np.int64)
        final[[i - 1 for i in links]] = 1
    else:
        final = repair(best_u, instance)
        energy = qubo_energy(instance, final)
        board.offer(final, energy)
        ranked = board.ranked()

    return AnnealResult(
        best_u=final,
        best_energy=float(energy),
        trace=[float(v) for v in trace],
        seed=params.seed,
        wall_time=wall_time,
        method=method,
        best_feasible_u=final.copy(),
        best_feasible_energy=float(energy),
        leaderboard=ranked,
        params=params.to_dict(),
    )


def run_ga(instance: QuboInstance,
           params: HeuristicParams = HeuristicParams(method="ga"),
           keep_top: int = 10) -> AnnealResult:
    """Algoritmo genético: torneio, cruzamento de dois pontos, elitismo 1."""
    rng = np.random.default_rng(params.seed)
    objective = _Objective(instance)
    board = _Board(instance.k, keep_top)
    n, N = instance.n, int(params.ga_population)
    density = instance.k / n

    start = time.perf_counter()
    population = (rng.random((N, n)) < density).astype(np.int64)
    fitness = objective.batch(population)
    best = int(np.argmin(fitness))
    best_u, best_e = population[best].copy(), float(fitness[best])
    trace = []

    for _ in range(int(params.ga_generations)):
        board.offer_many(population, fitness)
        idx = rng.integers(0, N, size=(N, int(params.ga_tournament)))
        winners = idx[np.arange(N), np.argmin(fitness[idx], axis=1)]
        children = population[winners].copy()

        for i in range(0, N - 1, 2):
            if rng.random() < params.ga_crossover_p:
                a, b = np.sort(rng.choice(n + 1, size=2, replace=False))
                segment = children[i, a:b].copy()
                children[i, a:b] = children[i + 1, a:b]
                children[i + 1, a:b] = segment

        mutate = np.flatnonzero(rng.random(N) < params.ga_mutation_p)
        positions = rng.integers(0, n, size=len(mutate))
        children[mutate, positions] ^= 1

        children[0] = best_u
        population = children
        fitness = objective.batch(population)
        gen_best = int(np.argmin(fitness))
        if fitness[gen_best] < best_e:
            best_u, best_e = population[gen_best].copy(), float(fitness[gen_best])
        trace.append(best_e)

    board.offer_many(population, fitness)
    return _finish(instance, board, best_u, trace, params,
                   time.perf_counter() - start, "ga")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def run_pso(instance: QuboInstance,
            params: HeuristicParams = HeuristicParams(method="pso"),
            keep_top: int = 10) -> AnnealResult:
    """PSO binário: posição contínua, bit = 1 com probabilidade sigmoide."""
    rng = np.random.default_rng(params.seed)
    objective = _Objective(instance)
    board = _Board(instance.k, keep_top)
    n, N = instance.n, int(params.pso_particles)
    vmax = float(params.pso_vmax)

    # Posições iniciais centradas na densidade k/n
    p = min(max(instance.k / n, 1e-3), 1 - 1e-3)
    start = time.perf_counter()
    position = np.clip(math.log(p / (1 - p)) + rng.normal(0, 1, (N, n)),
                       -vmax, vmax)
    velocity = np.zeros((N, n))
    bits = (rng.random((N, n)) < _sigmoid(position)).astype(np.int64)
    fitness = objective.batch(bits)
    pbest, pbest_fit = bits.copy(), fitness.copy()
    g = int(np.argmin(pbest_fit))
    gbest, gbest_fit = pbest[g].copy(), float(pbest_fit[g])
    board.offer_many(bits, fitness)
    trace = []

    for _ in range(int(params.pso_iterations)):
        r1 = rng.random((N, n))
        r2 = rng.random((N, n))
        velocity = (params.pso_inertia * velocity
                    + params.pso_cognitive * r1 * (pbest - bits)
                    + params.pso_social * r2 * (gbest - bits))
        velocity = np.clip(velocity, -vmax, vmax)
        position = np.clip(position + velocity, -vmax, vmax)
        bits = (rng.random((N, n)) < _sigmoid(position)).astype(np.int64)
        fitness = objective.batch(bits)
        board.offer_many(bits, fitness)

        improved = fitness < pbest_fit
        pbest[improved] = bits[improved]
        pbest_fit[improved] = fitness[improved]
        g = int(np.argmin(pbest_fit))
        if pbest_fit[g] < gbest_fit:
            gbest, gbest_fit = pbest[g].copy(), float(pbest_fit[g])
        trace.append(gbest_fit)

    return _finish(instance, board, gbest, trace, params,
                   time.perf_counter() - start, "pso")


def _flip_deltas(objective, u, field, idx):
    d = 1 - 2 * u[idx]
    return d * (objective.h[idx] + 2.0 * field[idx])


def calibrate_temperature(instance: QuboInstance, rng, samples: int = 100,
                          target: float = 0.5) -> float:
    """
    Temperatura inicial em que ~target dos movimentos de subida são aceitos:
    T0 = mediana(dE) / ln(1/target), sobre `samples` subidas aleatórias.
    """
    objective = _Objective(instance)
    uphill = []
    for _ in range(20 * samples):
        if len(uphill) >= samples:
            break
        u = _random_feasible(rng, instance.n, instance.k)
        field = objective.W @ u
        s = int(rng.integers(instance.n))
        delta = float(_flip_deltas(objective, u, field, np.array([s]))[0])
        if delta > 0:
            uphill.append(delta)
    if not uphill:
        return 1.0
    return float(np.median(uphill) / math.log(1.0 / target))


def run_sa_baseline(instance: QuboInstance,
                    params: HeuristicParams = HeuristicParams(method="sa"),
                    keep_top: int = 10) -> AnnealResult:
    """Recozimento simulado clássico com flips e trocas (um entra, um sai)."""
    rng = np.random.default_rng(params.seed)
    objective = _Objective(instance)
    board = _Board(instance.k, keep_top)
    n, k = instance.n, instance.k
    W, h = objective.W, objective.h

    start = time.perf_counter()
    T = calibrate_temperature(instance, rng) if params.sa_calibrate \
        else float(params.sa_T0)
    T_initial = T
    moves = int(params.sa_moves_per_stage or 10 * n)

    u = _random_feasible(rng, n, k)
    field = W @ u
    energy = objective.energy(u)
    best_u, best_e = u.copy(), energy
    board.offer(u, energy)
    trace = []
    stale = 0

    for _ in range(int(params.sa_stages)):
        improved = False
        for _ in range(moves):
            on = int(u.sum())
            if rng.random() < 0.5 and 0 < on < n:
                i = int(rng.choice(np.flatnonzero(u)))
                j = int(rng.choice(np.flatnonzero(u == 0)))
                delta = -(h[i] + 2.0 * field[i]) + h[j] \
                    + 2.0 * (field[j] - W[j, i])
                flips = ((i, -1), (j, 1))
            else:
                s = int(rng.integers(n))
                d = 1 - 2 * int(u[s])
                delta = d * (h[s] + 2.0 * field[s])
                flips = ((s, d),)

            if delta > 0 and rng.random() >= math.exp(-delta / T):
                continue

            for s, d in flips:
                u[s] += d
                field += d * W[:, s]
            energy += delta
            if energy < best_e:
                best_u, best_e = u.copy(), energy
                improved = True
            board.offer(u, energy)

        trace.append(best_e)
        T *= params.sa_cooling
        stale = 0 if improved else stale + 1
        if stale >= params.stagnation_limit:
            # Reinício a partir de um conjunto viável aleatório
            u = _random_feasible(rng, n, k)
            field = W @ u
            energy = objective.energy(u)
            T = T_initial
            stale = 0

    return _finish(instance, board, best_u, trace, params,
                   time.perf_counter() - start, "sa")


def tenure_bounds(n: int, params: HeuristicParams):
    """Faixa [min, max] da tenure, limitada a n/2."""
    hi = max(1, min(int(params.ts_tenure_max), n // 2))
    lo = max(1, min(int(params.ts_tenure_min), hi))
    return lo, hi


def tabu_tenure(n: int, params: HeuristicParams) -> int:
    """Tenure inicial: raiz de n dentro de tenure_bounds."""
    lo, hi = tenure_bounds(n, params)
    return min(max(int(round(math.sqrt(n))), lo), hi)


def adapt_tenure(tenure: int, improved: bool, stale: int, bounds) -> int:
    """
    Tenure reativa: encurta a cada novo melhor; alonga quando a busca fica
    `tenure` iterações seguidas sem melhora (sinal de ciclagem).
    """
    lo, hi = bounds
    if improved:
        return max(lo, tenure - 1)
    if stale > 0 and stale % tenure == 0:
        return min(hi, tenure + 1)
    return tenure


def run_ts(instance: QuboInstance,
           params: HeuristicParams = HeuristicParams(method="ts"),
           keep_top: int = 10) -> AnnealResult:
    """Busca tabu: adição/remoção, aspiração e tenure reativa."""
    rng = np.random.default_rng(params.seed)
    objective = _Objective(instance)
    board = _Board(instance.k, keep_top)
    n, k = instance.n, instance.k
    W = objective.W
    bounds = tenure_bounds(n, params)
    tenure = tabu_tenure(n, params)
    sample = min(int(params.ts_neighbourhood), n)

    start = time.perf_counter()
    u = _random_feasible(rng, n, k)
    field = W @ u
    energy = objective.energy(u)
    best_u, best_e = u.copy(), energy
    board.offer(u, energy)
    tabu_until = np.zeros(n, dtype=np.int64)
    trace = []
    stale = 0

    for it in range(int(params.ts_iterations)):
        candidates = rng.choice(n, size=sample, replace=False)
        deltas = _flip_deltas(objective, u, field, candidates)
        allowed = (tabu_until[candidates] <= it) | (energy + deltas < best_e)
        if allowed.any():
            pool = np.flatnonzero(allowed)
        else:
            pool = np.arange(len(candidates))
        choice = pool[np.argmin(deltas[pool])]
        s = int(candidates[choice])

        d = 1 - 2 * int(u[s])
        u[s] += d
        field += d * W[:, s]
        energy += float(deltas[choice])
        tabu_until[s] = it + tenure
        board.offer(u, energy)

        if energy < best_e:
            best_u, best_e = u.copy(), energy
            stale = 0
        else:
            stale += 1
        tenure = adapt_tenure(tenure, stale == 0, stale, bounds)
        if stale >= params.stagnation_limit:
            u = _random_feasible(rng, n, k)
            field = W @ u
            energy = objective.energy(u)
            tabu_until[:] = 0
            stale = 0
        trace.append(best_e)

    return _finish(instance, board, best_u, trace, params,
                   time.perf_counter() - start, "ts")


SOLVERS = {
    'ga': run_ga,
    'pso': run_pso,
    'sa': run_sa_baseline,
    'ts': run_ts,
}


def run_baseline(instance: QuboInstance, params: HeuristicParams,
                 keep_top: int = 10) -> AnnealResult:
    """Despacha para a meta-heurística indicada em params.method."""
    solver = SOLVERS[params.method]
    result = solver(instance, params, keep_top)
    logger.debug(
        f"{params.method.upper()} seed={params.seed} k={instance.k}: "
        f"{result.best_feasible_links} E={result.best_energy:.4f} "
        f"({result.wall_time:.3f}s)"
    )
    return result


def optimality_gap(energy: float, reference: float) -> float:
    """Gap relativo (E − E_ref) / |E_ref|; 0 quando ambos são nulos."""
    if reference == 0:
        return 0.0 if energy == 0 else math.inf
    return (energy - reference) / abs(reference)


def _reference_energy(instance, guard):
    if n_choose_k(instance.n, instance.k) > guard:
        return None
    return enumerate_exact(instance, instance.k, keep_top=1,
                           guard=guard).energy


def runtime_comparison(instances: Sequence[QuboInstance],
                       methods: Iterable[str] = ("sqa", "ga", "pso", "sa",
                                                 "ts"),
                       seeds: Iterable[int] = (0,),
                       anneal_params: AnnealParams = AnnealParams(),
                       heuristic_params: Optional[HeuristicParams] = None,
                       guard: int = DEFAULT_GUARD) -> pd.DataFrame:
    """
    Compara tempo e qualidade dos solvers por k.

    Args:
        instances: Uma instância por k (mesmo n)
        methods: 'sqa' e/ou métodos de HEURISTIC_METHODS
        seeds: Sementes por célula
        anneal_params: Parâmetros do SQA
        heuristic_params: Base para as meta-heurísticas (method é trocado)
        guard: Limite da enumeração usada como referência do gap

    Returns:
        DataFrame com colunas method, k, median_seconds, best_energy, gap.
        Sem oráculo, o gap é medido contra a melhor energia entre os métodos.
    """
    seeds = [int(seed) for seed in seeds]
    methods = list(methods)
    base = heuristic_params or HeuristicParams()
    rows = []

    for instance in instances:
        cells = []
        for method in methods:
            results = []
            for seed in seeds:
                if method == "sqa":
                    results.append(run_sqa(instance,
                                           replace(anneal_params, seed=seed)))
                else:
                    params = replace(base, method=method, seed=seed)
                    results.append(run_baseline(instance, params))
            energies = [r.best_feasible_energy if r.best_feasible_energy
                        is not None else r.best_energy for r in results]
            cells.append({
                'method': method,
                'k': instance.k,
                'median_seconds': float(np.median([r.wall_time
                                                   for r in results])),
                'best_energy': float(min(energies)),
            })

        reference = _reference_energy(instance, guard)
        if reference is None:
            reference = min(cell['best_energy'] for cell in cells)
        for cell in cells:
            cell['gap'] = optimality_gap(cell['best_energy'], reference)
            logger.info(
                f"{cell['method'].upper()} k={cell['k']}: "
                f"E={cell['best_energy']:.4f} gap={cell['gap']:.4%} "
                f"({cell['median_seconds']:.3f}s)"
            )
        rows.extend(cells)

    return pd.DataFrame(rows, columns=['method', 'k', 'median_seconds',
                                       'best_energy', 'gap'])
