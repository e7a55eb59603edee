"""
Annealing quântico simulado (SQA) por réplicas acopladas.

M réplicas do vetor binário evoluem por Metropolis com flips de um bit.
Réplicas vizinhas (anel periódico) são acopladas por um campo transverso
Gamma(n) = Gamma0 · exp(-nu·n); a temperatura segue T(n) = T0 · nu^n.
A energia clássica é dividida por `energy_scale` antes da aceitação.
Ao final, cada conjunto viável do ranking passa por uma descida por
trocas (um link sai, outro entra) que preserva |S| = k.
"""

import logging
import math
import time
from dataclasses import replace
from typing import Callable, Iterable, List

import numpy as np
from joblib import Parallel, delayed
from numba import njit

from src.models import AnnealParams, AnnealResult, QuboInstance
from src.qubo import qubo_energy, qubo_matrices

logger = logging.getLogger(__name__)


@njit(cache=True, nogil=True)
def accept_probability(delta_e, temperature):
    """Critério de Metropolis: min{1, exp(-ΔE/T)}."""
    if delta_e <= 0.0:
        return 1.0
    return math.exp(-delta_e / temperature)


@njit(cache=True, nogil=True)
def schedule_step(T_n, gamma0, nu, n):
    """
    Avança os cronogramas de um sweep.

    Returns:
        (T_{n+1}, Gamma(n)) com T_{n+1} = nu·T_n e Gamma(n) = Gamma0·e^{-nu·n}
    """
    return nu * T_n, gamma0 * math.exp(-nu * n)


@njit(cache=True, nogil=True)
def _flip_delta(h, field_row, u_row, s):
    """Variação da energia clássica ao inverter o bit s (campo F = W·u)."""
    d = 1 - 2 * u_row[s]
    return d * (h[s] + 2.0 * field_row[s])


@njit(cache=True, nogil=True)
def _coupling_delta(states, m, s, gamma, spin_mode):
    M = states.shape[0]
    if M == 1:
        return 0.0
    prev = (m - 1 + M) % M
    nxt = (m + 1) % M
    d = 1 - 2 * states[m, s]
    if spin_mode:
        neighbours = (2 * states[prev, s] - 1) + (2 * states[nxt, s] - 1)
        return -2.0 * gamma * d * neighbours
    return -gamma * d * (states[prev, s] + states[nxt, s])


@njit(cache=True, nogil=True)
def _sqa_delta(h, fields, states, m, s, gamma, spin_mode, scale):
    """Δ(sqa_energy) de um flip; devolve também o ΔE clássico sem escala."""
    delta = _flip_delta(h, fields[m], states[m], s)
    total = delta / scale + _coupling_delta(states, m, s, gamma, spin_mode)
    return total, delta


@njit(cache=True, nogil=True)
def _offer(board_states, board_energies, count, state, energy):
    keep_top = board_energies.shape[0]
    n = state.shape[0]
    for j in range(count):
        same = True
        for i in range(n):
            if board_states[j, i] != state[i]:
                same = False
                break
        if same:
            if energy < board_energies[j]:
                board_energies[j] = energy
            return count
    if count < keep_top:
        board_states[count, :] = state
        board_energies[count] = energy
        return count + 1
    worst = 0
    for j in range(1, keep_top):
        if board_energies[j] > board_energies[worst]:
            worst = j
    if energy < board_energies[worst]:
        board_states[worst, :] = state
        board_energies[worst] = energy
    return count


@njit(cache=True, nogil=True)
def _anneal_kernel(h, W, const, scale, k, M, n_iter, T0, gamma0, nu,
                   spin_mode, init_state, seed, keep_top):
    np.random.seed(seed)
    n = h.shape[0]

    states = np.empty((M, n), dtype=np.int64)
    fields = np.zeros((M, n))
    energies = np.empty(M)
    counts = np.empty(M, dtype=np.int64)

    for i in range(n):
        acc = 0.0
        for j in range(n):
            if init_state[j] == 1:
                acc += W[i, j]
        fields[0, i] = acc
    energy0 = const
    for i in range(n):
        if init_state[i] == 1:
            energy0 += h[i] + fields[0, i]

    for m in range(M):
        states[m, :] = init_state
        fields[m, :] = fields[0, :]
        energies[m] = energy0
        counts[m] = init_state.sum()

    best_state = init_state.copy()
    best_energy = energy0
    trace = np.empty(n_iter)
    board_states = np.zeros((keep_top, n), dtype=np.int64)
    board_energies = np.full(keep_top, np.inf)
    board_count = 0
    if counts[0] == k:
        board_count = _offer(board_states, board_energies, board_count,
                             init_state, energy0)

    T = T0
    for sweep in range(n_iter):
        T_next, gamma = schedule_step(T, gamma0, nu, sweep)

        # Um sweep = n·M propostas (réplica e bit uniformes, com reposição)
        for _ in range(n * M):
            m = np.random.randint(0, M)
            s = np.random.randint(0, n)
            total, delta = _sqa_delta(h, fields, states, m, s, gamma,
                                      spin_mode, scale)
            if total > 0.0 and \
                    np.random.random() >= accept_probability(total, T):
                continue

            d = 1 - 2 * states[m, s]
            states[m, s] += d
            counts[m] += d
            energies[m] += delta
            for i in range(n):
                fields[m, i] += d * W[i, s]

            if energies[m] < best_energy:
                best_energy = energies[m]
                best_state[:] = states[m]
            if counts[m] == k:
                board_count = _offer(board_states, board_energies,
                                     board_count, states[m], energies[m])

        trace[sweep] = best_energy
        T = T_next

    return (best_state, best_energy, trace, board_states, board_energies,
            board_count)


def resolve_energy_scale(instance: QuboInstance,
                         params: AnnealParams) -> float:
    """Escala explícita ou o maior |coeficiente| da instância (mínimo 1)."""
    if params.energy_scale is not None:
        return float(params.energy_scale)
    scale = instance.max_abs_coefficient
    return scale if scale > 0 else 1.0


def replica_coupling_energy(states, gamma: float,
                            coupling_mode: str = "binary-literal") -> float:
    """Energia de acoplamento entre réplicas vizinhas (anel periódico)."""
    states = np.asarray(states, dtype=np.int64)
    M = len(states)
    if M == 1:
        return 0.0
    shifted = np.roll(states, -1, axis=0)
    if coupling_mode == "spin":
        return -gamma * float(((2 * states - 1) * (2 * shifted - 1)).sum())
    return -gamma * float((states * shifted).sum())


def sqa_energy(states, instance: QuboInstance, gamma: float,
               coupling_mode: str = "binary-literal",
               energy_scale: float = 1.0) -> float:
    """
    Energia estendida sobre as M réplicas.

    Σ_m E(u^(m)) / energy_scale − Γ Σ_m Σ_s couple(u_s^(m), u_s^(m+1)),
    com a réplica M acoplada à primeira. Para M = 1 o acoplamento é zero.

    Args:
        states: Matriz (M, n) de bits
        instance: Instância QUBO
        gamma: Intensidade do campo transverso
        coupling_mode: 'binary-literal' (u·u') ou 'spin' ((2u−1)(2u'−1))
        energy_scale: Divisor da energia clássica

    Exemplo:
        >>> sqa_energy([[1], [1]], inst, gamma=2.0)  # E(u) = -5
        -14.0
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.int64))
    classical = sum(qubo_energy(instance, row) for row in states)
    return classical / energy_scale + replica_coupling_energy(
        states, gamma, coupling_mode
    )


def sqa_flip_delta(states, instance: QuboInstance, m: int, s: int,
                   gamma: float, coupling_mode: str = "binary-literal",
                   energy_scale: float = 1.0) -> float:
    """Δ(sqa_energy) incremental ao inverter o bit s da réplica m."""
    h, W, _ = qubo_matrices(instance)
    states = np.atleast_2d(np.asarray(states, dtype=np.int64))
    fields = states @ W.T
    total, _ = _sqa_delta(
        np.ascontiguousarray(h, dtype=np.float64),
        np.ascontiguousarray(fields, dtype=np.float64),
        np.ascontiguousarray(states), int(m), int(s), float(gamma),
        coupling_mode == "spin", float(energy_scale),
    )
    return float(total)


def _swap_descent(h, W, u, max_steps=None):
    u = np.asarray(u, dtype=np.int64).copy()
    field = W @ u
    tol = 1e-9 * max(1.0, float(np.abs(h).max(initial=0.0)),
                     float(np.abs(W).max(initial=0.0)))
    max_steps = max_steps or 10 * len(u)
    for _ in range(max_steps):
        on = np.flatnonzero(u)
        off = np.flatnonzero(u == 0)
        if len(on) == 0 or len(off) == 0:
            break
        gain = h + 2.0 * field
        # Sai i, entra j: ΔE = g_j − g_i − 2·W_ij
        deltas = gain[off][None, :] - gain[on][:, None] \
            - 2.0 * W[np.ix_(on, off)]
        r, c = np.unravel_index(int(np.argmin(deltas)), deltas.shape)
        if deltas[r, c] >= -tol:
            break
        i, j = on[r], off[c]
        u[i], u[j] = 0, 1
        field += W[:, j] - W[:, i]
    return u


def _complete_to_k(h, W, u, k):
    """Remove ou adiciona, um bit por vez, o flip de menor ΔE até |S| = k."""
    u = np.asarray(u, dtype=np.int64).copy()
    field = W @ u
    while int(u.sum()) != k:
        gain = h + 2.0 * field
        if u.sum() > k:
            on = np.flatnonzero(u)
            s = on[int(np.argmin(-gain[on]))]
            d = -1
        else:
            off = np.flatnonzero(u == 0)
            s = off[int(np.argmin(gain[off]))]
            d = 1
        u[s] += d
        field += d * W[:, s]
    return u


def swap_descent(instance: QuboInstance, u) -> np.ndarray:
    """
    Descida mais íngreme por trocas (um link sai, outro entra).

    A cardinalidade de u é preservada; termina num mínimo local da
    vizinhança de trocas.
    """
    h, W, _ = qubo_matrices(instance)
    return _swap_descent(np.asarray(h, dtype=np.float64),
                         np.asarray(W, dtype=np.float64), u)


def _polish(h, W, k, best_state, board_states, board_count):
    starts = [board_states[j] for j in range(board_count)]
    if not starts and 0 < k < len(best_state):
        starts = [_complete_to_k(h, W, best_state, k)]
    return [_swap_descent(h, W, u) for u in starts]


def _links(u) -> tuple:
    return tuple(int(i) + 1 for i in np.flatnonzero(u))


def _build_result(instance, best_state, trace, states, params, wall_time,
                  method):
    best_u = np.asarray(best_state, dtype=np.int64).copy()
    best_energy = qubo_energy(instance, best_u)

    board = {}
    for state in states:
        u = np.asarray(state, dtype=np.int64).copy()
        links = _links(u)
        if links not in board:
            board[links] = (qubo_energy(instance, u), u)
    ranked = sorted(board.items(), key=lambda item: (item[1][0], item[0]))
    ranked = ranked[:int(params.keep_top)]

    result = AnnealResult(
        best_u=best_u,
        best_energy=best_energy,
        trace=[float(v) for v in trace],
        seed=params.seed,
        wall_time=wall_time,
        method=method,
        leaderboard=[(links, energy) for links, (energy, _) in ranked],
        params=params.to_dict(),
    )
    if ranked:
        _, (energy, u) = ranked[0]
        result.best_feasible_u = u
        result.best_feasible_energy = energy
        if energy < best_energy:
            result.best_u = u.copy()
            result.best_energy = energy
    return result


def run_sqa(instance: QuboInstance,
            params: AnnealParams = AnnealParams(),
            method: str = "sqa") -> AnnealResult:
    """
    Executa uma rodada de SQA sobre a instância.

    Args:
        instance: Instância QUBO (k e lambda definidos)
        params: Parâmetros do annealing
        method: Rótulo gravado no resultado

    Returns:
        AnnealResult com o menor estado visitado, traço por sweep e o
        ranking de conjuntos viáveis (|S| = k)
    """
    h, W, const = qubo_matrices(instance)
    scale = resolve_energy_scale(instance, params)
    rng = np.random.default_rng(params.seed)
    init_state = rng.integers(0, 2, size=instance.n).astype(np.int64)

    h = np.ascontiguousarray(h, dtype=np.float64)
    W = np.ascontiguousarray(W, dtype=np.float64)

    start = time.perf_counter()
    (best_state, _, trace, board_states, _,
     board_count) = _anneal_kernel(
        h, W, const, scale, instance.k, int(params.M), int(params.n_iter),
        float(params.T0), float(params.gamma0), float(params.nu),
        params.coupling_mode == "spin", init_state,
        int(params.seed) % (2 ** 32), int(params.keep_top),
    )
    states = [board_states[j] for j in range(board_count)]
    if params.polish:
        states += _polish(h, W, instance.k, best_state, board_states,
                          board_count)
    wall_time = time.perf_counter() - start

    result = _build_result(instance, best_state, trace, states, params,
                           wall_time, method)
    logger.debug(
        f"{method.upper()} seed={params.seed} k={instance.k}: "
        f"E*={result.best_energy:.4f} viável={result.best_feasible_links} "
        f"({wall_time:.3f}s)"
    )
    return result


def run_sa(instance: QuboInstance,
           params: AnnealParams = AnnealParams()) -> AnnealResult:
    """SA clássico: o mesmo kernel com uma réplica e Gamma0 = 0."""
    return run_sqa(instance, replace(params, M=1, gamma0=0.0), method="sa")


def run_many(instance: QuboInstance, params: AnnealParams,
             seeds: Iterable[int], n_jobs: int = 1,
             solver: Callable = run_sqa) -> List[AnnealResult]:
    """Rodadas independentes por semente, ordenadas por (energia, semente)."""
    seeds = list(seeds)
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(solver)(instance, replace(params, seed=int(seed)))
        for seed in seeds
    )
    return sorted(results, key=lambda r: (r.best_energy, r.seed))


def run_sqa_oracle(energy_fn: Callable[[np.ndarray], float], n: int, k: int,
                   params: AnnealParams = AnnealParams(),
                   energy_scale: float = 1.0) -> AnnealResult:
    """
    SQA sobre uma energia arbitrária (modo direto: cada avaliação pode
    custar uma resolução de UE).

    energy_fn deve aceitar um vetor binário e devolver a energia; valores
    não finitos são rejeitados pelo Metropolis.
    """
    rng = np.random.default_rng(params.seed)
    M = int(params.M)
    spin_mode = params.coupling_mode == "spin"
    init_state = rng.integers(0, 2, size=n).astype(np.int64)
    energy0 = float(energy_fn(init_state))

    states = np.tile(init_state, (M, 1))
    energies = np.full(M, energy0)
    best_state = init_state.copy()
    best_energy = energy0
    board = {}
    if init_state.sum() == k and math.isfinite(energy0):
        board[_links(init_state)] = energy0
    trace = []

    start = time.perf_counter()
    T = float(params.T0)
    for sweep in range(int(params.n_iter)):
        T_next, gamma = schedule_step(T, float(params.gamma0),
                                      float(params.nu), sweep)

        for _ in range(n * M):
            m = int(rng.integers(M))
            s = int(rng.integers(n))
            candidate = states[m].copy()
            candidate[s] = 1 - candidate[s]
            new_energy = float(energy_fn(candidate))
            if not math.isfinite(new_energy):
                continue

            total = (new_energy - energies[m]) / energy_scale \
                + _coupling_delta(states, m, s, gamma, spin_mode)
            if total > 0.0 and rng.random() >= accept_probability(total, T):
                continue

            states[m] = candidate
            energies[m] = new_energy
            if new_energy < best_energy:
                best_energy = new_energy
                best_state = candidate.copy()
            if candidate.sum() == k:
                board[_links(candidate)] = new_energy

        trace.append(best_energy)
        T = T_next

    wall_time = time.perf_counter() - start
    ranked = sorted(board.items(), key=lambda item: (item[1], item[0]))
    ranked = ranked[:int(params.keep_top)]

    result = AnnealResult(
        best_u=best_state,
        best_energy=best_energy,
        trace=trace,
        seed=params.seed,
        wall_time=wall_time,
        method="sqa-direct",
        leaderboard=ranked,
        params=params.to_dict(),
    )
    if ranked:
        links, energy = ranked[0]
        feasible = np.zeros(n, dtype=np.int64)
        feasible[[i - 1 for i in links]] = 1
        result.best_feasible_u = feasible
        result.best_feasible_energy = energy
    return result
