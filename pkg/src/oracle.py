"""
Oráculo exato: enumeração de todos os conjuntos de k links.
"""

import logging
import math
from itertools import combinations, islice
from typing import Optional

import numpy as np
import pandas as pd

from src.models import OracleResult, QuboInstance
from src.validation_utils import EnumerationGuardError

logger = logging.getLogger(__name__)

DEFAULT_GUARD = 10 ** 7
CHUNK_SIZE = 50_000


def n_choose_k(n: int, k: int) -> int:
    """C(n, k) exato (inteiro de precisão arbitrária)."""
    if n < 0 or k < 0:
        raise ValueError("n e k devem ser >= 0")
    return math.comb(n, k)


def count_combinations(n: int, k_max: int) -> pd.DataFrame:
    """
    Crescimento combinatório de C(n, k) para k = 0..k_max.

    Returns:
        DataFrame com colunas n, k, count e cumulative (soma de C(n, j)
        para j <= k). Valores são inteiros Python (dtype object), exatos
        mesmo acima de 2^63.
    """
    if k_max < 0:
        raise ValueError("k_max deve ser >= 0")
    rows, total = [], 0
    for k in range(k_max + 1):
        count = n_choose_k(n, k)
        total += count
        rows.append({'n': n, 'k': k, 'count': count, 'cumulative': total})
    return pd.DataFrame(rows, columns=['n', 'k', 'count', 'cumulative'],
                        dtype=object)


def _chunks(n, k, size):
    iterator = combinations(range(n), k)
    while True:
        block = list(islice(iterator, size))
        if not block:
            return
        yield np.array(block, dtype=np.int64).reshape(len(block), k)


def _chunk_energies(instance, block, k):
    linear = instance.linear[block].sum(axis=1)
    if k > 1:
        sub = instance.B[block[:, :, None], block[:, None, :]]
        pairs = instance.pair_weight * sub.sum(axis=(1, 2))
    else:
        pairs = np.zeros(len(block))
    # Alvo de cardinalidade = k enumerado: a penalidade é nula
    return -linear - pairs


def enumerate_exact(instance: QuboInstance, k: int,
                    keep_top: Optional[int] = 5,
                    guard: int = DEFAULT_GUARD) -> OracleResult:
    """
    Avalia a energia de todos os C(n, k) conjuntos.

    Empates são desfeitos pela ordem lexicográfica dos ids.

    Args:
        instance: Instância QUBO
        k: Tamanho dos conjuntos (0 <= k <= n)
        keep_top: Tamanho do ranking (None = todos)
        guard: Limite de C(n, k) aceito

    Returns:
        OracleResult com ótimo e ranking

    Raises:
        EnumerationGuardError: Se C(n, k) > guard
    """
    n = instance.n
    if not 0 <= k <= n:
        raise ValueError(f"k deve estar em [0, {n}], recebido {k}")

    count = n_choose_k(n, k)
    if count > guard:
        raise EnumerationGuardError(count, guard)

    if k == 0:
        return OracleResult(k=0, optimum=(), energy=0.0,
                            ranking=[((), 0.0)], count=1)

    best_sets = np.empty((0, k), dtype=np.int64)
    best_energies = np.empty(0)
    all_sets, all_energies = [], []

    for block in _chunks(n, k, CHUNK_SIZE):
        energies = _chunk_energies(instance, block, k)
        if keep_top is None:
            all_sets.append(block)
            all_energies.append(energies)
            continue
        # Blocos chegam em ordem lexicográfica: sort estável preserva empates
        merged_sets = np.concatenate([best_sets, block])
        merged_energies = np.concatenate([best_energies, energies])
        order = np.argsort(merged_energies, kind='stable')[:keep_top]
        best_sets = merged_sets[order]
        best_energies = merged_energies[order]

    if keep_top is None:
        best_sets = np.concatenate(all_sets)
        best_energies = np.concatenate(all_energies)
        order = np.argsort(best_energies, kind='stable')
        best_sets, best_energies = best_sets[order], best_energies[order]

    ranking = [
        (tuple(int(i) + 1 for i in row), float(energy))
        for row, energy in zip(best_sets, best_energies)
    ]
    logger.debug(f"Enumeração k={k}: {count} conjuntos avaliados")
    return OracleResult(k=k, optimum=ranking[0][0], energy=ranking[0][1],
                        ranking=ranking, count=count)

