"""
Orquestração dos dois fluxos bi-nível.

Modo coeficiente: calcula (ou carrega) c e beta, monta a QUBO e minimiza.
Modo direto: cada configuração proposta pelo SQA é avaliada por uma
resolução de UE, com E(u) = -TSTT(u) + lambda (sum u - k)^2.
"""

import hashlib
import json
import logging
import math
import threading
import time
from dataclasses import replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.annealer import run_many, run_sa, run_sqa, run_sqa_oracle
from src.assignment import DEFAULT_BPR, DEFAULT_SETTINGS, solve_ue
from src.cache_manager import CacheManager, cache_result
from src.models import (
    BprParams,
    CriticalSetReport,
    DisruptionScenario,
    HybridConfig,
    Network,
    QuboInstance,
    ReportEntry,
    UESettings,
    format_links,
)
from src.oracle import DEFAULT_GUARD, enumerate_exact
from src.qubo import (
    compute_beta,
    compute_c,
    default_lambda,
    fixture_instance,
    fixture_residual_ratios,
    load_coefficients,
    load_coefficients_json,
    sample_residual_ratios,
    settings_hash,
)
from src.validation_utils import CoefficientError, InfeasibleAssignmentError

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ['k', 'rank', 'links', 'energy', 'tstt']
SURFACE_COLUMNS = ['k', 'rank', 'links', 'tstt']


def resolve_residual_ratios(network: Network,
                            config: HybridConfig) -> np.ndarray:
    """
    Vetor e da configuração: fixado (Nguyen-Dupuis) ou amostrado.

    Raises:
        CoefficientError: e fixado com número de links diferente da rede
    """
    if config.e_source == "fixture":
        e = fixture_residual_ratios()
        if len(e) != network.n_links:
            raise CoefficientError(
                f"e fixado tem {len(e)} valores; a rede tem "
                f"{network.n_links} links"
            )
        return e
    return sample_residual_ratios(network.n_links, config.e_interval,
                                  config.e_seed)


def resolve_lambda(c, B, config: HybridConfig) -> float:
    """Lambda explícito ou multiplicador x maior coeficiente (1 se nulos)."""
    if config.lam is not None:
        return float(config.lam)
    try:
        return default_lambda(c, B, config.lambda_multiplier)
    except CoefficientError as e:
        logger.warning(f"⚠️  {e}; usando lambda = 1")
        return 1.0


def build_instance(network: Network, config: HybridConfig,
                   e: Optional[np.ndarray] = None) -> QuboInstance:
    """
    Monta a QuboInstance do modo coeficiente.

    Args:
        network: Rede validada
        config: Configuração (fonte dos coeficientes, k, lambda)
        e: Razões residuais já resolvidas (opcional)

    Returns:
        QuboInstance com proveniência
    """
    source = config.coefficients
    if source == "fixture":
        instance = fixture_instance(k=config.k, lam=1.0,
                                    include_linear=config.include_linear)
    elif source == "compute":
        if e is None:
            e = resolve_residual_ratios(network, config)
        bpr, settings = config.bpr, config.ue_settings
        c, provenance = compute_c(network, e, bpr, settings,
                                  n_jobs=config.n_jobs, seed=config.e_seed)
        B, provenance = compute_beta(network, e, provenance, bpr, settings,
                                     n_jobs=config.n_jobs)
        instance = QuboInstance(c=c, B=B, lam=1.0, k=config.k,
                                include_linear=config.include_linear,
                                mask=provenance.valid_mask,
                                provenance=provenance)
    else:
        path = Path(source)
        if (path / "coefficients.json").exists():
            instance = load_coefficients_json(
                path / "coefficients.json", k=config.k, lam=1.0,
                include_linear=config.include_linear
            )
        else:
            instance = load_coefficients(
                path / "c.csv", path / "beta.csv", k=config.k, lam=1.0,
                include_linear=config.include_linear
            )

    return instance.with_lambda(resolve_lambda(instance.c, instance.B, config))


def estimated_tstt(instance: QuboInstance, links) -> Optional[float]:
    """TSTT previsto pelo modelo quadrático: base + sum c + sum_{s<t} beta."""
    provenance = instance.provenance
    if provenance is None or not provenance.baseline_tstt:
        return None
    idx = [link - 1 for link in links]
    pairs = sum(instance.B[i, j] for a, i in enumerate(idx)
                for j in idx[a + 1:])
    return float(provenance.baseline_tstt + instance.c[idx].sum() + pairs)


def _merge_leaderboards(results, top_n) -> List[Tuple[tuple, float]]:
    merged: Dict[tuple, float] = {}
    for result in results:
        for links, energy in result.leaderboard:
            if energy < merged.get(links, math.inf):
                merged[links] = energy
    ranked = sorted(merged.items(), key=lambda item: (item[1], item[0]))
    return ranked[:top_n]


def solve_instance(instance: QuboInstance, config: HybridConfig
                   ) -> Tuple[List[Tuple[tuple, float]], dict]:
    """
    Minimiza a QUBO com o solver configurado.

    Returns:
        Tupla (ranking de conjuntos viáveis, proveniência da execução)
    """
    start = time.perf_counter()
    if config.solver == "exact":
        result = enumerate_exact(instance, instance.k, keep_top=config.top_n,
                                 guard=DEFAULT_GUARD)
        ranked = list(result.ranking)
        info = {'enumerated': result.count}
    else:
        solver = run_sa if config.solver == "sa" else run_sqa
        anneal = replace(config.anneal, keep_top=max(config.anneal.keep_top,
                                                     config.top_n))
        results = run_many(instance, anneal, config.seeds,
                           n_jobs=config.n_jobs, solver=solver)
        ranked = _merge_leaderboards(results, config.top_n)
        info = {
            'anneal': anneal.to_dict(),
            'best_energy_per_seed': {r.seed: r.best_energy for r in results},
        }
    info['wall_time'] = time.perf_counter() - start
    return ranked, info


def run_coefficient_mode(network: Network, config: HybridConfig,
                         instance: Optional[QuboInstance] = None
                         ) -> CriticalSetReport:
    """
    Fluxo em dois estágios: coeficientes e depois minimização da QUBO.

    Args:
        network: Rede validada
        config: Configuração híbrida (mode = 'coefficient')
        instance: QuboInstance já construída (pula o cálculo dos
            coeficientes; k da configuração é aplicado)

    Returns:
        CriticalSetReport com os top_n conjuntos viáveis distintos
    """
    if instance is None:
        instance = build_instance(network, config)
    elif instance.k != config.k:
        instance = instance.with_k(config.k)

    ranked, info = solve_instance(instance, config)
    if not ranked:
        logger.warning(
            f"⚠️  Nenhum conjunto com |S| = {config.k} encontrado "
            f"({config.solver}); aumente n_iter ou lambda"
        )

    entries = [
        ReportEntry(rank=rank, links=tuple(links), energy=float(energy),
                    tstt=estimated_tstt(instance, links))
        for rank, (links, energy) in enumerate(ranked, start=1)
    ]
    provenance = {
        'solver': config.solver,
        'seeds': list(config.seeds),
        'lambda': instance.lam,
        'include_linear': instance.include_linear,
        'coefficients': config.coefficients,
        'settings_hash': (instance.provenance.settings_hash
                          if instance.provenance else None),
        **info,
    }
    report = CriticalSetReport(k=config.k, mode="coefficient",
                               entries=entries, provenance=provenance)
    if report.top:
        logger.info(
            f"✅ k={config.k}: conjunto crítico {format_links(report.top.links)}"
            f" (E={report.top.energy:.2f})"
        )
    return report


def _bits(u) -> str:
    return "".join(str(int(b)) for b in u)


class TsttEvaluator:
    """
    TSTT exato por configuração u, com memoização no CacheManager.

    Cada u distinto custa uma resolução de UE (warm start nos fluxos de
    base). Pares OD sem rota tornam o candidato inviável.
    """

    def __init__(self, network: Network, e, bpr: BprParams = DEFAULT_BPR,
                 settings: UESettings = DEFAULT_SETTINGS,
                 cache: Optional[CacheManager] = None):
        self.network = network
        self.e = np.asarray(e, dtype=float)
        self.bpr = bpr
        self.settings = settings
        self.cache = cache if cache is not None else CacheManager()
        self.solves = 0
        self._lock = threading.Lock()

        self.baseline = solve_ue(network, None, bpr, settings)
        e_hash = hashlib.md5(self.e.tobytes()).hexdigest()[:8]
        prefix = f"tstt:{settings_hash(network, bpr, settings)}:{e_hash}"
        self._evaluate = cache_result(self.cache, prefix,
                                      key_func=_bits)(self._solve)

    def _solve(self, u) -> dict:
        with self._lock:
            self.solves += 1
        scenario = DisruptionScenario(np.asarray(u, dtype=np.int64), self.e)
        try:
            solution = solve_ue(self.network, scenario, self.bpr,
                                self.settings, initial_flows=self.baseline)
        except InfeasibleAssignmentError as e:
            logger.debug(f"Candidato {scenario.disrupted_links} inviável: {e}")
            return {'tstt': None, 'feasible': False}
        return {'tstt': solution.tstt, 'feasible': True}

    def __call__(self, u) -> float:
        """TSTT de u (nan se inviável)."""
        if not np.any(u):
            return self.baseline.tstt
        value = self._evaluate(u)
        return float(value['tstt']) if value['feasible'] else math.nan


def run_direct_mode(network: Network, config: HybridConfig,
                    cache: Optional[CacheManager] = None,
                    evaluator: Optional[TsttEvaluator] = None
                    ) -> CriticalSetReport:
    """
    SQA com o Frank-Wolfe dentro do laço (sem coeficientes).

    Lambda padrão: multiplicador x TSTT de base; a escala de energia do
    annealing também é o TSTT de base.

    Returns:
        CriticalSetReport ordenado por TSTT exato decrescente
    """
    if not 1 <= config.k <= network.n_links:
        raise CoefficientError(
            f"k deve estar em [1, {network.n_links}], recebido {config.k}"
        )
    if evaluator is None:
        e = resolve_residual_ratios(network, config)
        settings = replace(config.ue_settings,
                           gap_tol=max(config.ue_settings.gap_tol,
                                       config.direct_gap_tol))
        evaluator = TsttEvaluator(network, e, config.bpr, settings, cache)

    baseline = evaluator.baseline.tstt
    lam = config.lam if config.lam is not None \
        else config.lambda_multiplier * baseline
    k = config.k

    def energy(u):
        value = evaluator(u)
        if not math.isfinite(value):
            return math.inf
        return -value + lam * (int(np.sum(u)) - k) ** 2

    anneal = replace(config.anneal, keep_top=max(config.anneal.keep_top,
                                                 config.top_n))
    start = time.perf_counter()
    results = Parallel(n_jobs=config.n_jobs, prefer="threads")(
        delayed(run_sqa_oracle)(energy, network.n_links, k,
                                replace(anneal, seed=seed), baseline)
        for seed in config.seeds
    )
    wall_time = time.perf_counter() - start

    ranked = _merge_leaderboards(results, config.top_n)
    entries = [
        ReportEntry(rank=rank, links=tuple(links), energy=float(value),
                    tstt=-float(value))
        for rank, (links, value) in enumerate(ranked, start=1)
    ]
    report = CriticalSetReport(
        k=k, mode="direct", entries=entries,
        provenance={
            'solver': 'sqa',
            'seeds': list(config.seeds),
            'lambda': lam,
            'baseline_tstt': baseline,
            'ue_solves': evaluator.solves,
            'cache': evaluator.cache.get_stats(),
            'anneal': anneal.to_dict(),
            'wall_time': wall_time,
        },
    )
    logger.info(
        f"✅ Modo direto k={k}: {evaluator.solves} resoluções de UE, "
        f"top-1 {format_links(report.top.links) if report.top else '-'}"
    )
    return report


def energy_distribution(instance: QuboInstance, k: int,
                        guard: int = DEFAULT_GUARD) -> pd.DataFrame:
    """
    Energia exata de todos os conjuntos de tamanho k (histograma).

    Raises:
        EnumerationGuardError: C(n, k) acima de guard
    """
    result = enumerate_exact(instance.with_k(k), k, keep_top=None,
                             guard=guard)
    return pd.DataFrame({
        'set': [format_links(links) for links, _ in result.ranking],
        'energy': [energy for _, energy in result.ranking],
    })


def tstt_surface(network: Network, reports: Iterable[CriticalSetReport], e,
                 bpr: BprParams = DEFAULT_BPR,
                 settings: UESettings = DEFAULT_SETTINGS,
                 top_n: int = 5, n_jobs: int = 1) -> pd.DataFrame:
    """
    TSTT exato (UE) dos top_n conjuntos de cada relatório.

    Cada k ganha uma linha de base (rank 0, sem links interrompidos).
    A monotonicidade do TSTT no rank é apenas registrada no log.
    """
    e = np.asarray(e, dtype=float)
    baseline = solve_ue(network, None, bpr, settings)

    cells = []
    for report in reports:
        for entry in report.entries[:top_n]:
            cells.append((report.k, entry.rank, entry.links))

    def evaluate(links):
        scenario = DisruptionScenario.from_links(e, links)
        try:
            return solve_ue(network, scenario, bpr, settings,
                            initial_flows=baseline).tstt
        except InfeasibleAssignmentError as err:
            logger.warning(f"⚠️  {err}")
            return math.nan

    values = Parallel(n_jobs=n_jobs)(
        delayed(evaluate)(links) for _, _, links in cells
    )

    rows = []
    for k in sorted({k for k, _, _ in cells}):
        rows.append({'k': k, 'rank': 0, 'links': '', 'tstt': baseline.tstt})
        for (cell_k, rank, links), value in zip(cells, values):
            if cell_k == k:
                rows.append({'k': k, 'rank': rank,
                             'links': format_links(links), 'tstt': value})

    frame = pd.DataFrame(rows, columns=SURFACE_COLUMNS)
    for k, group in frame[frame['rank'] > 0].groupby('k'):
        ordered = bool(np.all(np.diff(group['tstt'].to_numpy()) <= 0))
        logger.info(f"Superfície TSTT k={k}: severidade monotônica no rank = "
                    f"{ordered}")
    return frame


def report_frame(reports: Iterable[CriticalSetReport]) -> pd.DataFrame:
    rows = [row for report in reports for row in report.to_rows()]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def save_report(report: CriticalSetReport, out_dir) -> Dict[str, str]:
    """
    Grava report_k<k>.json (precisão completa) e report_k<k>.csv.

    Returns:
        Dict nome -> caminho
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"report_k{report.k}.json"
    csv_path = out_dir / f"report_k{report.k}.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2, default=str),
                         encoding='utf-8')
    report_frame([report]).to_csv(csv_path, index=False, float_format="%.6g")
    return {f'report_k{report.k}_json': str(json_path),
            f'report_k{report.k}_csv': str(csv_path)}
