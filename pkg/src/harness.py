"""
Harness de experimentos: configuração, varreduras de sensibilidade
(k, e, lambda), estudos de escala, crescimento combinatório e registro
de execuções (run_record.json).
"""

import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src import __version__
from src.annealer import run_sqa
from src.baselines import run_baseline
from src.cache_manager import CacheManager
from src.forms import parse_experiment_config
from src.hybrid import (
    TsttEvaluator,
    build_instance,
    report_frame,
    resolve_residual_ratios,
    run_coefficient_mode,
    run_direct_mode,
    save_report,
)
from src.models import (
    AnnealParams,
    ExperimentConfig,
    HeuristicParams,
    Network,
    QuboInstance,
    RunRecord,
    SweepResult,
    format_links,
)
from src.network import builtin_nguyen_dupuis, load_network
from src.oracle import count_combinations
from src.qubo import synth_instance
from src.validation_utils import ConfigValidationError, safe_solver_call

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.6g"


def load_config(path=None, overrides: Optional[dict] = None
                ) -> ExperimentConfig:
    """
    Lê o JSON de configuração, aplica sobrescritas da CLI e valida.

    Args:
        path: Arquivo --config (opcional)
        overrides: Valores da CLI (None = não informado)

    Returns:
        ExperimentConfig validado

    Raises:
        ConfigValidationError: JSON ilegível, chave desconhecida, valor
            fora do domínio ou arquivo referenciado inexistente
    """
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, ValueError) as e:
            raise ConfigValidationError({'config': [f"{path}: {e}"]})

    if not isinstance(data, dict):
        raise ConfigValidationError({'config': ['Esperado um objeto JSON']})

    workers = os.getenv('QVULN_WORKERS')
    if workers and 'n_jobs' not in data:
        data['n_jobs'] = workers

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key] = {**data[key], **value}
        else:
            data[key] = value

    config = parse_experiment_config(data)
    check_files(config)
    return config


def check_files(config: ExperimentConfig):
    """Todos os arquivos referenciados devem existir no início da execução."""
    missing = []
    if config.network != "builtin" and not Path(config.network).exists():
        missing.append(config.network)
    if config.od_path and not Path(config.od_path).exists():
        missing.append(config.od_path)
    if config.coefficients not in ("compute", "fixture") and \
            not Path(config.coefficients).is_dir():
        missing.append(config.coefficients)
    if missing:
        raise ConfigValidationError(
            {'files': [f"Arquivo não encontrado: {p}" for p in missing]}
        )


def load_experiment_network(config: ExperimentConfig) -> Network:
    """Rede do experimento; o nível de demanda só vale para a embutida."""
    if config.network == "builtin":
        return builtin_nguyen_dupuis(config.demand_level)
    return load_network(config.network, format=config.network_format,
                        od_path=config.od_path)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunRecorder:
    """
    Acumula o RunRecord de um comando e grava run_record.json.

    Exemplo:
        recorder = RunRecorder('sweep k', config.to_dict(), out_dir)
        with recorder.step('sweep_k'):
            result = sweep_k(config, out_dir=out_dir)
        recorder.outputs(result.outputs)
        recorder.finish()
    """

    def __init__(self, command: str, config: dict, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.record = RunRecord(command=command, config=config,
                                version=__version__, started_at=_now())

    @contextmanager
    def step(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.record.wall_times[name] = time.perf_counter() - start

    def output(self, name: str, path):
        self.record.outputs[name] = str(path)

    def outputs(self, mapping: Dict[str, str]):
        for name, path in mapping.items():
            self.output(name, path)

    def deviation(self, text: str):
        logger.warning(f"⚠️  Desvio registrado: {text}")
        self.record.deviations.append(text)

    def finish(self, status: str = "completed",
               error: Optional[str] = None) -> Path:
        """Grava o registro; sucesso exige que todas as saídas existam."""
        if status == "completed":
            missing = [p for p in self.record.outputs.values()
                       if not Path(p).exists()]
            if missing:
                status = "failed"
                error = f"Saídas ausentes: {', '.join(missing)}"
        self.record.status = status
        self.record.error = error
        self.record.finished_at = _now()

        path = self.out_dir / "run_record.json"
        path.write_text(self.record.to_json(), encoding='utf-8')
        logger.info(f"Registro da execução: {path} ({status})")
        return path


def _failed_cell(error: Exception) -> dict:
    return {'status': 'failed', 'error': f"{type(error).__name__}: {error}"}


def _run_cells(cells: Sequence, job, n_jobs: int = 1) -> list:
    """Executa células independentes; falhas viram marcadores."""
    guarded = safe_solver_call(default_return=_failed_cell)(job)
    if n_jobs == 1 or len(cells) <= 1:
        return [guarded(cell) for cell in cells]
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(guarded)(cell) for cell in cells
    )


def _collect(keys, outcomes) -> SweepResult:
    result = SweepResult()
    for key, outcome in zip(keys, outcomes):
        if isinstance(outcome, dict) and outcome.get('status') == 'failed':
            result.failures[key] = outcome['error']
        else:
            result.reports[key] = outcome
    return result


def _write_csv(frame: pd.DataFrame, path: Path) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return str(path)


def _save_reports(result: SweepResult, out_dir, label=str):
    out_dir = Path(out_dir)
    for key, report in result.reports.items():
        for name, path in save_report(report, out_dir / label(key)).items():
            result.outputs[f"{label(key)}/{name}"] = path


def _cell_label(key) -> str:
    if isinstance(key, tuple):
        return "_".join(f"{part:g}" if isinstance(part, float) else str(part)
                        for part in key)
    return str(key)


def sweep_k(config: ExperimentConfig, network: Optional[Network] = None,
            instance: Optional[QuboInstance] = None,
            out_dir=None,
            cache: Optional[CacheManager] = None) -> SweepResult:
    """
    Identifica os conjuntos críticos para cada k de config.k_list.

    Os coeficientes (modo coeficiente) ou o avaliador de TSTT (modo direto)
    são construídos uma vez e compartilhados entre os k.

    Returns:
        SweepResult com relatórios por k e resumo no formato da tabela
        de conjuntos críticos (k, rank, links, energy, tstt)
    """
    network = network or load_experiment_network(config)
    base = config.hybrid()

    if config.mode == "coefficient":
        if instance is None:
            instance = build_instance(network, base)

        def job(k):
            return run_coefficient_mode(network, config.hybrid(k),
                                        instance=instance.with_k(k))
    else:
        e = resolve_residual_ratios(network, base)
        settings = replace(config.ue_settings,
                           gap_tol=max(config.ue_settings.gap_tol,
                                       base.direct_gap_tol))
        evaluator = TsttEvaluator(network, e, base.bpr, settings, cache)

        def job(k):
            return run_direct_mode(network, config.hybrid(k),
                                   evaluator=evaluator)

    keys = list(config.k_list)
    result = _collect(keys, _run_cells(keys, job, config.n_jobs))
    result.summary = report_frame(result.reports[k] for k in keys
                                  if k in result.reports)

    tops = [(k, result.reports[k].top.energy) for k in keys
            if k in result.reports and result.reports[k].top]
    tops.sort()
    result.details['min_energy_decreasing'] = all(
        b[1] < a[1] for a, b in zip(tops, tops[1:])
    )
    for k, error in result.failures.items():
        logger.error(f"Célula k={k} falhou: {error}")

    if out_dir is not None:
        _save_reports(result, out_dir, label=lambda k: f"k{k}")
        result.outputs['summary'] = _write_csv(
            result.summary, Path(out_dir) / "sweep_k_summary.csv"
        )
    return result


def sweep_e(config: ExperimentConfig,
            intervals: Optional[Iterable[Tuple[float, float]]] = None,
            network: Optional[Network] = None, out_dir=None,
            cache: Optional[CacheManager] = None) -> SweepResult:
    """
    Reamostra e por intervalo (semente fixa), recalcula os coeficientes e
    reidentifica os conjuntos para cada k.

    Um vetor e por intervalo é compartilhado por todos os k.

    Returns:
        SweepResult indexado por (lo, hi, k); o resumo traz o TSTT do
        conjunto de topo e se ele coincide com o do primeiro intervalo
    """
    network = network or load_experiment_network(config)
    intervals = [tuple(float(v) for v in iv)
                 for iv in (intervals or config.e_intervals)]

    def job(interval):
        cell = config.hybrid(e_source="sampled", e_interval=interval,
                             coefficients="compute")
        if config.mode == "coefficient":
            instance = build_instance(network, cell)
            return {k: run_coefficient_mode(network, replace(cell, k=k),
                                            instance=instance.with_k(k))
                    for k in config.k_list}
        e = resolve_residual_ratios(network, cell)
        settings = replace(cell.ue_settings,
                           gap_tol=max(cell.ue_settings.gap_tol,
                                       cell.direct_gap_tol))
        evaluator = TsttEvaluator(network, e, cell.bpr, settings, cache)
        return {k: run_direct_mode(network, replace(cell, k=k),
                                   evaluator=evaluator)
                for k in config.k_list}

    outcomes = _run_cells(intervals, job, config.n_jobs)

    result = SweepResult()
    rows = []
    reference = {}
    for interval, outcome in zip(intervals, outcomes):
        if isinstance(outcome, dict) and outcome.get('status') == 'failed':
            result.failures[interval] = outcome['error']
            logger.error(f"Intervalo {interval} falhou: {outcome['error']}")
            continue
        for k, report in outcome.items():
            result.reports[(interval[0], interval[1], k)] = report
            top = report.top
            links = top.links if top else None
            reference.setdefault(k, links)
            rows.append({
                'e_lo': interval[0],
                'e_hi': interval[1],
                'k': k,
                'top_links': format_links(links) if links else '',
                'energy': top.energy if top else np.nan,
                'tstt': top.tstt if top and top.tstt is not None else np.nan,
                'stable': links == reference[k],
            })

    result.summary = pd.DataFrame(rows, columns=['e_lo', 'e_hi', 'k',
                                                 'top_links', 'energy',
                                                 'tstt', 'stable'])
    result.verdict = bool(result.summary['stable'].all()) if rows else None

    if out_dir is not None:
        _save_reports(result, out_dir, label=lambda key: "e_" + _cell_label(key))
        result.outputs['summary'] = _write_csv(
            result.summary, Path(out_dir) / "sweep_e_summary.csv"
        )
    return result


def sweep_lambda(config: ExperimentConfig,
                 lambdas: Optional[Iterable[float]] = None,
                 network: Optional[Network] = None,
                 instance: Optional[QuboInstance] = None,
                 out_dir=None) -> SweepResult:
    """
    Resolve a mesma QuboInstance sob cada lambda e cada k.

    Returns:
        SweepResult indexado por (lambda, k); verdict = True quando o
        conjunto de topo de cada k é o mesmo para todos os lambdas
    """
    lambdas = [float(v) for v in (lambdas or config.lambdas)]
    if instance is None:
        network = network or load_experiment_network(config)
        instance = build_instance(network, config.hybrid())

    cells = [(lam, k) for lam in lambdas for k in config.k_list]

    def job(cell):
        lam, k = cell
        return run_coefficient_mode(
            network, config.hybrid(k, lam=lam),
            instance=instance.with_k(k).with_lambda(lam),
        )

    result = _collect(cells, _run_cells(cells, job, config.n_jobs))

    rows = []
    stability = {}
    for lam, k in cells:
        report = result.reports.get((lam, k))
        links = report.top.links if report is not None and report.top \
            else None
        stability.setdefault(k, set()).add(links)
        rows.append({
            'lambda': lam,
            'k': k,
            'top_links': format_links(links) if links else '',
            'energy': report.top.energy if links else np.nan,
        })

    per_k = {k: len(sets) == 1 and None not in sets
             for k, sets in stability.items()}
    result.details['stable_per_k'] = per_k
    result.verdict = bool(per_k) and all(per_k.values()) \
        and not result.failures
    summary = pd.DataFrame(rows, columns=['lambda', 'k', 'top_links',
                                          'energy'])
    summary['stable'] = summary['k'].map(per_k)
    result.summary = summary
    logger.info(
        f"Estabilidade em lambda: {'estável' if result.verdict else 'instável'}"
        f" ({per_k})"
    )

    if out_dir is not None:
        _save_reports(result, out_dir,
                      label=lambda key: "lambda_" + _cell_label(key))
        result.outputs['summary'] = _write_csv(
            summary, Path(out_dir) / "sweep_lambda_summary.csv"
        )
    return result


def _scale_solver(method: str, anneal: AnnealParams,
                  heuristic: HeuristicParams):
    if method == "sqa":
        return lambda instance, seed: run_sqa(instance,
                                              replace(anneal, seed=seed))
    params = replace(heuristic, method=method)
    return lambda instance, seed: run_baseline(instance,
                                               replace(params, seed=seed))


def scalability_run(sizes: Iterable, k_max: int = 10,
                    seeds: Iterable[int] = (0,),
                    anneal: AnnealParams = AnnealParams(),
                    gen_params: Optional[dict] = None,
                    instance_seed: int = 0, n_jobs: int = 1,
                    out_dir=None, methods: Sequence[str] = ("sqa",),
                    heuristic: Optional[HeuristicParams] = None
                    ) -> SweepResult:
    """
    Curvas energia x k e tempo x k em instâncias sintéticas.

    Args:
        sizes: Valores de n ou pares (n, gen_params)
        k_max: Maior k (curva em k = 1..k_max)
        seeds: Sementes por ponto
        anneal: Parâmetros do SQA
        gen_params: Parâmetros padrão do gerador (c_range, beta_sigma,
            beta_density)
        instance_seed: Semente do gerador
        methods: 'sqa' e/ou meta-heurísticas (ga, pso, sa, ts)
        heuristic: Base das meta-heurísticas (method é trocado)

    Returns:
        SweepResult com summary = curvas por método (method, n, k,
        best_energy, best_links, median_seconds), details['monotone'] por
        método e n, details['runtime_cv'] e details['runtime_growth']
        (tempo em k_max / tempo em k = 1) por método e n
    """
    seeds = [int(seed) for seed in seeds]
    methods = list(methods)
    heuristic = heuristic or HeuristicParams()
    solvers = {method: _scale_solver(method, anneal, heuristic)
               for method in methods}
    rows = []
    monotone = {method: {} for method in methods}
    cv = {method: {} for method in methods}
    growth_ratio = {method: {} for method in methods}

    for size in sizes:
        if isinstance(size, (tuple, list)):
            n, params = int(size[0]), dict(size[1] or {})
        else:
            n, params = int(size), {}
        params = {**(gen_params or {}), **params}
        base = synth_instance(n, 1, seed=instance_seed, **params)

        for method, solver in solvers.items():
            energies, times = [], []
            for k in range(1, min(k_max, n) + 1):
                instance = base.with_k(k)
                results = Parallel(n_jobs=n_jobs, prefer="threads")(
                    delayed(solver)(instance, seed) for seed in seeds
                )
                feasible = [r for r in results if r.best_feasible_energy
                            is not None]
                best = min(feasible, key=lambda r: (r.best_feasible_energy,
                                                    r.seed)) \
                    if feasible else None
                energy = best.best_feasible_energy if best else np.nan
                seconds = float(np.median([r.wall_time for r in results]))
                energies.append(energy)
                times.append(seconds)
                rows.append({
                    'method': method,
                    'n': n,
                    'k': k,
                    'best_energy': energy,
                    'best_links': format_links(best.best_feasible_links)
                    if best else '',
                    'median_seconds': seconds,
                })

            monotone[method][n] = bool(np.all(np.diff(energies) < 0))
            mean = float(np.mean(times))
            cv[method][n] = float(np.std(times) / mean) if mean > 0 else 0.0
            growth_ratio[method][n] = times[-1] / times[0] \
                if times[0] > 0 else float('nan')
            logger.info(
                f"Escala {method.upper()} n={n}: energia decrescente em k = "
                f"{monotone[method][n]}, CV do tempo = {cv[method][n]:.1%}, "
                f"tempo k_max/k=1 = {growth_ratio[method][n]:.2f}"
            )

    result = SweepResult(summary=pd.DataFrame(
        rows, columns=['method', 'n', 'k', 'best_energy', 'best_links',
                       'median_seconds']
    ))
    result.details['monotone'] = monotone
    result.details['runtime_cv'] = cv
    result.details['runtime_growth'] = growth_ratio
    result.verdict = all(ok for per_n in monotone.values()
                         for ok in per_n.values()) if rows else None

    if out_dir is not None:
        out_dir = Path(out_dir)
        result.outputs['energy_curve'] = _write_csv(
            result.summary[['method', 'n', 'k', 'best_energy',
                            'best_links']],
            out_dir / "scale_energy.csv",
        )
        result.outputs['runtime_curve'] = _write_csv(
            result.summary[['method', 'n', 'k', 'median_seconds']],
            out_dir / "scale_runtime.csv",
        )
    return result


def growth(n: int, k_max: int, out_dir=None) -> SweepResult:
    """Tabela de C(n, k) e somas acumuladas para k = 0..k_max."""
    table = count_combinations(n, k_max)
    result = SweepResult(summary=table)
    last = table.iloc[-1]
    logger.info(
        f"C({n}, k <= {k_max}): {last['cumulative']:,} combinações no total"
    )
    if out_dir is not None:
        result.outputs['growth'] = _write_csv(table, Path(out_dir) /
                                              "growth.csv")
    return result
