"""
Coeficientes QUBO da vulnerabilidade de links.

    c_s     = TSTT(s interrompido) - TSTT(base)
    beta_st = TSTT(s,t) - (TSTT(s) + TSTT(t) - TSTT(base))
    E(u)    = -sum c_s u_s - sum_{s,t} beta_st u_s u_t + lambda (sum u - k)^2
"""

import csv
import hashlib
import json
import logging
from itertools import combinations
from pathlib import Path
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.assignment import DEFAULT_BPR, DEFAULT_SETTINGS, solve_ue
from src.models import (
    BprParams,
    CoefficientProvenance,
    DisruptionScenario,
    Network,
    QuboInstance,
    UESettings,
)
from src.network import DATA_DIR
from src.validation_utils import (
    CoefficientError,
    CoefficientSchemaError,
    InfeasibleAssignmentError,
    validate_interval,
)

logger = logging.getLogger(__name__)

C_HEADER = ['link_id', 'e', 'baseline_tstt', 'disrupted_tstt', 'c']
BETA_HEADER = ['s', 't', 'tstt_s', 'tstt_t', 'tstt_st', 'beta']

LAMBDA_MULTIPLIER_RANGE = (10.0, 100.0)


def settings_hash(network: Network, bpr: BprParams,
                  settings: UESettings) -> str:
    payload = json.dumps({
        'network': network.name,
        'links': network.n_links,
        'demand': network.total_demand,
        'alpha': bpr.alpha,
        'beta_exp': bpr.beta_exp,
        'gap_tol': settings.gap_tol,
        'max_iters': settings.max_iters,
    }, sort_keys=True)
    return hashlib.md5(payload.encode()).hexdigest()[:16]


def sample_residual_ratios(n: int, interval=(0.3, 0.7), seed: int = 0
                           ) -> np.ndarray:
    """Razões residuais e_s ~ U[lo, hi], reprodutíveis pela semente."""
    lo, hi = validate_interval(interval, "e_interval")
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=n)


def _disrupted_tstt(network, e, links, bpr, settings, warm_start):
    scenario = DisruptionScenario.from_links(e, links)
    try:
        solution = solve_ue(network, scenario, bpr, settings,
                            initial_flows=warm_start)
    except InfeasibleAssignmentError as err:
        if len(links) == 1:
            raise InfeasibleAssignmentError(err.od_pair, link=links[0])
        raise InfeasibleAssignmentError(err.od_pair, pair=tuple(links))
    return solution.tstt


def compute_c(network: Network, e, bpr: BprParams = DEFAULT_BPR,
              settings: UESettings = DEFAULT_SETTINGS, n_jobs: int = 1,
              seed: Optional[int] = None
              ) -> Tuple[np.ndarray, CoefficientProvenance]:
    """
    Calcula o impacto isolado c_s de cada link (n + 1 resoluções de UE).

    Returns:
        Tupla (c, proveniência)

    Raises:
        InfeasibleAssignmentError: Interrupção desconecta um par OD
    """
    e = np.asarray(e, dtype=float)
    if len(e) != network.n_links:
        raise CoefficientError(
            f"e tem {len(e)} valores para {network.n_links} links"
        )

    baseline = solve_ue(network, None, bpr, settings)
    logger.info(f"TSTT de base: {baseline.tstt:.4f} pcu·h")

    disrupted = Parallel(n_jobs=n_jobs)(
        delayed(_disrupted_tstt)(network, e, (link_id,), bpr, settings, None)
        for link_id in network.link_ids
    )
    disrupted = np.asarray(disrupted, dtype=float)
    c = disrupted - baseline.tstt

    provenance = CoefficientProvenance(
        baseline_tstt=baseline.tstt,
        disrupted_tstt=disrupted,
        e=e.copy(),
        settings_hash=settings_hash(network, bpr, settings),
        seed=seed,
    )
    logger.info(f"✅ {len(c)} coeficientes c_s calculados")
    return c, provenance


def compute_beta(network: Network, e, provenance: CoefficientProvenance,
                 bpr: BprParams = DEFAULT_BPR,
                 settings: UESettings = DEFAULT_SETTINGS,
                 pairs: Optional[Iterable[Tuple[int, int]]] = None,
                 n_jobs: int = 1) -> Tuple[np.ndarray, CoefficientProvenance]:
    """
    Calcula as interações beta_st entre pares de links.

    Pares sem rota viável ficam fora de B (máscara False), nunca imputados.

    Args:
        pairs: Pares (s, t) de ids a calcular (padrão: todos s < t)

    Returns:
        Tupla (B simétrica com diagonal zero, proveniência atualizada)
    """
    e = np.asarray(e, dtype=float)
    n = network.n_links
    if pairs is None:
        pairs = list(combinations(network.link_ids, 2))
    else:
        pairs = [tuple(sorted(p)) for p in pairs]

    def joint(pair):
        try:
            return _disrupted_tstt(network, e, pair, bpr, settings, None)
        except InfeasibleAssignmentError as err:
            logger.warning(f"⚠️  Par {pair} inviável: {err}")
            return None

    values = Parallel(n_jobs=n_jobs)(delayed(joint)(pair) for pair in pairs)

    B = np.zeros((n, n))
    joint_tstt = np.full((n, n), np.nan)
    mask = np.zeros((n, n), dtype=bool)
    base = provenance.baseline_tstt
    single = provenance.disrupted_tstt

    for (s, t), value in zip(pairs, values):
        if value is None:
            continue
        i, j = s - 1, t - 1
        beta = value - (single[i] + single[j] - base)
        B[i, j] = B[j, i] = beta
        joint_tstt[i, j] = joint_tstt[j, i] = value
        mask[i, j] = mask[j, i] = True

    provenance.joint_tstt = joint_tstt
    provenance.valid_mask = mask
    logger.info(f"✅ {int(mask.sum() // 2)} interações beta_st calculadas")
    return B, provenance


def compute_instance(network: Network, e, k: int = 1,
                     bpr: BprParams = DEFAULT_BPR,
                     settings: UESettings = DEFAULT_SETTINGS,
                     n_jobs: int = 1, lam: Optional[float] = None,
                     multiplier: float = 10.0,
                     include_linear: bool = True,
                     seed: Optional[int] = None) -> QuboInstance:
    """Atalho: c, B e lambda padrão em uma QuboInstance."""
    c, provenance = compute_c(network, e, bpr, settings, n_jobs, seed=seed)
    B, provenance = compute_beta(network, e, provenance, bpr, settings,
                                 n_jobs=n_jobs)
    if lam is None:
        lam = default_lambda(c, B, multiplier)
    return QuboInstance(c=c, B=B, lam=lam, k=k,
                        include_linear=include_linear,
                        mask=provenance.valid_mask, provenance=provenance)


def classify_interaction(beta: float, tol: Optional[float] = None,
                         baseline: Optional[float] = None) -> str:
    """
    Classifica uma interação: 'synergistic', 'substitutive' ou 'additive'.

    A tolerância padrão é 1e-6 relativa ao TSTT de base (ou absoluta, se
    o TSTT de base não for informado).
    """
    if tol is None:
        tol = 1e-6 * baseline if baseline else 1e-6
    if beta > tol:
        return "synergistic"
    if beta < -tol:
        return "substitutive"
    return "additive"


def interaction_summary(B, baseline: Optional[float] = None,
                        mask=None) -> dict:
    """Contagem das classes de interação sobre os pares s < t."""
    B = np.asarray(B, dtype=float)
    summary = {"synergistic": 0, "substitutive": 0, "additive": 0}
    for i, j in zip(*np.triu_indices(len(B), 1)):
        if mask is not None and not mask[i, j]:
            continue
        summary[classify_interaction(B[i, j], baseline=baseline)] += 1
    return summary


def default_lambda(c, B, multiplier: float = 10.0) -> float:
    """
    Peso da penalidade: multiplicador x maior |coeficiente|.

    Raises:
        CoefficientError: Multiplicador fora de [10, 100] ou coeficientes
            todos nulos
    """
    lo, hi = LAMBDA_MULTIPLIER_RANGE
    if not lo <= multiplier <= hi:
        raise CoefficientError(
            f"Multiplicador de lambda deve estar em [{lo:g}, {hi:g}], "
            f"recebido {multiplier}"
        )
    c = np.asarray(c, dtype=float)
    B = np.asarray(B, dtype=float)
    scale = max(float(np.abs(c).max(initial=0.0)),
                float(np.abs(B).max(initial=0.0)))
    if scale == 0.0:
        raise CoefficientError(
            "Todos os coeficientes são nulos: lambda sem escala"
        )
    return multiplier * scale


def qubo_energy(instance: QuboInstance, u) -> float:
    """Energia E(u) da instância (penalidade de cardinalidade incluída)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (instance.n,):
        raise ValueError(f"u deve ter {instance.n} posições")
    linear = float(instance.linear @ u)
    pairs = instance.pair_weight * float(u @ instance.B @ u)
    penalty = instance.lam * (u.sum() - instance.k) ** 2
    return -linear - pairs + penalty


def qubo_matrices(instance: QuboInstance):
    """
    Forma expandida: E(u) = const + h·u + u^T W u.

    Returns:
        Tupla (h, W, const) com W simétrica e diagonal nula
    """
    n = instance.n
    W = instance.lam * (np.ones((n, n)) - np.eye(n)) \
        - instance.pair_weight * instance.B
    h = -instance.linear + instance.lam * (1 - 2 * instance.k)
    const = instance.lam * instance.k ** 2
    return h, W, float(const)


def synth_instance(n: int, k: int, seed: int = 0,
                   c_range=(100.0, 1000.0), beta_sigma: float = 50.0,
                   beta_density: float = 0.05, lam: Optional[float] = None,
                   multiplier: float = 10.0) -> QuboInstance:
    """
    Instância sintética para estudos de escala.

    c_s ~ U(c_range); beta_st ~ N(0, beta_sigma) com densidade beta_density.
    """
    lo, hi = c_range
    if lo > hi:
        raise ValueError(f"c_range inválido: {c_range}")
    if not 0 <= beta_density <= 1:
        raise ValueError("beta_density deve estar em [0, 1]")
    if beta_sigma < 0:
        raise ValueError("beta_sigma deve ser >= 0")
    if not 1 <= k <= n:
        raise ValueError(f"k deve estar em [1, {n}]")

    rng = np.random.default_rng(seed)
    c = rng.uniform(lo, hi, size=n)
    rows, cols = np.triu_indices(n, 1)
    present = rng.random(len(rows)) < beta_density
    values = rng.normal(0.0, beta_sigma, size=len(rows)) * present
    B = np.zeros((n, n))
    B[rows, cols] = values
    B = B + B.T

    if lam is None:
        try:
            lam = default_lambda(c, B, multiplier)
        except CoefficientError:
            lam = 1.0
    return QuboInstance(c=c, B=B, lam=lam, k=k)


def _read_rows(path: Path, header):
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        missing = [col for col in header if col not in (reader.fieldnames or [])]
        if missing:
            raise CoefficientSchemaError(
                f"{path}: colunas ausentes {', '.join(missing)}"
            )
        for row in reader:
            yield reader.line_num, row


def load_coefficients(c_path, beta_path, k: int = 1,
                      lam: Optional[float] = None, multiplier: float = 10.0,
                      include_linear: bool = True) -> QuboInstance:
    """
    Carrega c e beta de CSVs no esquema de exportação.

    Raises:
        CoefficientSchemaError: Cabeçalho, tipos ou pares inválidos
    """
    c_path, beta_path = Path(c_path), Path(beta_path)
    records = {}
    baseline = None
    for line, row in _read_rows(c_path, C_HEADER):
        try:
            link_id = int(row['link_id'])
            records[link_id] = (float(row['e']), float(row['disrupted_tstt']),
                                float(row['c']))
            baseline = float(row['baseline_tstt'])
        except (TypeError, ValueError):
            raise CoefficientSchemaError(f"{c_path}:{line}: valor inválido")

    n = len(records)
    if sorted(records) != list(range(1, n + 1)):
        raise CoefficientSchemaError(
            f"{c_path}: ids de link devem ser contíguos 1..n"
        )
    e = np.array([records[i][0] for i in range(1, n + 1)])
    disrupted = np.array([records[i][1] for i in range(1, n + 1)])
    c = np.array([records[i][2] for i in range(1, n + 1)])

    B = np.zeros((n, n))
    joint = np.full((n, n), np.nan)
    mask = np.zeros((n, n), dtype=bool)
    for line, row in _read_rows(beta_path, BETA_HEADER):
        try:
            s, t = int(row['s']), int(row['t'])
            beta = float(row['beta'])
            tstt_st = float(row['tstt_st'])
        except (TypeError, ValueError):
            raise CoefficientSchemaError(f"{beta_path}:{line}: valor inválido")
        if s == t or not (1 <= s <= n and 1 <= t <= n):
            raise CoefficientSchemaError(
                f"{beta_path}:{line}: par inválido ({s}, {t})"
            )
        if mask[s - 1, t - 1]:
            raise CoefficientSchemaError(
                f"{beta_path}:{line}: par duplicado ({s}, {t})"
            )
        B[s - 1, t - 1] = B[t - 1, s - 1] = beta
        joint[s - 1, t - 1] = joint[t - 1, s - 1] = tstt_st
        mask[s - 1, t - 1] = mask[t - 1, s - 1] = True

    provenance = CoefficientProvenance(
        baseline_tstt=baseline if baseline is not None else 0.0,
        disrupted_tstt=disrupted,
        e=e,
        joint_tstt=joint,
        valid_mask=mask,
        settings_hash=f"file:{c_path.name}",
    )
    if lam is None:
        lam = default_lambda(c, B, multiplier)

    logger.info(
        f"Coeficientes carregados: {n} links, {int(mask.sum() // 2)} pares"
    )
    return QuboInstance(c=c, B=B, lam=lam, k=k,
                        include_linear=include_linear, mask=mask,
                        provenance=provenance)


def fixture_instance(k: int = 2, lam: Optional[float] = None,
                     multiplier: float = 10.0,
                     include_linear: bool = False) -> QuboInstance:
    """Coeficientes tabelados da rede Nguyen-Dupuis (demanda média)."""
    return load_coefficients(DATA_DIR / "nd_c.csv", DATA_DIR / "nd_beta.csv",
                             k=k, lam=lam, multiplier=multiplier,
                             include_linear=include_linear)


def fixture_residual_ratios() -> np.ndarray:
    """Razões e_s fixadas da Nguyen-Dupuis (coluna e de nd_c.csv)."""
    return fixture_instance(k=2).provenance.e.copy()


def save_coefficients(instance: QuboInstance, out_dir) -> dict:
    """
    Grava c.csv e beta.csv (6 algarismos significativos).

    Returns:
        Dict nome -> caminho
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    provenance = instance.provenance
    if provenance is None:
        raise CoefficientError("Instância sem proveniência para exportar")

    n = instance.n
    c_frame = pd.DataFrame({
        'link_id': np.arange(1, n + 1),
        'e': provenance.e,
        'baseline_tstt': provenance.baseline_tstt,
        'disrupted_tstt': provenance.disrupted_tstt,
        'c': instance.c,
    })
    mask = instance.mask if instance.mask is not None else ~np.eye(n, dtype=bool)
    rows = []
    for i, j in zip(*np.triu_indices(n, 1)):
        if not mask[i, j]:
            continue
        joint = provenance.joint_tstt[i, j] \
            if provenance.joint_tstt is not None else np.nan
        rows.append({
            's': i + 1, 't': j + 1,
            'tstt_s': provenance.disrupted_tstt[i],
            'tstt_t': provenance.disrupted_tstt[j],
            'tstt_st': joint,
            'beta': instance.B[i, j],
        })
    beta_frame = pd.DataFrame(rows, columns=BETA_HEADER)

    c_path = out_dir / "c.csv"
    beta_path = out_dir / "beta.csv"
    c_frame.to_csv(c_path, index=False, float_format="%.6g")
    beta_frame.to_csv(beta_path, index=False, float_format="%.6g")
    json_path = out_dir / "coefficients.json"
    json_path.write_text(json.dumps({
        'n': n,
        'k': instance.k,
        'lam': instance.lam,
        'include_linear': instance.include_linear,
        'c': instance.c.tolist(),
        'B': instance.B.tolist(),
        'provenance': provenance.to_dict(),
    }, indent=2), encoding='utf-8')

    return {'c': str(c_path), 'beta': str(beta_path),
            'json': str(json_path)}


def load_coefficients_json(path, k: Optional[int] = None,
                           lam: Optional[float] = None,
                           include_linear: Optional[bool] = None
                           ) -> QuboInstance:
    """
    Carrega coefficients.json (precisão completa, sem perdas).

    Os argumentos não nulos sobrescrevem k, lambda e include_linear gravados.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
        c = np.asarray(data['c'], dtype=float)
        B = np.asarray(data['B'], dtype=float)
    except (OSError, ValueError, KeyError) as e:
        raise CoefficientSchemaError(f"{path}: JSON de coeficientes inválido "
                                     f"({e})")

    provenance = None
    if data.get('provenance'):
        provenance = CoefficientProvenance.from_dict(data['provenance'])
    return QuboInstance(
        c=c, B=B,
        lam=lam if lam is not None else data['lam'],
        k=k if k is not None else data['k'],
        include_linear=(include_linear if include_linear is not None
                        else data.get('include_linear', True)),
        mask=provenance.valid_mask if provenance else None,
        provenance=provenance,
    )
