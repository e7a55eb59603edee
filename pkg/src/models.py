import json
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.validation_utils import (
    CoefficientError,
    ensure_positive,
    validate_interval,
    validate_probability,
)

COUPLING_MODES = ("binary-literal", "spin")
PAIR_CONVENTIONS = ("ordered", "unordered")
HEURISTIC_METHODS = ("ga", "pso", "sa", "ts")
HYBRID_MODES = ("coefficient", "direct")
E_SOURCES = ("fixture", "sampled")
HYBRID_SOLVERS = ("sqa", "sa", "exact")


@dataclass(frozen=True)
class Link:
    """Modelo para representar um link dirigido da rede"""
    id: int
    from_node: int
    to_node: int
    free_flow_time: float  # horas
    capacity: float  # pcu/h
    length: float = 0.0  # km
    max_speed: float = 0.0  # km/h

    @classmethod
    def from_native_row(cls, row):
        # Tempo de fluxo livre chega em minutos no CSV nativo
        return cls(
            id=int(row['link_id']),
            from_node=int(row['from']),
            to_node=int(row['to']),
            free_flow_time=float(row['fftime_min']) / 60.0,
            capacity=float(row['capacity_pcuh']),
            length=float(row.get('length_km') or 0.0),
            max_speed=float(row.get('speed_kmh') or 0.0),
        )

    def to_native_row(self):
        return {
            'link_id': self.id,
            'from': self.from_node,
            'to': self.to_node,
            'length_km': f"{self.length:.12g}",
            'fftime_min': f"{self.free_flow_time * 60.0:.12g}",
            'speed_kmh': f"{self.max_speed:.12g}",
            'capacity_pcuh': f"{self.capacity:.12g}",
        }


@dataclass(frozen=True)
class OdPair:
    """Modelo para representar um par origem-destino com demanda fixa"""
    origin: int
    destination: int
    demand: float  # pcu/h


@dataclass(frozen=True)
class Network:
    """Modelo para representar a rede viária (imutável após o carregamento)"""
    nodes: Tuple[int, ...]
    links: Tuple[Link, ...]
    od_pairs: Tuple[OdPair, ...] = ()
    name: str = ""

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def link_ids(self) -> Tuple[int, ...]:
        return tuple(link.id for link in self.links)

    @cached_property
    def free_flow_times(self) -> np.ndarray:
        return np.array([link.free_flow_time for link in self.links],
                        dtype=float)

    @cached_property
    def capacities(self) -> np.ndarray:
        return np.array([link.capacity for link in self.links], dtype=float)

    @property
    def total_demand(self) -> float:
        return float(sum(od.demand for od in self.od_pairs))

    def link_index(self, link_id: int) -> int:
        """Posição do link nos vetores de fluxo (ids são 1..n contíguos)."""
        if not 1 <= link_id <= self.n_links:
            raise KeyError(f"Link {link_id} não existe na rede")
        return link_id - 1

    def with_demand(self, demand: float) -> "Network":
        """Cópia com todos os pares OD na mesma demanda."""
        od_pairs = tuple(
            OdPair(od.origin, od.destination, float(demand))
            for od in self.od_pairs
        )
        return replace(self, od_pairs=od_pairs)

    def to_dict(self):
        return {
            'name': self.name,
            'nodes': list(self.nodes),
            'links': [asdict(link) for link in self.links],
            'od_pairs': [asdict(od) for od in self.od_pairs],
        }


@dataclass(frozen=True)
class BprParams:
    """Parâmetros da função BPR"""
    alpha: float = 0.15
    beta_exp: float = 4.0

    def __post_init__(self):
        ensure_positive(self.alpha, 'alpha', strict=False)
        ensure_positive(self.beta_exp, 'beta_exp')


@dataclass(frozen=True)
class UESettings:
    """Critérios de parada do Frank-Wolfe"""
    max_iters: int = 500
    gap_tol: float = 1e-6
    line_search_tol: float = 1e-10

    def __post_init__(self):
        if int(self.max_iters) < 1:
            raise ValueError("max_iters deve ser >= 1")
        ensure_positive(self.gap_tol, 'gap_tol')
        ensure_positive(self.line_search_tol, 'line_search_tol')


@dataclass(eq=False)
class DisruptionScenario:
    """Cenário de interrupção: u indica links afetados, e a razão residual"""
    u: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.int64)
        self.e = np.asarray(self.e, dtype=float)

        if self.u.shape != self.e.shape or self.u.ndim != 1:
            raise ValueError(
                f"u e e devem ter o mesmo tamanho "
                f"({self.u.shape} != {self.e.shape})"
            )
        if not np.isin(self.u, (0, 1)).all():
            raise ValueError("u deve ser binário")
        if ((self.e < 0) | (self.e > 1) | ~np.isfinite(self.e)).any():
            raise ValueError("e deve estar em [0, 1]")

    @property
    def k(self) -> int:
        return int(self.u.sum())

    @property
    def disrupted_links(self) -> Tuple[int, ...]:
        return tuple(int(i) + 1 for i in np.flatnonzero(self.u))

    @classmethod
    def none(cls, n_links: int) -> "DisruptionScenario":
        return cls(np.zeros(n_links, dtype=np.int64), np.ones(n_links))

    @classmethod
    def from_links(cls, e, link_ids) -> "DisruptionScenario":
        e = np.asarray(e, dtype=float)
        u = np.zeros(len(e), dtype=np.int64)
        for link_id in link_ids:
            if not 1 <= link_id <= len(e):
                raise ValueError(f"Link {link_id} fora da rede")
            u[link_id - 1] = 1
        return cls(u, e)


@dataclass(eq=False)
class UESolution:
    """Resultado de uma atribuição de equilíbrio do usuário"""
    flows: np.ndarray
    link_times: np.ndarray  # horas
    tstt: float  # pcu·h
    relative_gap: float
    iterations: int
    converged: bool
    stalled: bool = False  # passo nulo da busca em linha antes da tolerância
    objective_trace: List[float] = field(default_factory=list)
    gap_trace: List[float] = field(default_factory=list)
    origin_flows: Dict[int, np.ndarray] = field(default_factory=dict)

    def to_dict(self):
        return {
            'tstt': self.tstt,
            'relative_gap': self.relative_gap,
            'iterations': self.iterations,
            'converged': self.converged,
            'stalled': self.stalled,
            'flows': self.flows.tolist(),
            'link_times_h': self.link_times.tolist(),
            'objective_trace': list(self.objective_trace),
            'gap_trace': list(self.gap_trace),
        }


@dataclass
class PathAudit:
    """Auditoria das condições de Wardrop por par OD"""
    passed: bool
    worst_violation: float
    paths: Dict[Tuple[int, int], List[Tuple[Tuple[int, ...], float, float]]]
    violations: List[Tuple[Tuple[int, int], Tuple[int, ...], float]] = \
        field(default_factory=list)


@dataclass(eq=False)
class CoefficientProvenance:
    """Proveniência dos coeficientes: TSTTs de base, isolados e conjuntos"""
    baseline_tstt: float
    disrupted_tstt: np.ndarray
    e: np.ndarray
    joint_tstt: Optional[np.ndarray] = None
    valid_mask: Optional[np.ndarray] = None
    settings_hash: str = ""
    seed: Optional[int] = None

    def to_dict(self):
        joint = None
        if self.joint_tstt is not None:
            joint = [[None if np.isnan(v) else float(v) for v in row]
                     for row in self.joint_tstt]
        return {
            'baseline_tstt': self.baseline_tstt,
            'disrupted_tstt': self.disrupted_tstt.tolist(),
            'e': self.e.tolist(),
            'joint_tstt': joint,
            'valid_mask': (self.valid_mask.tolist()
                           if self.valid_mask is not None else None),
            'settings_hash': self.settings_hash,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        joint = data.get('joint_tstt')
        if joint is not None:
            joint = np.array([[np.nan if v is None else v for v in row]
                              for row in joint], dtype=float)
        mask = data.get('valid_mask')
        return cls(
            baseline_tstt=float(data['baseline_tstt']),
            disrupted_tstt=np.asarray(data['disrupted_tstt'], dtype=float),
            e=np.asarray(data['e'], dtype=float),
            joint_tstt=joint,
            valid_mask=(np.asarray(mask, dtype=bool)
                        if mask is not None else None),
            settings_hash=data.get('settings_hash', ''),
            seed=data.get('seed'),
        )


@dataclass(eq=False)
class QuboInstance:
    """Instância QUBO da identificação de conjuntos críticos"""
    c: np.ndarray
    B: np.ndarray
    lam: float
    k: int
    include_linear: bool = True
    pair_convention: str = "ordered"
    mask: Optional[np.ndarray] = None
    provenance: Optional[CoefficientProvenance] = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        n = len(self.c)

        if self.B.shape != (n, n):
            raise CoefficientError(
                f"B deve ser {n}x{n}, recebido {self.B.shape}"
            )
        if not np.isfinite(self.c).all() or not np.isfinite(self.B).all():
            raise CoefficientError("Coeficientes devem ser finitos")
        if not np.allclose(self.B, self.B.T, rtol=0.0, atol=1e-9):
            raise CoefficientError("B deve ser simétrica")
        if np.any(np.diag(self.B) != 0):
            raise CoefficientError("Diagonal de B deve ser zero")
        if not self.lam > 0:
            raise CoefficientError(f"lambda deve ser > 0, recebido {self.lam}")
        if not 1 <= int(self.k) <= n:
            raise CoefficientError(f"k deve estar em [1, {n}], recebido {self.k}")
        if self.pair_convention not in PAIR_CONVENTIONS:
            raise CoefficientError(
                f"Convenção de pares desconhecida: {self.pair_convention}"
            )
        self.k = int(self.k)
        self.lam = float(self.lam)

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def pair_weight(self) -> float:
        """Peso do termo de pares: 1 conta (s,t) e (t,s); 0.5 conta uma vez."""
        return 1.0 if self.pair_convention == "ordered" else 0.5

    @property
    def linear(self) -> np.ndarray:
        return self.c if self.include_linear else np.zeros_like(self.c)

    @property
    def max_abs_coefficient(self) -> float:
        scale = float(np.abs(self.B).max()) * self.pair_weight if self.n else 0.0
        if self.include_linear and self.n:
            scale = max(scale, float(np.abs(self.c).max()))
        return scale

    def with_k(self, k: int) -> "QuboInstance":
        return replace(self, k=k)

    def with_lambda(self, lam: float) -> "QuboInstance":
        return replace(self, lam=lam)

    def with_linear(self, include_linear: bool) -> "QuboInstance":
        return replace(self, include_linear=include_linear)


@dataclass(frozen=True)
class AnnealParams:
    """Parâmetros do annealing quântico simulado"""
    T0: float = 10.0
    gamma0: float = 10.0
    nu: float = 0.95
    M: int = 10
    n_iter: int = 50
    seed: int = 0
    coupling_mode: str = "binary-literal"
    energy_scale: Optional[float] = None  # None = automático
    keep_top: int = 10
    polish: bool = True  # descida por trocas no ranking final

    def __post_init__(self):
        ensure_positive(self.T0, 'T0')
        ensure_positive(self.gamma0, 'gamma0', strict=False)
        if not 0 < self.nu < 1:
            raise ValueError(f"nu deve estar em (0, 1), recebido {self.nu}")
        if int(self.M) < 1:
            raise ValueError("M deve ser >= 1")
        if int(self.n_iter) < 1:
            raise ValueError("n_iter deve ser >= 1")
        if self.coupling_mode not in COUPLING_MODES:
            raise ValueError(f"coupling_mode inválido: {self.coupling_mode}")
        if self.energy_scale is not None:
            ensure_positive(self.energy_scale, 'energy_scale')
        if int(self.keep_top) < 1:
            raise ValueError("keep_top deve ser >= 1")

    @classmethod
    def from_dict(cls, data):
        known = {k: v for k, v in (data or {}).items()
                 if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class HeuristicParams:
    """Parâmetros das meta-heurísticas de referência (GA, PSO, SA, TS)"""
    method: str = "ga"
    seed: int = 0
    # GA
    ga_population: int = 200
    ga_generations: int = 300
    ga_tournament: int = 3
    ga_crossover_p: float = 0.5
    ga_mutation_p: float = 0.5
    # PSO
    pso_particles: int = 200
    pso_iterations: int = 300
    pso_inertia: float = 0.7
    pso_cognitive: float = 1.5
    pso_social: float = 1.5
    pso_vmax: float = 4.0
    # SA
    sa_T0: float = 10.0
    sa_calibrate: bool = True
    sa_cooling: float = 0.95
    sa_stages: int = 50
    sa_moves_per_stage: Optional[int] = None  # None = 10·n
    # TS
    ts_neighbourhood: int = 100
    ts_tenure_min: int = 10
    ts_tenure_max: int = 20
    ts_iterations: int = 300
    stagnation_limit: int = 30

    def __post_init__(self):
        if self.method not in HEURISTIC_METHODS:
            raise ValueError(f"Método desconhecido: {self.method}")
        validate_probability(self.ga_crossover_p, 'ga_crossover_p')
        validate_probability(self.ga_mutation_p, 'ga_mutation_p')
        if not 0 < self.sa_cooling < 1:
            raise ValueError("sa_cooling deve estar em (0, 1)")
        if self.ts_tenure_min > self.ts_tenure_max:
            raise ValueError("ts_tenure_min deve ser <= ts_tenure_max")
        for name in ('ga_population', 'ga_generations', 'ga_tournament',
                     'pso_particles', 'pso_iterations', 'sa_stages',
                     'ts_neighbourhood', 'ts_iterations', 'stagnation_limit'):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} deve ser >= 1")

    @classmethod
    def from_dict(cls, data):
        known = {k: v for k, v in (data or {}).items()
                 if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class AnnealResult:
    """Resultado de uma execução de solver sobre uma QUBO"""
    best_u: np.ndarray
    best_energy: float
    trace: List[float]
    seed: int
    wall_time: float
    method: str = "sqa"
    best_feasible_u: Optional[np.ndarray] = None
    best_feasible_energy: Optional[float] = None
    leaderboard: List[Tuple[Tuple[int, ...], float]] = \
        field(default_factory=list)
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def best_links(self) -> Tuple[int, ...]:
        return tuple(int(i) + 1 for i in np.flatnonzero(self.best_u))

    @property
    def best_feasible_links(self) -> Optional[Tuple[int, ...]]:
        if self.best_feasible_u is None:
            return None
        return tuple(int(i) + 1 for i in np.flatnonzero(self.best_feasible_u))

    def to_dict(self):
        return {
            'method': self.method,
            'params': dict(self.params),
            'seed': self.seed,
            'best_links': list(self.best_links),
            'best_energy': self.best_energy,
            'best_feasible_links': (list(self.best_feasible_links)
                                    if self.best_feasible_links is not None
                                    else None),
            'best_feasible_energy': self.best_feasible_energy,
            'leaderboard': [
                {'links': list(links), 'energy': energy}
                for links, energy in self.leaderboard
            ],
            'trace': list(self.trace),
            'wall_time': self.wall_time,
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)


@dataclass
class OracleResult:
    """Resultado da enumeração exata de todos os conjuntos de tamanho k"""
    k: int
    optimum: Tuple[int, ...]
    energy: float
    ranking: List[Tuple[Tuple[int, ...], float]]
    count: int

    def to_dict(self):
        return {
            'k': self.k,
            'optimum': list(self.optimum),
            'energy': self.energy,
            'count': self.count,
            'ranking': [
                {'links': list(links), 'energy': energy}
                for links, energy in self.ranking
            ],
        }


@dataclass
class ReportEntry:
    """Linha de um relatório de conjuntos críticos"""
    rank: int
    links: Tuple[int, ...]
    energy: float
    tstt: Optional[float] = None


@dataclass
class CriticalSetReport:
    """Relatório top-N de conjuntos críticos para um valor de k"""
    k: int
    mode: str
    entries: List[ReportEntry]
    provenance: Dict = field(default_factory=dict)

    @property
    def top(self) -> Optional[ReportEntry]:
        return self.entries[0] if self.entries else None

    def to_rows(self):
        return [
            {
                'k': self.k,
                'rank': entry.rank,
                'links': format_links(entry.links),
                'energy': entry.energy,
                'tstt': entry.tstt,
            }
            for entry in self.entries
        ]

    def to_dict(self):
        return {
            'k': self.k,
            'mode': self.mode,
            'entries': [
                {
                    'rank': entry.rank,
                    'links': list(entry.links),
                    'energy': entry.energy,
                    'tstt': entry.tstt,
                }
                for entry in self.entries
            ],
            'provenance': self.provenance,
        }


@dataclass
class RunRecord:
    """Registro de uma execução da CLI (run_record.json)"""
    command: str
    config: Dict
    version: str
    started_at: str
    finished_at: Optional[str] = None
    status: str = "running"
    outputs: Dict[str, str] = field(default_factory=dict)
    wall_times: Dict[str, float] = field(default_factory=dict)
    deviations: List[str] = field(default_factory=list)
    error: Optional[str] = None

    def to_json(self, indent=2):
        return json.dumps(asdict(self), indent=indent, default=str)


def format_links(links) -> str:
    """Formata um conjunto de links como '16-19'."""
    return "-".join(str(link) for link in links)


def _coerce(value, cls):
    if isinstance(value, cls):
        return value
    return cls.from_dict(value) if hasattr(cls, 'from_dict') \
        else cls(**(value or {}))


@dataclass(frozen=True)
class HybridConfig:
    """
    Configuração de uma identificação de conjuntos críticos para um k.

    coefficients: 'compute' (resolve UE por link e par), 'fixture'
    (coeficientes tabelados da Nguyen-Dupuis) ou diretório com c.csv e
    beta.csv / coefficients.json.
    """
    mode: str = "coefficient"
    k: int = 2
    anneal: AnnealParams = field(default_factory=AnnealParams)
    ue_settings: UESettings = field(default_factory=UESettings)
    bpr: BprParams = field(default_factory=BprParams)
    e_source: str = "fixture"
    e_interval: Tuple[float, float] = (0.3, 0.7)
    e_seed: int = 0
    coefficients: str = "compute"
    include_linear: bool = True
    lam: Optional[float] = None
    lambda_multiplier: float = 10.0
    solver: str = "sqa"
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    top_n: int = 5
    n_jobs: int = 1
    direct_gap_tol: float = 1e-4

    def __post_init__(self):
        if self.mode not in HYBRID_MODES:
            raise ValueError(f"Modo desconhecido: {self.mode}")
        if self.e_source not in E_SOURCES:
            raise ValueError(f"Fonte de e desconhecida: {self.e_source}")
        if self.solver not in HYBRID_SOLVERS:
            raise ValueError(f"Solver desconhecido: {self.solver}")
        if int(self.k) < 1:
            raise ValueError("k deve ser >= 1")
        if not self.seeds:
            raise ValueError("Lista de sementes vazia")
        if int(self.top_n) < 1:
            raise ValueError("top_n deve ser >= 1")
        if self.lam is not None:
            ensure_positive(self.lam, 'lam')
        ensure_positive(self.direct_gap_tol, 'direct_gap_tol')
        object.__setattr__(self, 'e_interval',
                           validate_interval(self.e_interval, 'e_interval'))
        object.__setattr__(self, 'seeds', tuple(int(s) for s in self.seeds))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ExperimentConfig:
    """Configuração completa de um experimento (arquivo --config)"""
    network: str = "builtin"
    network_format: str = "native-csv"
    od_path: Optional[str] = None
    demand_level: str = "medium"
    mode: str = "coefficient"
    k_list: Tuple[int, ...] = (2, 3, 4, 5)
    e_source: str = "fixture"
    e_interval: Tuple[float, float] = (0.3, 0.7)
    e_intervals: Tuple[Tuple[float, float], ...] = (
        (0.1, 0.4), (0.3, 0.7), (0.5, 0.8)
    )
    e_seed: int = 0
    coefficients: str = "compute"
    include_linear: bool = True
    lam: Optional[float] = None
    lambda_multiplier: float = 10.0
    lambdas: Tuple[float, ...] = (2000.0, 3500.0, 5000.0, 8000.0)
    solver: str = "sqa"
    anneal: AnnealParams = field(default_factory=AnnealParams)
    baseline: HeuristicParams = field(default_factory=HeuristicParams)
    ue_settings: UESettings = field(default_factory=UESettings)
    seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    top_n: int = 5
    n_jobs: int = 1
    out_dir: str = "runs"
    scale_sizes: Tuple[int, ...] = (76, 914)
    k_max: int = 10
    synth_c_range: Tuple[float, float] = (100.0, 1000.0)
    synth_beta_sigma: float = 50.0
    synth_beta_density: float = 0.05

    def __post_init__(self):
        if self.mode not in HYBRID_MODES:
            raise ValueError(f"Modo desconhecido: {self.mode}")
        if not self.seeds:
            raise ValueError("Lista de sementes vazia")
        if not self.k_list or min(self.k_list) < 1:
            raise ValueError("k_list deve ter valores >= 1")
        for lam in self.lambdas:
            ensure_positive(lam, 'lambda')
        for name in ('anneal', 'baseline', 'ue_settings'):
            cls = self.__dataclass_fields__[name].default_factory
            object.__setattr__(self, name, _coerce(getattr(self, name), cls))
        object.__setattr__(self, 'k_list', tuple(int(k) for k in self.k_list))
        object.__setattr__(self, 'seeds', tuple(int(s) for s in self.seeds))
        object.__setattr__(self, 'lambdas',
                           tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, 'e_interval',
                           validate_interval(self.e_interval, 'e_interval'))
        object.__setattr__(self, 'e_intervals', tuple(
            validate_interval(iv, 'e_intervals') for iv in self.e_intervals
        ))
        object.__setattr__(self, 'scale_sizes',
                           tuple(int(n) for n in self.scale_sizes))
        object.__setattr__(self, 'synth_c_range',
                           tuple(float(v) for v in self.synth_c_range))

    @classmethod
    def from_dict(cls, data):
        known = {k: v for k, v in (data or {}).items()
                 if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self):
        return asdict(self)

    def hybrid(self, k: Optional[int] = None, **overrides) -> HybridConfig:
        """HybridConfig de uma célula do experimento (um k)."""
        values = dict(
            mode=self.mode,
            k=self.k_list[0] if k is None else k,
            anneal=self.anneal,
            ue_settings=self.ue_settings,
            e_source=self.e_source,
            e_interval=self.e_interval,
            e_seed=self.e_seed,
            coefficients=self.coefficients,
            include_linear=self.include_linear,
            lam=self.lam,
            lambda_multiplier=self.lambda_multiplier,
            solver=self.solver,
            seeds=self.seeds,
            top_n=self.top_n,
            n_jobs=self.n_jobs,
        )
        values.update(overrides)
        return HybridConfig(**values)


@dataclass
class SweepResult:
    """Resultado de uma varredura: relatórios por célula, falhas e resumo"""
    reports: Dict[Any, CriticalSetReport] = field(default_factory=dict)
    failures: Dict[Any, str] = field(default_factory=dict)
    summary: Any = None  # pandas.DataFrame
    verdict: Optional[bool] = None
    details: Dict[str, Any] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
