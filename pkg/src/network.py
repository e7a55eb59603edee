"""
Carregamento, validação e exportação de redes viárias.
Suporta o CSV nativo (links + OD) e o formato TNTP (net + trips).
"""

import logging
import os
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Tuple

import networkx as nx
import pandas as pd
import requests

from src.models import Link, Network, OdPair
from src.validation_utils import NetworkParseError, NetworkValidationError

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

NATIVE_LINK_HEADER = ['link_id', 'from', 'to', 'length_km', 'fftime_min',
                      'speed_kmh', 'capacity_pcuh']
NATIVE_OD_HEADER = ['origin', 'dest', 'demand_pcuh']

# Cenários de demanda da rede Nguyen-Dupuis (pcu/h por par OD)
DEMAND_LEVELS = {'low': 500.0, 'medium': 1000.0, 'high': 1500.0}

TNTP_BASE_URL = (
    "https://raw.githubusercontent.com/bstabler/TransportationNetworks/master"
)
_TNTP_META = re.compile(r"^<([^>]+)>\s*(.*)$")
_TNTP_ORIGIN = re.compile(r"^Origin\s+(\d+)", re.IGNORECASE)
_TNTP_TRIP = re.compile(r"(\d+)\s*:\s*([-+0-9.eE]+)\s*;?")


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    """Resultado da validação de uma rede"""
    checks: List[CheckResult] = field(default_factory=list)
    unreachable_od: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def first_failure(self) -> Optional[CheckResult]:
        return next((c for c in self.checks if not c.passed), None)

    def to_dict(self):
        return {
            'passed': self.passed,
            'checks': [
                {'name': c.name, 'passed': c.passed, 'detail': c.detail}
                for c in self.checks
            ],
            'unreachable_od': [list(pair) for pair in self.unreachable_od],
        }


def load_network(path, format="native-csv", od_path=None, name=None,
                 demand_level=None, validate_on_load=True) -> Network:
    """
    Carrega uma rede do disco.

    Args:
        path: Arquivo de links (CSV nativo) ou *_net.tntp
        format: 'native-csv' ou 'tntp'
        od_path: Arquivo de demanda (CSV nativo ou *_trips.tntp)
        name: Nome da rede (padrão: nome do arquivo)
        demand_level: 'low' | 'medium' | 'high' | número (sobrescreve OD)
        validate_on_load: Se deve rejeitar redes inválidas

    Returns:
        Network validada

    Raises:
        NetworkParseError: Arquivo malformado (com número da linha)
        NetworkValidationError: Invariante violado
    """
    path = Path(path)
    if not path.exists():
        raise NetworkParseError("arquivo não encontrado", path=str(path))

    if format == "native-csv":
        links = _read_native_links(path)
        if od_path is None:
            candidate = path.with_name(path.name.replace("links", "od"))
            if candidate != path and candidate.exists():
                od_path = candidate
        od_pairs = _read_native_od(Path(od_path)) if od_path else ()
    elif format == "tntp":
        links = _read_tntp_links(path)
        od_pairs = load_tntp_trips(od_path) if od_path else ()
    else:
        raise NetworkParseError(f"formato desconhecido: {format}")

    nodes = set()
    for link in links:
        nodes.update((link.from_node, link.to_node))

    network = Network(
        nodes=tuple(sorted(nodes)),
        links=tuple(sorted(links, key=lambda link: link.id)),
        od_pairs=tuple(od_pairs),
        name=name or path.stem,
    )

    if demand_level is not None:
        network = network.with_demand(resolve_demand(demand_level))

    if validate_on_load:
        report = validate(network)
        failure = report.first_failure
        if failure is not None:
            raise NetworkValidationError(failure.name, failure.detail)

    logger.info(
        f"Rede '{network.name}' carregada: {len(network.nodes)} nós, "
        f"{network.n_links} links, {len(network.od_pairs)} pares OD"
    )
    return network


def builtin_nguyen_dupuis(demand_level="medium") -> Network:
    """Rede Nguyen-Dupuis embutida (19 links, 4 pares OD)."""
    return load_network(
        DATA_DIR / "nguyen_dupuis_links.csv",
        od_path=DATA_DIR / "nguyen_dupuis_od.csv",
        name="nguyen-dupuis",
        demand_level=demand_level,
    )


def resolve_demand(level) -> float:
    if isinstance(level, str):
        if level in DEMAND_LEVELS:
            return DEMAND_LEVELS[level]
        try:
            level = float(level)
        except ValueError:
            raise NetworkValidationError(
                "demand level", f"nível de demanda desconhecido: {level}"
            )
    if not level > 0:
        raise NetworkValidationError(
            "demand level", f"demanda deve ser > 0, recebido {level}"
        )
    return float(level)


def _read_csv_rows(path: Path, header: List[str]):
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False,
                            skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame()
    except pd.errors.ParserError as e:
        raise NetworkParseError(f"CSV malformado ({e})", path=str(path))

    missing = [col for col in header if col not in frame.columns]
    if missing:
        raise NetworkParseError(
            f"colunas ausentes: {', '.join(missing)}", line=1,
            path=str(path)
        )
    # Linha 1 é o cabeçalho; linhas em branco entram como NaN
    for index, row in frame.fillna('').iterrows():
        values = row.to_dict()
        if not any(str(value).strip() for value in values.values()):
            continue
        yield int(index) + 2, values


def _read_native_links(path: Path) -> List[Link]:
    links = []
    for line, row in _read_csv_rows(path, NATIVE_LINK_HEADER):
        try:
            links.append(Link.from_native_row(row))
        except (TypeError, ValueError) as e:
            raise NetworkParseError(f"registro de link inválido ({e})",
                                    line=line, path=str(path))
    return links


def _read_native_od(path: Path) -> Tuple[OdPair, ...]:
    pairs = []
    for line, row in _read_csv_rows(path, NATIVE_OD_HEADER):
        try:
            pairs.append(OdPair(int(row['origin']), int(row['dest']),
                                float(row['demand_pcuh'])))
        except (TypeError, ValueError) as e:
            raise NetworkParseError(f"registro OD inválido ({e})",
                                    line=line, path=str(path))
    return tuple(pairs)


def _read_tntp_links(path: Path) -> List[Link]:
    """Lê um *_net.tntp: metadados <...>, depois registros terminados em ';'."""
    links = []
    in_body = False
    with open(path, encoding='utf-8') as f:
        for line_no, raw in enumerate(f, start=1):
            text = raw.strip()
            if not text:
                continue
            meta = _TNTP_META.match(text)
            if meta:
                if meta.group(1).upper() == "END OF METADATA":
                    in_body = True
                continue
            if text.startswith('~'):
                in_body = True
                continue
            if not in_body:
                continue

            fields = text.rstrip(';').split()
            if len(fields) < 5:
                raise NetworkParseError(
                    f"registro TNTP com {len(fields)} campos", line=line_no,
                    path=str(path)
                )
            try:
                # init, term, capacity, length, fftime, b, power, speed, ...
                speed = float(fields[7]) if len(fields) > 7 else 0.0
                links.append(Link(
                    id=len(links) + 1,
                    from_node=int(fields[0]),
                    to_node=int(fields[1]),
                    capacity=float(fields[2]),
                    length=float(fields[3]),
                    free_flow_time=float(fields[4]) / 60.0,
                    max_speed=speed,
                ))
            except ValueError as e:
                raise NetworkParseError(f"campo numérico inválido ({e})",
                                        line=line_no, path=str(path))
    return links


def load_tntp_trips(path) -> Tuple[OdPair, ...]:
    """
    Lê a matriz OD de um *_trips.tntp.

    Pares com demanda nula e viagens intrazonais são descartados.
    """
    path = Path(path)
    pairs = []
    origin = None
    with open(path, encoding='utf-8') as f:
        for line_no, raw in enumerate(f, start=1):
            text = raw.strip()
            if not text or text.startswith('~') or _TNTP_META.match(text):
                continue
            header = _TNTP_ORIGIN.match(text)
            if header:
                origin = int(header.group(1))
                continue
            if origin is None:
                raise NetworkParseError("demanda antes de 'Origin'",
                                        line=line_no, path=str(path))
            for dest, value in _TNTP_TRIP.findall(text):
                demand = float(value)
                if demand > 0 and int(dest) != origin:
                    pairs.append(OdPair(origin, int(dest), demand))
    return tuple(pairs)


def fetch_tntp(name, dest_dir, base_url=None, session=None, timeout=30):
    """
    Baixa os arquivos net/trips de uma rede do repositório TNTP.

    Args:
        name: Nome da rede (ex: 'SiouxFalls')
        dest_dir: Diretório de destino
        base_url: URL base (padrão: QVULN_TNTP_BASE_URL ou GitHub)
        session: requests.Session opcional

    Returns:
        Tupla (caminho_net, caminho_trips)
    """
    base_url = (base_url or os.getenv('QVULN_TNTP_BASE_URL')
                or TNTP_BASE_URL).rstrip('/')
    http = session or requests
    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)

    paths = []
    for suffix in ('net', 'trips'):
        filename = f"{name}_{suffix}.tntp"
        url = f"{base_url}/{name}/{filename}"
        logger.info(f"⬇️  Baixando {url}")
        response = http.get(url, timeout=timeout)
        response.raise_for_status()
        target = dest_dir / filename
        target.write_text(response.text, encoding='utf-8')
        paths.append(target)

    return paths[0], paths[1]


def save_network(network: Network, links_path, od_path=None):
    """Exporta a rede no CSV nativo (tempo de fluxo livre em minutos)."""
    links_path = Path(links_path)
    links_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([link.to_native_row() for link in network.links],
                 columns=NATIVE_LINK_HEADER).to_csv(links_path, index=False)

    if od_path is not None:
        pd.DataFrame(
            [(od.origin, od.destination, f"{od.demand:.12g}")
             for od in network.od_pairs],
            columns=NATIVE_OD_HEADER,
        ).to_csv(od_path, index=False)


@lru_cache(maxsize=32)
def network_graph(network: Network) -> nx.MultiDiGraph:
    """Grafo dirigido (arestas paralelas permitidas) indexado pelo id do link."""
    graph = nx.MultiDiGraph()
    graph.add_nodes_from(network.nodes)
    for index, link in enumerate(network.links):
        graph.add_edge(link.from_node, link.to_node, key=link.id,
                       index=index)
    return graph


def validate(network: Network) -> ValidationReport:
    """
    Executa os checks estruturais da rede.

    Returns:
        ValidationReport com um CheckResult por check e os pares OD
        inalcançáveis (se houver)
    """
    report = ValidationReport()
    links = network.links

    report.checks.append(CheckResult(
        "non-empty", bool(links), "" if links else "rede sem links"
    ))

    ids = [link.id for link in links]
    contiguous = ids == list(range(1, len(ids) + 1))
    report.checks.append(CheckResult(
        "link ids", contiguous,
        "" if contiguous else "ids de link devem ser únicos e contíguos 1..n"
    ))

    bad_capacity = [link.id for link in links if not link.capacity > 0]
    report.checks.append(CheckResult(
        "capacity", not bad_capacity,
        f"capacidade não positiva nos links {bad_capacity}"
        if bad_capacity else ""
    ))

    bad_time = [link.id for link in links if not link.free_flow_time > 0]
    report.checks.append(CheckResult(
        "free-flow time", not bad_time,
        f"tempo de fluxo livre não positivo nos links {bad_time}"
        if bad_time else ""
    ))

    loops = [link.id for link in links if link.from_node == link.to_node]
    report.checks.append(CheckResult(
        "self-loop", not loops,
        f"laços nos links {loops}" if loops else ""
    ))

    node_set = set(network.nodes)
    unknown = [(od.origin, od.destination) for od in network.od_pairs
               if od.origin not in node_set or od.destination not in node_set]
    bad_demand = [(od.origin, od.destination) for od in network.od_pairs
                  if not od.demand > 0]
    report.checks.append(CheckResult(
        "od nodes", not unknown,
        f"pares OD com nós inexistentes: {unknown}" if unknown else ""
    ))
    report.checks.append(CheckResult(
        "od demand", not bad_demand,
        f"demanda não positiva: {bad_demand}" if bad_demand else ""
    ))

    if not unknown:
        graph = network_graph(network)
        reachable = {}
        for od in network.od_pairs:
            if od.origin not in reachable:
                reachable[od.origin] = nx.descendants(graph, od.origin)
            if od.destination not in reachable[od.origin]:
                report.unreachable_od.append((od.origin, od.destination))
    report.checks.append(CheckResult(
        "od reachability", not report.unreachable_od,
        f"pares OD sem rota: {report.unreachable_od}"
        if report.unreachable_od else ""
    ))

    return report
