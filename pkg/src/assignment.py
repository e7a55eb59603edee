"""
Atribuição de tráfego por equilíbrio do usuário (Frank-Wolfe).

Custo dos links pela função BPR com capacidade degradada:
    T(x) = t0 · (1 + alpha · (x / C_eff)^beta),  C_eff = C · (1 - u + e·u)
"""

import json
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from scipy.optimize import root_scalar

from src.models import (
    BprParams,
    DisruptionScenario,
    Link,
    Network,
    PathAudit,
    UESettings,
    UESolution,
)
from src.network import network_graph
from src.validation_utils import BprDomainError, InfeasibleAssignmentError

logger = logging.getLogger(__name__)

DEFAULT_BPR = BprParams()
DEFAULT_SETTINGS = UESettings()


def link_travel_time(x, link: Link, bpr: BprParams = DEFAULT_BPR,
                     u_s=0, e_s=1.0) -> float:
    """
    Tempo de viagem (horas) de um link com fluxo x.

    Raises:
        BprDomainError: Se x < 0 ou a capacidade efetiva for nula
    """
    if x < 0:
        raise BprDomainError(f"Fluxo negativo no link {link.id}: {x}")
    capacity = link.capacity * (1 - u_s + e_s * u_s)
    if capacity <= 0:
        raise BprDomainError(
            f"Capacidade efetiva nula no link {link.id} (e={e_s})"
        )
    return link.free_flow_time * (
        1.0 + bpr.alpha * (x / capacity) ** bpr.beta_exp
    )


def effective_capacity(network: Network,
                       scenario: Optional[DisruptionScenario] = None
                       ) -> np.ndarray:
    capacities = network.capacities
    if scenario is None:
        return capacities.copy()

    if len(scenario.u) != network.n_links:
        raise ValueError(
            f"Cenário com {len(scenario.u)} links para rede com "
            f"{network.n_links}"
        )
    effective = capacities * (1 - scenario.u + scenario.e * scenario.u)
    if (effective <= 0).any():
        zero = [int(i) + 1 for i in np.flatnonzero(effective <= 0)]
        raise BprDomainError(f"Capacidade efetiva nula nos links {zero}")
    return effective


def _times(x, t0, capacity, bpr):
    return t0 * (1.0 + bpr.alpha * (x / capacity) ** bpr.beta_exp)


def _integrated_times(x, t0, capacity, bpr):
    # Integral de 0 a x da função BPR
    p = bpr.beta_exp
    return t0 * (x + bpr.alpha * capacity * (x / capacity) ** (p + 1) / (p + 1))


def beckmann_objective(flows, network: Network,
                       scenario: Optional[DisruptionScenario] = None,
                       bpr: BprParams = DEFAULT_BPR) -> float:
    """Objetivo de Beckmann (soma das integrais de custo)."""
    flows = np.asarray(flows, dtype=float)
    capacity = effective_capacity(network, scenario)
    return float(_integrated_times(flows, network.free_flow_times,
                                   capacity, bpr).sum())


def tstt(flows, network: Network,
         scenario: Optional[DisruptionScenario] = None,
         bpr: BprParams = DEFAULT_BPR) -> float:
    """Tempo total de viagem do sistema, em pcu·h."""
    flows = np.asarray(flows, dtype=float)
    capacity = effective_capacity(network, scenario)
    return float(flows @ _times(flows, network.free_flow_times, capacity, bpr))


class _AllOrNothing:
    """Carregamento tudo-ou-nada por caminhos mínimos (Dijkstra)."""

    def __init__(self, network: Network):
        self.network = network
        self.graph = network_graph(network)
        self.by_origin: Dict[int, list] = {}
        for od in network.od_pairs:
            self.by_origin.setdefault(od.origin, []).append(od)
        self.by_id = sorted(range(network.n_links),
                            key=lambda i: network.links[i].id)

    def check_reachability(self, link=None, pair=None):
        for origin, pairs in self.by_origin.items():
            reachable = nx.descendants(self.graph, origin)
            for od in pairs:
                if od.destination not in reachable:
                    raise InfeasibleAssignmentError(
                        (od.origin, od.destination), link=link, pair=pair
                    )

    def _predecessors(self, distances, times) -> Dict[int, int]:
        # Entre os arcos que realizam a distância mínima vence o menor id
        links = self.network.links
        pred = {}
        for index in self.by_id:
            a, b = links[index].from_node, links[index].to_node
            if b in pred or a not in distances or b not in distances:
                continue
            reach = distances[a] + times[index]
            if reach <= distances[b] + 1e-12 * max(1.0, distances[b]):
                pred[b] = index
        return pred

    def load(self, times) -> Tuple[np.ndarray, Dict[int, np.ndarray], float]:
        """
        Returns:
            (fluxos agregados, fluxos por origem, custo dos caminhos mínimos)
        """
        def weight(u, v, keydict):
            return min(times[attr['index']] for attr in keydict.values())

        links = self.network.links
        n = self.network.n_links
        total = np.zeros(n)
        per_origin = {}
        shortest_cost = 0.0

        for origin, pairs in self.by_origin.items():
            distances = nx.single_source_dijkstra_path_length(
                self.graph, origin, weight=weight
            )
            pred = self._predecessors(distances, times)
            loads = np.zeros(n)
            for od in pairs:
                if od.destination not in distances:
                    raise InfeasibleAssignmentError(
                        (od.origin, od.destination)
                    )
                node = od.destination
                while node != origin:
                    index = pred[node]
                    loads[index] += od.demand
                    node = links[index].from_node
                shortest_cost += od.demand * distances[od.destination]
            per_origin[origin] = loads
            total += loads

        return total, per_origin, shortest_cost


def all_or_nothing(network: Network, times) -> np.ndarray:
    """
    Fluxos tudo-ou-nada para os tempos dados.

    Empates entre caminhos de mesmo custo são decididos, nó a nó, pelo
    arco de menor id de link.
    """
    flows, _, _ = _AllOrNothing(network).load(np.asarray(times, dtype=float))
    return flows


def _line_search(x, direction, t0, capacity, bpr, tol) -> float:
    """Passo exato: raiz da derivada direcional de Beckmann em [0, 1]."""
    def derivative(step):
        return float(direction @ _times(x + step * direction, t0, capacity,
                                        bpr))

    if derivative(0.0) >= 0:
        return 0.0
    if derivative(1.0) <= 0:
        return 1.0
    result = root_scalar(derivative, bracket=(0.0, 1.0), method='bisect',
                         xtol=tol)
    return float(result.root)


def solve_ue(network: Network,
             scenario: Optional[DisruptionScenario] = None,
             bpr: BprParams = DEFAULT_BPR,
             settings: UESettings = DEFAULT_SETTINGS,
             initial_flows=None) -> UESolution:
    """
    Resolve o equilíbrio do usuário pelo algoritmo de Frank-Wolfe.

    Args:
        network: Rede validada
        scenario: Cenário de interrupção (None = rede intacta)
        bpr: Parâmetros BPR
        settings: Critérios de parada (gap relativo, iterações)
        initial_flows: UESolution ou vetor de fluxos para warm start
            (padrão: tudo-ou-nada em fluxo livre)

    Returns:
        UESolution com fluxos, TSTT e histórico de convergência

    Raises:
        BprDomainError: Capacidade efetiva nula
        InfeasibleAssignmentError: Par OD sem rota
    """
    capacity = effective_capacity(network, scenario)
    t0 = network.free_flow_times
    aon = _AllOrNothing(network)
    link = pair = None
    if scenario is not None and scenario.k == 1:
        link = scenario.disrupted_links[0]
    elif scenario is not None and scenario.k == 2:
        pair = scenario.disrupted_links
    aon.check_reachability(link=link, pair=pair)

    if not network.od_pairs:
        zeros = np.zeros(network.n_links)
        return UESolution(zeros, t0.copy(), 0.0, 0.0, 0, True)

    if isinstance(initial_flows, UESolution):
        x = initial_flows.flows.copy()
        origin_flows = {o: f.copy()
                        for o, f in initial_flows.origin_flows.items()}
    elif initial_flows is not None:
        x = np.asarray(initial_flows, dtype=float).copy()
        _, origin_flows, _ = aon.load(t0)
        # Vetor agregado sem fluxos por origem: aproximação proporcional
        origin_flows = _rescale_origin_flows(origin_flows, x)
    else:
        x, origin_flows, _ = aon.load(t0)

    objective_trace = []
    gap_trace = []
    gap = np.inf
    converged = False
    stalled = False
    iterations = 0

    for iterations in range(1, settings.max_iters + 1):
        times = _times(x, t0, capacity, bpr)
        y, y_origin, shortest_cost = aon.load(times)
        total_cost = float(x @ times)
        gap = max(0.0, (total_cost - shortest_cost) / total_cost) \
            if total_cost > 0 else 0.0

        objective_trace.append(float(
            _integrated_times(x, t0, capacity, bpr).sum()
        ))
        gap_trace.append(gap)

        if gap <= settings.gap_tol:
            converged = True
            break

        direction = y - x
        step = _line_search(x, direction, t0, capacity, bpr,
                            settings.line_search_tol)
        if step == 0.0:
            stalled = True
            break

        x = np.maximum(x + step * direction, 0.0)
        for origin in origin_flows:
            origin_flows[origin] = np.maximum(
                origin_flows[origin]
                + step * (y_origin[origin] - origin_flows[origin]), 0.0
            )

    if stalled:
        logger.warning(
            f"⚠️  Frank-Wolfe estagnou na iteração {iterations}: passo nulo "
            f"com gap {gap:.3e} acima da tolerância"
        )
    elif not converged:
        logger.warning(
            f"⚠️  Frank-Wolfe não convergiu em {settings.max_iters} "
            f"iterações (gap {gap:.3e})"
        )

    times = _times(x, t0, capacity, bpr)
    solution = UESolution(
        flows=x,
        link_times=times,
        tstt=float(x @ times),
        relative_gap=float(gap),
        iterations=iterations,
        converged=converged,
        stalled=stalled,
        objective_trace=objective_trace,
        gap_trace=gap_trace,
        origin_flows=origin_flows,
    )
    logger.debug(
        f"UE resolvido: TSTT={solution.tstt:.4f} gap={gap:.2e} "
        f"iterações={iterations}"
    )
    return solution


def _rescale_origin_flows(origin_flows, target):
    total = sum(origin_flows.values())
    ratio = np.divide(target, total, out=np.zeros_like(target),
                      where=total > 0)
    return {origin: flows * ratio for origin, flows in origin_flows.items()}


def node_balance_residual(network: Network, flows) -> float:
    """Maior violação de conservação de fluxo entre os nós (pcu/h)."""
    flows = np.asarray(flows, dtype=float)
    balance = {node: 0.0 for node in network.nodes}
    for index, link in enumerate(network.links):
        balance[link.from_node] += flows[index]
        balance[link.to_node] -= flows[index]
    for od in network.od_pairs:
        balance[od.origin] -= od.demand
        balance[od.destination] += od.demand
    return max((abs(v) for v in balance.values()), default=0.0)


def wardrop_audit(network: Network, solution: UESolution,
                  scenario: Optional[DisruptionScenario] = None,
                  bpr: BprParams = DEFAULT_BPR,
                  epsilon: Optional[float] = None,
                  rel_epsilon: float = 0.01,
                  min_flow_share: float = 1e-3) -> PathAudit:
    """
    Audita as condições de Wardrop sobre caminhos reconstruídos.

    Os caminhos são extraídos dos fluxos por origem por extração repetida
    do caminho mínimo (aos custos de equilíbrio) entre links com fluxo
    remanescente.

    Args:
        epsilon: Tolerância absoluta em horas (sobrepõe rel_epsilon)
        rel_epsilon: Tolerância relativa ao custo mínimo do par OD
        min_flow_share: Caminhos com fluxo abaixo dessa fração da demanda
            não são auditados

    Returns:
        PathAudit
    """
    capacity = effective_capacity(network, scenario)
    times = _times(solution.flows, network.free_flow_times, capacity, bpr)
    graph = network_graph(network)

    def weight(u, v, keydict):
        return min(times[attr['index']] for attr in keydict.values())

    audit = PathAudit(passed=True, worst_violation=0.0, paths={})
    by_origin = {}
    for od in network.od_pairs:
        by_origin.setdefault(od.origin, []).append(od)

    for origin, pairs in by_origin.items():
        remaining = solution.origin_flows.get(origin)
        if remaining is None:
            raise ValueError(f"Solução sem fluxos para a origem {origin}")
        remaining = remaining.copy()
        distances = nx.single_source_dijkstra_path_length(graph, origin,
                                                          weight=weight)

        for od in pairs:
            min_cost = distances[od.destination]
            tol = epsilon if epsilon is not None else rel_epsilon * min_cost
            audit.paths[(od.origin, od.destination)] = _extract_paths(
                network, graph, times, remaining, od
            )
            for links, flow, cost in audit.paths[(od.origin, od.destination)]:
                if flow < min_flow_share * od.demand:
                    continue
                excess = cost - min_cost
                if excess > tol:
                    audit.passed = False
                    audit.violations.append(
                        ((od.origin, od.destination), links, excess)
                    )
                audit.worst_violation = max(audit.worst_violation, excess)

    return audit


def _extract_paths(network, graph, times, remaining, od, max_paths=1000):
    paths = []
    demand_left = od.demand
    tiny = 1e-9 * max(od.demand, 1.0)

    for _ in range(max_paths):
        if demand_left <= tiny:
            break

        def weight(u, v, keydict):
            usable = [times[a['index']] for a in keydict.values()
                      if remaining[a['index']] > tiny]
            return min(usable) if usable else None

        try:
            cost, nodes = nx.single_source_dijkstra(
                graph, od.origin, od.destination, weight=weight
            )
        except nx.NetworkXNoPath:
            break

        indices = []
        for a, b in zip(nodes[:-1], nodes[1:]):
            candidates = [attr for attr in graph[a][b].values()
                          if remaining[attr['index']] > tiny]
            edge = min(candidates,
                       key=lambda attr: (times[attr['index']], attr['index']))
            indices.append(edge['index'])

        flow = min(demand_left, min(remaining[i] for i in indices))
        for i in indices:
            remaining[i] -= flow
        demand_left -= flow
        links = tuple(network.links[i].id for i in indices)
        paths.append((links, float(flow), float(cost)))

    return paths


def solution_frame(network: Network, solution: UESolution) -> pd.DataFrame:
    return pd.DataFrame({
        'link_id': network.link_ids,
        'flow_pcuh': solution.flows,
        'time_min': solution.link_times * 60.0,
    })


def save_solution(network: Network, solution: UESolution, out_dir,
                  settings: UESettings = DEFAULT_SETTINGS,
                  scenario: Optional[DisruptionScenario] = None) -> Dict:
    """
    Grava ue_flows.csv e ue_run.json.

    Returns:
        Dict nome -> caminho dos arquivos gerados
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flows_path = out_dir / "ue_flows.csv"
    run_path = out_dir / "ue_run.json"

    solution_frame(network, solution).to_csv(flows_path, index=False,
                                             float_format="%.6g")
    record = solution.to_dict()
    record['settings'] = {
        'max_iters': settings.max_iters,
        'gap_tol': settings.gap_tol,
    }
    record['disrupted_links'] = (list(scenario.disrupted_links)
                                 if scenario is not None else [])
    run_path.write_text(json.dumps(record, indent=2), encoding='utf-8')

    return {'ue_flows': str(flows_path), 'ue_run': str(run_path)}
