"""
Testes da atribuição de equilíbrio do usuário (Frank-Wolfe + BPR)
"""
import json
import math

import numpy as np
import pytest

from src.assignment import (
    all_or_nothing,
    beckmann_objective,
    effective_capacity,
    link_travel_time,
    node_balance_residual,
    save_solution,
    solve_ue,
    tstt,
    wardrop_audit,
)
from src.models import (
    BprParams,
    DisruptionScenario,
    Link,
    Network,
    OdPair,
    UESettings,
)
from src.qubo import fixture_residual_ratios
from src.validation_utils import BprDomainError, InfeasibleAssignmentError

from tests.conftest import ND_BASELINE_TSTT, ND_JOINT_16_19_TSTT


@pytest.mark.unit
class TestLinkTravelTime:

    def setup_method(self):
        self.link = Link(id=1, from_node=1, to_node=2, free_flow_time=0.2,
                         capacity=100.0)

    def test_free_flow(self):
        assert link_travel_time(0.0, self.link) == pytest.approx(0.2)

    def test_at_capacity(self):
        assert link_travel_time(100.0, self.link) == pytest.approx(0.23)

    def test_degraded_capacity(self):
        # Capacidade efetiva 50: (100/50)^4 = 16
        value = link_travel_time(100.0, self.link, u_s=1, e_s=0.5)
        assert value == pytest.approx(0.2 * (1 + 0.15 * 16))

    def test_custom_bpr(self):
        bpr = BprParams(alpha=1.0, beta_exp=1.0)
        assert link_travel_time(50.0, self.link, bpr) == pytest.approx(0.3)

    def test_negative_flow(self):
        with pytest.raises(BprDomainError):
            link_travel_time(-1.0, self.link)

    def test_zero_residual_capacity(self):
        with pytest.raises(BprDomainError):
            link_travel_time(10.0, self.link, u_s=1, e_s=0.0)


@pytest.mark.unit
class TestObjectives:

    def test_tstt_of_given_flows(self, parallel_network):
        # 50 em cada link: t = 1 + 0.15 * 0.5^4
        value = tstt([50.0, 50.0], parallel_network)
        assert value == pytest.approx(100 * (1 + 0.15 * 0.0625))

    def test_beckmann_integral(self, parallel_network):
        # Integral de 1 + 0.15 (x/100)^4 de 0 a 100 = 100 + 0.15 * 100 / 5
        value = beckmann_objective([100.0, 0.0], parallel_network)
        assert value == pytest.approx(103.0)

    def test_effective_capacity(self, parallel_network):
        scenario = DisruptionScenario([1, 0], [0.25, 0.5])
        capacity = effective_capacity(parallel_network, scenario)
        assert capacity.tolist() == [25.0, 100.0]

    def test_scenario_size_mismatch(self, parallel_network):
        scenario = DisruptionScenario([1, 0, 0], [0.5, 0.5, 0.5])
        with pytest.raises(ValueError):
            effective_capacity(parallel_network, scenario)


@pytest.mark.unit
class TestSolveUE:

    def test_symmetric_split(self, parallel_network):
        solution = solve_ue(parallel_network)

        assert solution.converged
        assert solution.flows == pytest.approx([50.0, 50.0], abs=1e-3)
        assert solution.tstt == pytest.approx(100.9375, rel=1e-6)
        assert solution.relative_gap <= 1e-6

    def test_unused_slow_link(self, uneven_network):
        # t1(100) = 1.15 h < t2(0) = 2 h: tudo no link 1
        solution = solve_ue(uneven_network)
        assert solution.flows == pytest.approx([100.0, 0.0], abs=1e-6)
        assert solution.tstt == pytest.approx(115.0)

    def test_disruption_shifts_flow(self, parallel_network):
        base = solve_ue(parallel_network)
        scenario = DisruptionScenario.from_links([0.5, 1.0], [1])
        disrupted = solve_ue(parallel_network, scenario)

        assert disrupted.flows[0] < disrupted.flows[1]
        assert disrupted.tstt > base.tstt

    def test_warm_start_from_solution(self, parallel_network):
        base = solve_ue(parallel_network)
        scenario = DisruptionScenario.from_links([0.5, 1.0], [1])
        cold = solve_ue(parallel_network, scenario)
        warm = solve_ue(parallel_network, scenario, initial_flows=base)
        assert warm.tstt == pytest.approx(cold.tstt, rel=1e-5)

    def test_beckmann_trace_non_increasing(self, nd_network):
        solution = solve_ue(nd_network,
                            settings=UESettings(max_iters=100, gap_tol=1e-9))
        trace = np.array(solution.objective_trace)
        assert np.all(np.diff(trace) <= 1e-9 * trace[0])

    def test_flow_conservation(self, nd_network):
        solution = solve_ue(nd_network)
        assert node_balance_residual(nd_network, solution.flows) < 1e-6
        assert (solution.flows >= 0).all()

    def test_unreachable_destination(self):
        network = Network(
            nodes=(1, 2, 3),
            links=(Link(1, 1, 2, 0.1, 100.0), Link(2, 3, 2, 0.1, 100.0)),
            od_pairs=(OdPair(1, 3, 10.0),),
        )
        with pytest.raises(InfeasibleAssignmentError) as exc:
            solve_ue(network)
        assert exc.value.od_pair == (1, 3)

    def test_non_convergence_is_reported(self, nd_network):
        solution = solve_ue(nd_network,
                            settings=UESettings(max_iters=2, gap_tol=1e-12))
        assert not solution.converged
        assert solution.iterations == 2
        assert len(solution.gap_trace) == 2

    def test_zero_step_is_reported_as_stall(self, nd_network, mocker):
        mocker.patch('src.assignment._line_search', return_value=0.0)
        solution = solve_ue(nd_network,
                            settings=UESettings(max_iters=50, gap_tol=1e-9))

        assert not solution.converged
        assert solution.stalled
        assert solution.iterations == 1
        assert solution.relative_gap > 1e-9
        assert solution.to_dict()['stalled'] is True

    def test_no_demand(self):
        network = Network(nodes=(1, 2),
                          links=(Link(1, 1, 2, 0.5, 10.0),))
        solution = solve_ue(network)
        assert solution.tstt == 0.0
        assert solution.converged


@pytest.mark.unit
class TestWardropAudit:

    def test_parallel_paths_balanced(self, parallel_network):
        solution = solve_ue(parallel_network)
        audit = wardrop_audit(parallel_network, solution)

        assert audit.passed
        paths = audit.paths[(1, 2)]
        assert sorted(links for links, _, _ in paths) == [(1,), (2,)]
        assert sum(flow for _, flow, _ in paths) == pytest.approx(100.0)

    def test_detects_unbalanced_flows(self, parallel_network):
        solution = solve_ue(parallel_network)
        # Desequilíbrio forçado: 90/10 entre os links
        solution.flows = np.array([90.0, 10.0])
        solution.origin_flows = {1: np.array([90.0, 10.0])}
        audit = wardrop_audit(parallel_network, solution)

        assert not audit.passed
        assert audit.violations[0][1] == (1,)
        assert audit.worst_violation > 0

    @pytest.mark.integration
    def test_nguyen_dupuis_equilibrium(self, nd_network):
        solution = solve_ue(nd_network)
        audit = wardrop_audit(nd_network, solution)
        assert audit.passed


@pytest.mark.unit
def test_save_solution(parallel_network, out_dir):
    solution = solve_ue(parallel_network)
    paths = save_solution(parallel_network, solution, out_dir)

    record = json.loads(open(paths['ue_run'], encoding="utf-8").read())
    assert record['converged'] is True
    assert record['disrupted_links'] == []
    lines = open(paths['ue_flows'], encoding="utf-8").read().splitlines()
    assert lines[0] == "link_id,flow_pcuh,time_min"
    assert len(lines) == 3


@pytest.mark.acceptance
class TestNguyenDupuisReference:

    def test_baseline_tstt(self, nd_network):
        solution = solve_ue(nd_network)
        assert solution.converged
        assert math.isclose(solution.tstt, ND_BASELINE_TSTT, rel_tol=0.01)

    def test_joint_disruption_16_19(self, nd_network):
        scenario = DisruptionScenario.from_links(fixture_residual_ratios(),
                                                 (16, 19))
        solution = solve_ue(nd_network, scenario)
        assert math.isclose(solution.tstt, ND_JOINT_16_19_TSTT, rel_tol=0.01)


def _diamond(ids_via_2, ids_via_3):
    """Dois caminhos de mesmo custo 1 -> 4, por 2 e por 3"""
    (a, b), (c, d) = ids_via_2, ids_via_3
    links = [
        Link(a, 1, 2, 1.0, 1000.0),
        Link(b, 2, 4, 1.0, 1000.0),
        Link(c, 1, 3, 1.0, 1000.0),
        Link(d, 3, 4, 1.0, 1000.0),
    ]
    return Network(nodes=(1, 2, 3, 4),
                   links=tuple(sorted(links, key=lambda link: link.id)),
                   od_pairs=(OdPair(1, 4, 10.0),))


@pytest.mark.unit
class TestAllOrNothing:

    @pytest.mark.parametrize("via_2,via_3,loaded", [
        ((1, 2), (3, 4), {1, 2}),
        ((3, 4), (1, 2), {1, 2}),
        ((1, 4), (2, 3), {2, 3}),
        ((2, 3), (1, 4), {2, 3}),
    ])
    def test_ties_go_to_lowest_link_id(self, via_2, via_3, loaded):
        network = _diamond(via_2, via_3)
        flows = all_or_nothing(network, network.free_flow_times)

        used = {network.links[i].id for i in np.flatnonzero(flows)}
        assert used == loaded
        assert flows.sum() == pytest.approx(20.0)

    def test_cheaper_path_wins_over_lower_id(self):
        network = _diamond((1, 2), (3, 4))
        times = np.array([1.0, 1.5, 1.0, 1.0])
        flows = all_or_nothing(network, times)
        assert {network.links[i].id for i in np.flatnonzero(flows)} == {3, 4}


def _random_network(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9))
    arcs = set()
    for i in range(1, n + 1):
        j = i % n + 1
        arcs.update({(i, j), (j, i)})
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i != j and rng.random() < 0.25:
                arcs.add((i, j))

    links = tuple(
        Link(index, a, b, float(rng.uniform(0.05, 0.5)),
             float(rng.uniform(50.0, 300.0)))
        for index, (a, b) in enumerate(sorted(arcs), start=1)
    )
    od_pairs = []
    for _ in range(int(rng.integers(1, 5))):
        origin, dest = (int(v) for v in rng.choice(n, size=2,
                                                  replace=False) + 1)
        if all((od.origin, od.destination) != (origin, dest)
               for od in od_pairs):
            od_pairs.append(OdPair(origin, dest,
                                   float(rng.uniform(50.0, 400.0))))
    return Network(nodes=tuple(range(1, n + 1)), links=links,
                   od_pairs=tuple(od_pairs), name=f"random-{seed}")


@pytest.mark.integration
@pytest.mark.parametrize("seed", range(50))
def test_random_networks_conserve_flow_and_converge(seed):
    network = _random_network(seed)
    settings = UESettings(max_iters=5000, gap_tol=1e-3)
    solution = solve_ue(network, settings=settings)

    assert solution.converged
    assert solution.relative_gap <= settings.gap_tol
    assert (solution.flows >= 0).all()
    assert node_balance_residual(network, solution.flows) < \
        1e-6 * network.total_demand
    trace = np.array(solution.objective_trace)
    assert np.all(np.diff(trace) <= 1e-9 * trace[0])
