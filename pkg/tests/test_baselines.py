"""
Testes das meta-heurísticas de referência e da comparação de tempos
"""
import math

import numpy as np
import pytest

from src import baselines
from src.baselines import (
    adapt_tenure,
    calibrate_temperature,
    optimality_gap,
    repair,
    run_baseline,
    run_ga,
    run_pso,
    run_sa_baseline,
    run_ts,
    runtime_comparison,
    tabu_tenure,
    tenure_bounds,
)
from src.models import AnnealParams, HeuristicParams
from src.oracle import enumerate_exact
from src.qubo import fixture_instance, qubo_energy

SMALL = HeuristicParams(ga_population=60, ga_generations=40,
                        pso_particles=40, pso_iterations=40, sa_stages=10,
                        ts_iterations=80)


@pytest.mark.unit
class TestRepair:

    def test_drops_weakest_links(self, small_qubo):
        # c = [10, 4, 7, 1, 3]: mantém os dois maiores entre os ativos
        u = repair([1, 1, 1, 1, 0], small_qubo)
        assert u.tolist() == [1, 0, 1, 0, 0]

    def test_adds_strongest_links(self, small_qubo):
        u = repair([0, 0, 0, 1, 0], small_qubo)
        assert u.tolist() == [1, 0, 0, 1, 0]

    def test_feasible_untouched(self, small_qubo):
        assert repair([0, 1, 0, 0, 1], small_qubo).tolist() == \
            [0, 1, 0, 0, 1]


@pytest.mark.unit
class TestSolvers:

    @pytest.mark.parametrize("solver,method", [
        (run_ga, "ga"),
        (run_pso, "pso"),
        (run_sa_baseline, "sa"),
        (run_ts, "ts"),
    ])
    def test_returns_feasible_set(self, nd_qubo, solver, method):
        params = HeuristicParams(**{**SMALL.to_dict(), 'method': method})
        result = solver(nd_qubo, params, keep_top=5)
        oracle = enumerate_exact(nd_qubo, 2, keep_top=1)

        assert result.method == method
        assert int(result.best_u.sum()) == 2
        assert result.best_energy == pytest.approx(
            qubo_energy(nd_qubo, result.best_u))
        assert result.best_energy >= oracle.energy - 1e-6
        assert len(result.leaderboard) <= 5
        energies = [energy for _, energy in result.leaderboard]
        assert energies == sorted(energies)

    def test_ga_finds_optimum(self, nd_qubo):
        result = run_ga(nd_qubo, HeuristicParams(method="ga"))
        assert result.best_feasible_links == (16, 19)

    def test_deterministic(self, nd_qubo):
        params = HeuristicParams(**{**SMALL.to_dict(), 'method': 'ts',
                                    'seed': 4})
        a = run_ts(nd_qubo, params)
        b = run_ts(nd_qubo, params)
        assert a.trace == b.trace
        assert a.leaderboard == b.leaderboard

    def test_sa_without_calibration(self, nd_qubo):
        params = HeuristicParams(**{**SMALL.to_dict(), 'method': 'sa',
                                    'sa_calibrate': False, 'sa_T0': 10.0})
        result = run_sa_baseline(nd_qubo, params)
        assert int(result.best_u.sum()) == 2
        assert len(result.trace) == params.sa_stages

    def test_dispatch(self, small_qubo):
        result = run_baseline(small_qubo, HeuristicParams(
            **{**SMALL.to_dict(), 'method': 'pso'}))
        assert result.method == "pso"
        assert result.best_feasible_links == (1, 2)


@pytest.mark.unit
class TestHelpers:

    @pytest.mark.parametrize("n,expected", [(19, 9), (914, 20), (4, 2),
                                            (150, 12)])
    def test_tabu_tenure(self, n, expected):
        assert tabu_tenure(n, HeuristicParams()) == expected

    def test_tenure_bounds(self):
        assert tenure_bounds(19, HeuristicParams()) == (9, 9)
        assert tenure_bounds(150, HeuristicParams()) == (10, 20)

    def test_tenure_shrinks_on_improvement(self):
        assert adapt_tenure(12, True, 0, (10, 20)) == 11
        assert adapt_tenure(10, True, 0, (10, 20)) == 10

    def test_tenure_grows_while_stuck(self):
        assert adapt_tenure(12, False, 12, (10, 20)) == 13
        assert adapt_tenure(12, False, 5, (10, 20)) == 12
        assert adapt_tenure(20, False, 40, (10, 20)) == 20

    def test_tenure_changes_during_search(self, mocker):
        spy = mocker.spy(baselines, 'adapt_tenure')
        instance = fixture_instance(k=3)
        params = HeuristicParams(method="ts", ts_tenure_min=2,
                                 ts_tenure_max=8, ts_iterations=120)
        run_ts(instance, params)

        seen = {call.args[0] for call in spy.call_args_list}
        assert spy.call_count == 120
        assert len(seen) > 1

    def test_calibrated_temperature(self, nd_qubo):
        T0 = calibrate_temperature(nd_qubo, np.random.default_rng(0))
        assert T0 > 0
        assert math.isfinite(T0)

    def test_optimality_gap(self):
        assert optimality_gap(-90.0, -100.0) == pytest.approx(0.1)
        assert optimality_gap(-100.0, -100.0) == 0.0
        assert optimality_gap(0.0, 0.0) == 0.0
        assert optimality_gap(1.0, 0.0) == math.inf

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            HeuristicParams(method="aco")
        with pytest.raises(ValueError):
            HeuristicParams(ts_tenure_min=30, ts_tenure_max=20)


@pytest.mark.integration
def test_runtime_comparison(nd_qubo):
    instances = [nd_qubo, nd_qubo.with_k(3)]
    table = runtime_comparison(
        instances, methods=("sqa", "ga", "ts"), seeds=(0, 1),
        anneal_params=AnnealParams(M=4, n_iter=30), heuristic_params=SMALL,
    )

    assert list(table.columns) == ['method', 'k', 'median_seconds',
                                   'best_energy', 'gap']
    assert len(table) == 6
    assert set(table['k']) == {2, 3}
    assert (table['gap'] >= -1e-12).all()
    assert (table['median_seconds'] >= 0).all()


@pytest.mark.integration
def test_runtime_comparison_without_oracle():
    instance = fixture_instance(k=2)
    table = runtime_comparison([instance], methods=("ga", "ts"),
                               heuristic_params=SMALL, guard=10)
    # Sem oráculo, a referência é a melhor energia entre os métodos
    assert table['gap'].min() == pytest.approx(0.0)


@pytest.mark.slow
@pytest.mark.acceptance
@pytest.mark.integration
@pytest.mark.parametrize("method", ["ga", "pso", "sa", "ts"])
def test_mean_gap_on_nguyen_dupuis(method):
    gaps = []
    for k in range(2, 6):
        instance = fixture_instance(k=k)
        reference = enumerate_exact(instance, k, keep_top=1).energy
        for seed in range(10):
            result = run_baseline(instance,
                                  HeuristicParams(method=method, seed=seed))
            assert int(result.best_u.sum()) == k
            gaps.append(optimality_gap(result.best_feasible_energy,
                                       reference))

    assert min(gaps) >= -1e-9
    assert np.mean(gaps) <= 0.03
