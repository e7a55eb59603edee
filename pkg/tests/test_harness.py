"""
Testes do harness de experimentos (configuração, varreduras, registro)
"""
import json
import math
from pathlib import Path

import pandas as pd
import pytest

from src.harness import (
    RunRecorder,
    _cell_label,
    growth,
    load_config,
    scalability_run,
    sweep_e,
    sweep_k,
    sweep_lambda,
)
from src.models import AnnealParams, ExperimentConfig, HeuristicParams
from src.validation_utils import ConfigValidationError


def _fixture_config(**overrides):
    values = dict(coefficients="fixture", include_linear=False,
                  solver="exact", k_list=(2, 3))
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.mark.unit
class TestLoadConfig:

    def test_defaults(self):
        config = load_config()
        assert config.k_list == (2, 3, 4, 5)
        assert config.anneal.M == 10
        assert config.coefficients == "compute"

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({
            'k_list': [2, 4],
            'anneal': {'M': 6, 'n_iter': 30},
            'coefficients': 'fixture',
        }), encoding="utf-8")

        config = load_config(path, {'anneal': {'seed': 7}, 'mode': None})

        assert config.k_list == (2, 4)
        assert (config.anneal.M, config.anneal.n_iter,
                config.anneal.seed) == (6, 30, 7)
        assert config.mode == "coefficient"

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text(json.dumps({'k_lsit': [2]}), encoding="utf-8")
        with pytest.raises(ConfigValidationError) as exc:
            load_config(path)
        assert 'unknown' in exc.value.errors

    def test_unreadable_json(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigValidationError):
            load_config(path)

    def test_workers_from_env(self, monkeypatch):
        monkeypatch.setenv("QVULN_WORKERS", "3")
        assert load_config().n_jobs == 3
        assert load_config(overrides={'n_jobs': 2}).n_jobs == 2

    def test_json_must_be_an_object(self, tmp_path):
        path = tmp_path / "experiment.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigValidationError):
            load_config(path)

    def test_missing_referenced_file(self, tmp_path):
        with pytest.raises(ConfigValidationError) as exc:
            load_config(overrides={'network': str(tmp_path / "x.csv")})
        assert 'files' in exc.value.errors


@pytest.mark.unit
class TestRunRecorder:

    def test_completed_record(self, out_dir):
        recorder = RunRecorder("growth", {'n': 10}, out_dir)
        output = out_dir / "growth.csv"
        output.write_text("n,k\n", encoding="utf-8")
        with recorder.step("growth"):
            recorder.output("growth", output)
        recorder.deviation("nota de teste")
        path = recorder.finish()

        record = json.loads(Path(path).read_text(encoding="utf-8"))
        assert record['status'] == "completed"
        assert record['outputs'] == {'growth': str(output)}
        assert record['deviations'] == ["nota de teste"]
        assert 'growth' in record['wall_times']
        assert record['version']

    def test_missing_output_fails_run(self, out_dir):
        recorder = RunRecorder("anneal", {}, out_dir)
        recorder.output("result", out_dir / "missing.json")
        record = json.loads(Path(recorder.finish()).read_text(
            encoding="utf-8"))
        assert record['status'] == "failed"
        assert "missing.json" in record['error']


@pytest.mark.unit
class TestSweepK:

    def test_fixture_sweep(self, nd_network, out_dir):
        result = sweep_k(_fixture_config(), network=nd_network,
                         out_dir=out_dir)

        assert set(result.reports) == {2, 3}
        assert result.reports[3].top.links == (9, 16, 19)
        assert result.details['min_energy_decreasing'] is True
        assert list(result.summary.columns) == ['k', 'rank', 'links',
                                                'energy', 'tstt']
        assert len(result.summary) == 10
        assert all(Path(p).exists() for p in result.outputs.values())
        assert (out_dir / "k2" / "report_k2.json").exists()

    def test_failed_cell_is_isolated(self, nd_network):
        result = sweep_k(_fixture_config(k_list=(2, 25)),
                         network=nd_network)
        assert set(result.reports) == {2}
        assert 25 in result.failures
        assert "CoefficientError" in result.failures[25]


@pytest.mark.unit
class TestSweepLambda:

    def test_exact_solver_is_lambda_invariant(self, nd_network, out_dir):
        result = sweep_lambda(_fixture_config(), network=nd_network,
                              out_dir=out_dir)

        assert set(result.reports) == {(lam, k) for lam in
                                       (2000.0, 3500.0, 5000.0, 8000.0)
                                       for k in (2, 3)}
        assert result.verdict is True
        assert result.details['stable_per_k'] == {2: True, 3: True}
        assert result.summary['stable'].all()
        assert (out_dir / "sweep_lambda_summary.csv").exists()

    @pytest.mark.acceptance
    def test_orders_of_magnitude(self, nd_network):
        result = sweep_lambda(_fixture_config(k_list=(2, 3, 4, 5)),
                              lambdas=[1e2, 1e3, 1e4, 1e5],
                              network=nd_network)
        assert result.verdict is True
        assert result.reports[(100.0, 5)].top.links == (7, 9, 15, 16, 19)

    def test_explicit_lambdas(self, nd_qubo):
        result = sweep_lambda(_fixture_config(k_list=(2,)),
                              lambdas=[1000, 90000], instance=nd_qubo)
        assert set(result.reports) == {(1000.0, 2), (90000.0, 2)}
        assert result.reports[(1000.0, 2)].provenance['lambda'] == 1000.0


@pytest.mark.unit
class TestSweepE:

    def test_monotone_resampling_keeps_ranking(self, parallel_network,
                                               out_dir):
        config = _fixture_config(coefficients="compute", k_list=(1,),
                                 e_intervals=((0.1, 0.4), (0.5, 0.8)))
        result = sweep_e(config, network=parallel_network, out_dir=out_dir)

        assert set(result.reports) == {(0.1, 0.4, 1), (0.5, 0.8, 1)}
        assert list(result.summary['e_lo']) == [0.1, 0.5]
        # Mesma semente: a ordem das razões amostradas não muda
        assert result.verdict is True
        assert (out_dir / "sweep_e_summary.csv").exists()
        assert (out_dir / "e_0.1_0.4_1" / "report_k1.json").exists()


@pytest.mark.unit
class TestScaleAndGrowth:

    def test_scalability_run(self, out_dir):
        result = scalability_run([12], k_max=3, seeds=(0,),
                                 anneal=AnnealParams(M=4, n_iter=30),
                                 out_dir=out_dir)

        assert list(result.summary['k']) == [1, 2, 3]
        assert set(result.summary['method']) == {'sqa'}
        assert set(result.details) == {'monotone', 'runtime_cv',
                                       'runtime_growth'}
        assert 12 in result.details['monotone']['sqa']
        assert (out_dir / "scale_energy.csv").exists()
        assert (out_dir / "scale_runtime.csv").exists()

    def test_scalability_with_baseline(self, out_dir):
        heuristic = HeuristicParams(ga_population=30, ga_generations=20)
        result = scalability_run([10, 14], k_max=3, seeds=(0, 1),
                                 anneal=AnnealParams(M=4, n_iter=30),
                                 methods=("sqa", "ga"), heuristic=heuristic,
                                 out_dir=out_dir)

        assert len(result.summary) == 2 * 2 * 3
        assert set(result.summary['method']) == {'sqa', 'ga'}
        # c_s > 0 e interações fracas: mais links, menor energia
        assert result.verdict is True
        for method in ("sqa", "ga"):
            assert set(result.details['monotone'][method]) == {10, 14}
            assert all(result.details['monotone'][method].values())
            assert set(result.details['runtime_growth'][method]) == {10, 14}
        frame = pd.read_csv(out_dir / "scale_runtime.csv")
        assert list(frame.columns) == ['method', 'n', 'k', 'median_seconds']

    def test_per_size_generator_params(self):
        result = scalability_run([(8, {'beta_density': 0.0})], k_max=2,
                                 anneal=AnnealParams(M=2, n_iter=20))
        assert list(result.summary['n']) == [8, 8]

    def test_growth(self, out_dir):
        result = growth(76, 10, out_dir=out_dir)
        assert result.summary['cumulative'].iloc[-1] == sum(
            math.comb(76, k) for k in range(11))
        assert Path(result.outputs['growth']).exists()


@pytest.mark.unit
def test_cell_labels():
    assert _cell_label((0.1, 0.4, 2)) == "0.1_0.4_2"
    assert _cell_label((2000.0, 3)) == "2000_3"
    assert _cell_label(5) == "5"
