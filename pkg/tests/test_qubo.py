"""
Testes dos coeficientes QUBO (c, beta, lambda) e da energia
"""
import json
from itertools import combinations

import numpy as np
import pytest
from scipy.stats import spearmanr

from src.assignment import solve_ue
from src.models import QuboInstance
from src.network import builtin_nguyen_dupuis
from src.qubo import (
    classify_interaction,
    compute_beta,
    compute_c,
    compute_instance,
    default_lambda,
    fixture_instance,
    fixture_residual_ratios,
    interaction_summary,
    load_coefficients,
    load_coefficients_json,
    qubo_energy,
    qubo_matrices,
    sample_residual_ratios,
    save_coefficients,
    synth_instance,
)
from src.validation_utils import CoefficientError, CoefficientSchemaError

from tests.conftest import ND_BASELINE_TSTT


def _u(n, links):
    u = np.zeros(n, dtype=int)
    u[[link - 1 for link in links]] = 1
    return u


@pytest.mark.unit
class TestFixtureCoefficients:

    def test_shape_and_symmetry(self, nd_qubo):
        assert nd_qubo.n == 19
        assert np.allclose(nd_qubo.B, nd_qubo.B.T)
        assert np.all(np.diag(nd_qubo.B) == 0)
        assert nd_qubo.mask.sum() == 2 * 171

    def test_provenance(self, nd_qubo):
        provenance = nd_qubo.provenance
        assert provenance.baseline_tstt == pytest.approx(ND_BASELINE_TSTT)
        assert provenance.joint_tstt[15, 18] == pytest.approx(42980.59)

    def test_residual_ratios(self):
        e = fixture_residual_ratios()
        assert len(e) == 19
        assert e[0] == pytest.approx(0.578587674)
        assert ((e > 0) & (e < 1)).all()

    def test_default_lambda(self, nd_qubo):
        # 10 x max(|c|, |beta|) = 10 x 30027.43
        assert nd_qubo.lam == pytest.approx(300274.3)

    def test_pairwise_energy_16_19(self, nd_qubo):
        energy = qubo_energy(nd_qubo, _u(19, (16, 19)))
        assert energy == pytest.approx(-60054.86, abs=1e-6)

    def test_linear_term_included(self):
        instance = fixture_instance(k=2, include_linear=True)
        energy = qubo_energy(instance, _u(19, (16, 19)))
        assert energy == pytest.approx(-60054.86 - 524.51 - 6679.39)

    def test_cardinality_penalty(self, nd_qubo):
        energy = qubo_energy(nd_qubo, _u(19, (16,)))
        assert energy == pytest.approx(nd_qubo.lam)

    def test_interaction_classes(self, nd_qubo):
        summary = interaction_summary(nd_qubo.B, ND_BASELINE_TSTT,
                                      nd_qubo.mask)
        assert sum(summary.values()) == 171
        assert summary['synergistic'] > 0


@pytest.mark.unit
class TestEnergyForms:

    def test_expanded_form_matches_energy(self):
        instance = fixture_instance(k=3, include_linear=True)
        h, W, const = qubo_matrices(instance)
        rng = np.random.default_rng(7)

        assert np.allclose(W, W.T)
        assert np.all(np.diag(W) == 0)
        for _ in range(20):
            u = rng.integers(0, 2, size=instance.n)
            expanded = const + h @ u + u @ W @ u
            assert expanded == pytest.approx(qubo_energy(instance, u),
                                             rel=1e-12, abs=1e-6)

    def test_unordered_convention_halves_pairs(self, small_qubo):
        from dataclasses import replace

        unordered = replace(small_qubo, pair_convention="unordered")
        u = _u(5, (1, 2))
        assert qubo_energy(small_qubo, u) == pytest.approx(-14.0 - 12.0)
        assert qubo_energy(unordered, u) == pytest.approx(-14.0 - 6.0)

    def test_wrong_length(self, small_qubo):
        with pytest.raises(ValueError):
            qubo_energy(small_qubo, [1, 0])


@pytest.mark.unit
class TestQuboInstance:

    def test_asymmetric_beta(self):
        B = np.array([[0.0, 1.0], [2.0, 0.0]])
        with pytest.raises(CoefficientError):
            QuboInstance(c=[1.0, 1.0], B=B, lam=10.0, k=1)

    def test_non_zero_diagonal(self):
        with pytest.raises(CoefficientError):
            QuboInstance(c=[1.0, 1.0], B=np.eye(2), lam=10.0, k=1)

    @pytest.mark.parametrize("k", [0, 3])
    def test_k_out_of_range(self, k):
        with pytest.raises(CoefficientError):
            QuboInstance(c=[1.0, 1.0], B=np.zeros((2, 2)), lam=10.0, k=k)

    def test_non_positive_lambda(self):
        with pytest.raises(CoefficientError):
            QuboInstance(c=[1.0], B=np.zeros((1, 1)), lam=0.0, k=1)

    def test_with_helpers_keep_coefficients(self, small_qubo):
        other = small_qubo.with_k(3).with_lambda(5.0).with_linear(False)
        assert (other.k, other.lam, other.include_linear) == (3, 5.0, False)
        assert other.c is small_qubo.c
        assert other.linear.sum() == 0

    def test_max_abs_coefficient(self, small_qubo):
        assert small_qubo.max_abs_coefficient == 10.0
        assert small_qubo.with_linear(False).max_abs_coefficient == 6.0


@pytest.mark.unit
class TestLambda:

    def test_multiplier_times_scale(self):
        assert default_lambda([1.0, -4.0], np.zeros((2, 2)), 20) == 80.0

    @pytest.mark.parametrize("multiplier", [5.0, 150.0])
    def test_multiplier_range(self, multiplier):
        with pytest.raises(CoefficientError):
            default_lambda([1.0], np.zeros((1, 1)), multiplier)

    def test_all_zero_coefficients(self):
        with pytest.raises(CoefficientError):
            default_lambda([0.0, 0.0], np.zeros((2, 2)))


@pytest.mark.unit
class TestClassification:

    @pytest.mark.parametrize("beta,expected", [
        (10.0, "synergistic"),
        (-10.0, "substitutive"),
        (0.0, "additive"),
    ])
    def test_sign(self, beta, expected):
        assert classify_interaction(beta) == expected

    def test_tolerance_relative_to_baseline(self):
        assert classify_interaction(0.5, baseline=1e6) == "additive"
        assert classify_interaction(1.5, baseline=1e6) == "synergistic"


@pytest.mark.unit
class TestResidualRatios:

    def test_reproducible(self):
        a = sample_residual_ratios(19, (0.3, 0.7), seed=3)
        b = sample_residual_ratios(19, (0.3, 0.7), seed=3)
        assert np.array_equal(a, b)
        assert ((a >= 0.3) & (a <= 0.7)).all()

    def test_default_interval(self):
        e = sample_residual_ratios(500, seed=1)
        assert ((e >= 0.3) & (e <= 0.7)).all()
        assert np.array_equal(e, sample_residual_ratios(500, (0.3, 0.7),
                                                        seed=1))

    @pytest.mark.parametrize("interval", [(0.0, 0.5), (0.7, 0.3), (0.5, 1.2)])
    def test_invalid_interval(self, interval):
        with pytest.raises(ValueError):
            sample_residual_ratios(5, interval)


@pytest.mark.unit
class TestComputedCoefficients:

    def test_parallel_network(self, parallel_network):
        e = np.array([0.5, 0.8])
        c, provenance = compute_c(parallel_network, e)
        baseline = solve_ue(parallel_network).tstt

        assert provenance.baseline_tstt == pytest.approx(baseline)
        assert (c > 0).all()
        # Link com menor capacidade residual tem maior impacto
        assert c[0] > c[1]

        B, provenance = compute_beta(parallel_network, e, provenance)
        joint = provenance.joint_tstt[0, 1]
        expected = joint - (provenance.disrupted_tstt.sum() - baseline)
        assert B[0, 1] == pytest.approx(expected)
        assert B[1, 0] == B[0, 1]
        assert provenance.valid_mask[0, 1]

    def test_compute_instance(self, parallel_network):
        instance = compute_instance(parallel_network, [0.5, 0.8], k=1)
        assert instance.lam == pytest.approx(
            10 * max(np.abs(instance.c).max(), np.abs(instance.B).max()))
        assert instance.provenance.settings_hash

    def test_e_length_mismatch(self, parallel_network):
        with pytest.raises(CoefficientError):
            compute_c(parallel_network, [0.5])


@pytest.mark.unit
class TestSynthetic:

    def test_structure(self):
        instance = synth_instance(30, 4, seed=1)
        assert instance.n == 30 and instance.k == 4
        assert np.allclose(instance.B, instance.B.T)
        assert ((instance.c >= 100) & (instance.c <= 1000)).all()

    def test_reproducible(self):
        a = synth_instance(20, 2, seed=5)
        b = synth_instance(20, 2, seed=5)
        assert np.array_equal(a.B, b.B)

    def test_no_interactions(self):
        instance = synth_instance(10, 2, beta_density=0.0)
        assert not instance.B.any()

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            synth_instance(5, 6)


@pytest.mark.unit
class TestCoefficientFiles:

    def test_csv_export_and_reload(self, nd_qubo, tmp_path):
        paths = save_coefficients(nd_qubo, tmp_path)
        reloaded = load_coefficients(paths['c'], paths['beta'], k=2,
                                     include_linear=False)

        assert np.allclose(reloaded.c, nd_qubo.c, rtol=1e-5)
        assert np.allclose(reloaded.B, nd_qubo.B, rtol=1e-5)
        assert reloaded.provenance.baseline_tstt == pytest.approx(
            ND_BASELINE_TSTT, rel=1e-5)

    def test_json_is_lossless(self, nd_qubo, tmp_path):
        paths = save_coefficients(nd_qubo, tmp_path)
        reloaded = load_coefficients_json(paths['json'])

        assert np.array_equal(reloaded.c, nd_qubo.c)
        assert np.array_equal(reloaded.B, nd_qubo.B)
        assert reloaded.lam == nd_qubo.lam
        assert reloaded.include_linear is False
        assert np.array_equal(reloaded.mask, nd_qubo.mask)

    def test_json_overrides(self, nd_qubo, tmp_path):
        paths = save_coefficients(nd_qubo, tmp_path)
        reloaded = load_coefficients_json(paths['json'], k=4, lam=2000.0)
        assert (reloaded.k, reloaded.lam) == (4, 2000.0)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "coefficients.json"
        path.write_text(json.dumps({'c': [1.0]}), encoding="utf-8")
        with pytest.raises(CoefficientSchemaError):
            load_coefficients_json(path)

    def _write(self, tmp_path, beta_rows):
        c_path = tmp_path / "c.csv"
        c_path.write_text(
            "link_id,e,baseline_tstt,disrupted_tstt,c\n"
            "1,0.5,100,110,10\n2,0.5,100,120,20\n3,0.5,100,105,5\n",
            encoding="utf-8",
        )
        beta_path = tmp_path / "beta.csv"
        beta_path.write_text("s,t,tstt_s,tstt_t,tstt_st,beta\n"
                             + "\n".join(beta_rows) + "\n", encoding="utf-8")
        return c_path, beta_path

    def test_missing_pairs_are_masked(self, tmp_path):
        c_path, beta_path = self._write(tmp_path, ["1,2,110,120,140,10"])
        instance = load_coefficients(c_path, beta_path, k=2)

        assert instance.B[0, 1] == instance.B[1, 0] == 10.0
        assert instance.mask[0, 1] and not instance.mask[0, 2]
        assert instance.lam == 200.0

    @pytest.mark.parametrize("rows", [
        ["1,1,110,110,120,5"],
        ["1,4,110,110,120,5"],
        ["1,2,110,120,140,10", "2,1,120,110,140,10"],
        ["1,2,110,120,140,abc"],
    ])
    def test_schema_violations(self, tmp_path, rows):
        c_path, beta_path = self._write(tmp_path, rows)
        with pytest.raises(CoefficientSchemaError):
            load_coefficients(c_path, beta_path)

    def test_missing_column(self, tmp_path):
        c_path, _ = self._write(tmp_path, [])
        beta_path = tmp_path / "beta.csv"
        beta_path.write_text("s,t,beta\n1,2,3\n", encoding="utf-8")
        with pytest.raises(CoefficientSchemaError):
            load_coefficients(c_path, beta_path)


@pytest.mark.unit
def test_fixture_pairs_cover_all_combinations(nd_qubo):
    for s, t in combinations(range(19), 2):
        assert nd_qubo.mask[s, t]


@pytest.mark.slow
@pytest.mark.acceptance
@pytest.mark.integration
class TestRecomputedNguyenDupuis:
    """Coeficientes recalculados com UE a partir das razões tabeladas"""

    @pytest.fixture(scope="class")
    def recomputed(self):
        network = builtin_nguyen_dupuis("medium")
        e = fixture_residual_ratios()
        c, provenance = compute_c(network, e)
        B, provenance = compute_beta(network, e, provenance,
                                     pairs=[(16, 19), (2, 17)])
        return c, B, provenance

    def test_baseline_tstt(self, recomputed):
        _, _, provenance = recomputed
        assert provenance.baseline_tstt == pytest.approx(5749.262154,
                                                         rel=1e-4)

    def test_c_ranking_agrees_with_table(self, recomputed, nd_qubo):
        c, _, _ = recomputed
        rho, _ = spearmanr(c, nd_qubo.c)
        assert rho >= 0.9

    def test_interaction_signs(self, recomputed):
        _, B, provenance = recomputed
        assert provenance.valid_mask[15, 18]
        assert provenance.valid_mask[1, 16]
        assert B[15, 18] > 0
        assert B[1, 16] < 0
