import math

import numpy as np
import pytest

from engine.schemas.cascade_schemas import CascadeParams
from engine.schemas.clause_schemas import DilutedModel, KSatModel, KSpinModel
from engine.schemas.field_schemas import OrderParamH
from engine.services.functional_service import FunctionalService, _functional_replicate, clause_term_sum
from engine.clauses import build_clause
from engine.utils.error_util import ParameterError
from engine.utils.rng_util import stream
from engine.utils.stats_util import LOG2, mean_and_se, two_sample_z


def _combined_z(a, b):
    return abs(a.value - b.value) / math.hypot(a.std_error, b.std_error)


class TestDegenerateValues:
    def test_no_clauses_is_log2(self, params_r1, h_r1, empty_model):
        estimate = FunctionalService.estimate_P(params_r1, h_r1, empty_model, M=8, n_samples=50, seed=1)
        assert estimate.value == LOG2
        assert estimate.std_error == 0.0

    def test_single_atom_no_clauses(self, empty_model):
        estimate = FunctionalService.estimate_P_single_atom(empty_model, n_samples=20, seed=2, field=0.4)
        assert (estimate.value, estimate.std_error) == (LOG2, 0.0)

    @pytest.mark.parametrize("clause", [KSpinModel(K=3, beta=0.0), KSatModel(K=2, beta=0.0)])
    def test_infinite_temperature(self, params_r1, h_r1, clause):
        model = DilutedModel(clause=clause, lam=1.5)
        estimate = FunctionalService.estimate_P(params_r1, h_r1, model, M=6, n_samples=100, seed=3)
        assert abs(estimate.value - LOG2) <= 3 * estimate.std_error + 1e-12

    def test_depth_mismatch(self, params_r2, h_r1, ksat2):
        with pytest.raises(ParameterError):
            FunctionalService.estimate_P(params_r2, h_r1, ksat2, M=4, n_samples=2, seed=0)

    def test_unknown_weights(self, params_r1, h_r1, ksat2):
        with pytest.raises(ParameterError):
            FunctionalService.estimate_P(params_r1, h_r1, ksat2, M=4, n_samples=2, seed=0, weights="tilted")


class TestEstimate:
    def test_constant_h_matches_single_atom(self, params_r1, ksat2):
        h = OrderParamH.constant(1, 2, 0.3)
        cascade = FunctionalService.estimate_P(params_r1, h, ksat2, M=6, n_samples=1500, seed=4)
        atom = FunctionalService.estimate_P_single_atom(ksat2, n_samples=1500, seed=5, field=0.3)
        assert _combined_z(cascade, atom) <= 3.0

    def test_sorted_and_original_weights_agree(self, params_r1, h_r1, ksat2):
        # independent draws: seed 6 for V, seed 7 for v
        sorted_ = [_functional_replicate(params_r1, h_r1, ksat2, 6, False, "sorted", None, 6, i) for i in range(1500)]
        original = [_functional_replicate(params_r1, h_r1, ksat2, 6, False, "original", None, 7, i)
                    for i in range(1500)]
        assert abs(two_sample_z(sorted_, original)) <= 3.0

    def test_std_error_halves_with_four_times_the_samples(self, params_r1, h_r1, ksat2):
        small = FunctionalService.estimate_P(params_r1, h_r1, ksat2, M=4, n_samples=400, seed=14)
        large = FunctionalService.estimate_P(params_r1, h_r1, ksat2, M=4, n_samples=1600, seed=15)
        assert large.std_error / small.std_error == pytest.approx(0.5, abs=0.15)

    def test_same_seed_same_value(self, params_r1, h_r1, ksat2):
        a = FunctionalService.estimate_P(params_r1, h_r1, ksat2, M=4, n_samples=30, seed=8)
        b = FunctionalService.estimate_P(params_r1, h_r1, ksat2, M=4, n_samples=30, seed=8, workers=2)
        assert a.value == b.value
        assert a.std_error == b.std_error

    def test_metadata(self, params_r1, h_r1, ksat2):
        estimate = FunctionalService.estimate_P(params_r1, h_r1, ksat2, M=4, n_samples=10, seed=9)
        assert estimate.n_disorder_samples == 10
        assert estimate.M == 4
        assert estimate.truncation_budget > 0.0
        assert estimate.extra["perturbation"] is False

    def test_perturbation_terms_are_drawn(self, h_r1, rng):
        model = DilutedModel(clause=KSatModel(K=2, beta=1.0), lam=1.0, eps_pert=0.2, d_max=4)
        terms = FunctionalService.sample_A_alpha(h_r1, 3, model, rng)
        assert terms.values.shape == (3, 2)
        assert terms.n_pert_terms >= 0
        assert model.perturbation_tail_bound() > 0.0
        estimate = FunctionalService.estimate_P(CascadeParams(r=1, zetas=(0.5,)), h_r1, model, M=3,
                                                n_samples=20, seed=10)
        assert estimate.extra["perturbation"] is True
        assert math.isfinite(estimate.value)

    @pytest.mark.parametrize("sampler, slots", [
        (FunctionalService.sample_A_alpha, 3),
        (FunctionalService.sample_B_alpha, 2),
    ])
    def test_term_counts_are_poisson(self, h_r1, sampler, slots):
        # lambda K terms in A, lambda (K - 1) in B
        model = DilutedModel(clause=KSpinModel(K=3, beta=1.0), lam=1.5)
        rng = stream(16, "term-counts")
        counts = [sampler(h_r1, 2, model, rng).n_model_terms for _ in range(2000)]
        mean, se = mean_and_se(counts)
        assert abs(mean - 1.5 * slots) <= 3 * se

    def test_B_terms_shape(self, h_r1, ksat2, rng):
        terms = FunctionalService.sample_B_alpha(h_r1, 3, ksat2, rng)
        assert terms.values.shape == (3,)
        assert np.all(terms.values <= 0.0)
        assert terms.n_pert_terms == 0

    def test_poisson_cap(self, rng):
        counts = [FunctionalService.poisson_count(rng, 5.0, cap=2) for _ in range(200)]
        assert max(counts) <= 2
        assert FunctionalService.poisson_count(rng, 0.0) == 0


class TestOmegaStar:
    def test_constant_h_is_flat_in_omega_star(self, params_r1, ksat2):
        h = OrderParamH.constant(1, 3, 0.2, omega_star_coordinate=True)
        plain = FunctionalService.estimate_P(params_r1, h, ksat2, M=4, n_samples=40, seed=11)
        best = FunctionalService.omega_star_infimum(params_r1, h, ksat2, M=4, n_samples=40, seed=11)
        assert best.value == plain.value
        assert best.extra["omega_star"] == pytest.approx(1.0 / 6.0)

    def test_plain_h_passes_through(self, params_r1, h_r1, ksat2):
        plain = FunctionalService.estimate_P(params_r1, h_r1, ksat2, M=4, n_samples=10, seed=12)
        best = FunctionalService.omega_star_infimum(params_r1, h_r1, ksat2, M=4, n_samples=10, seed=12)
        assert best.value == plain.value


class TestClauseTermSum:
    def test_empty(self):
        clause = build_clause(KSpinModel(K=2, beta=1.0))
        assert clause_term_sum(clause, np.zeros(0), np.zeros((0, 1, 5)), True).shape == (5, 2)
        assert clause_term_sum(clause, np.zeros(0), np.zeros((0, 2, 5)), False).shape == (5,)

    def test_cavity_spin_is_last_argument(self):
        clause = build_clause(KSpinModel(K=2, beta=1.0))
        fields = np.full((1, 1, 1), 0.5)
        total = clause_term_sum(clause, np.array([0.7]), fields, True)
        expected_plus = math.log(math.cosh(0.7) * (1.0 + math.tanh(0.7) * 0.5))
        expected_minus = math.log(math.cosh(0.7) * (1.0 - math.tanh(0.7) * 0.5))
        assert total[0, 0] == pytest.approx(expected_plus, rel=1e-12)
        assert total[0, 1] == pytest.approx(expected_minus, rel=1e-12)

    def test_terms_add(self):
        clause = build_clause(KSatModel(K=1, beta=2.0))
        rng = stream(13, "terms")
        disorder = clause.sample_disorder(rng, 3)
        fields = rng.uniform(-1, 1, size=(3, 1, 4))
        total = clause_term_sum(clause, disorder, fields, False)
        separate = sum(clause_term_sum(clause, disorder[k:k + 1], fields[k:k + 1], False) for k in range(3))
        assert np.allclose(total, separate, rtol=1e-13)
