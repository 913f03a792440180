import math

import numpy as np
import pytest

from engine.schemas.clause_schemas import DilutedModel, KSatModel, KSpinModel
from engine.schemas.system_schemas import ClauseGroup, GGSpec, HamiltonianInstance
from engine.services.system_service import SystemService
from engine.utils.error_util import EnumerationCapError, ParameterError
from engine.utils.rng_util import stream
from engine.utils.stats_util import LOG2


def _single_spin_instance(g):
    clause = KSpinModel(K=1, beta=1.0)
    group = ClauseGroup(model=clause, indices=np.array([[0]]), disorder=np.array([g]))
    return HamiltonianInstance(N=1, model=DilutedModel(clause=clause, lam=1.0), groups=[group])


class TestInstances:
    def test_clause_count_is_poisson(self, ksat2):
        model = ksat2.model_copy(update={"lam": 1.5})
        counts = np.array([inst.model_group.size for inst in SystemService.sample_instances(10, model, 2000, seed=1)])
        assert abs(counts.mean() - 15.0) <= 3 * math.sqrt(15.0 / counts.size)

    def test_perturbation_groups(self):
        model = DilutedModel(clause=KSatModel(K=2, beta=1.0), lam=1.0, eps_pert=0.1, d_max=5)
        inst = SystemService.sample_instance(7, model, stream(2, "inst"))
        assert len(inst.perturbation_groups) == 5
        single = inst.perturbation_groups[0]
        assert single.size == 7
        assert sorted(single.indices[:, 0].tolist()) == list(range(7))
        assert [g.model.d for g in inst.perturbation_groups] == [1, 2, 3, 4, 5]

    def test_no_perturbation_by_default(self, ksat2, rng):
        inst = SystemService.sample_instance(5, ksat2, rng)
        assert len(inst.groups) == 1

    def test_rejects_empty_system(self, ksat2, rng):
        with pytest.raises(ParameterError):
            SystemService.sample_instance(0, ksat2, rng)

    def test_record_round_trip(self, ksat2, rng):
        inst = SystemService.sample_instance(6, ksat2.model_copy(update={"eps_pert": 0.2, "d_max": 3}), rng)
        restored = SystemService.instance_from_record(inst.to_record())
        assert restored.n_clauses == inst.n_clauses
        assert SystemService.free_energy(restored) == SystemService.free_energy(inst)


class TestEnumeration:
    def test_configuration_order(self):
        S = SystemService.configurations(2, 0, 4)
        assert S.tolist() == [[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]]

    def test_empty_hamiltonian(self, empty_model, rng):
        inst = SystemService.sample_instance(9, empty_model, rng)
        assert SystemService.free_energy(inst) == LOG2
        assert SystemService.log_partition(inst) == 9 * LOG2
        assert SystemService.free_energy_ti(inst, rng).value == LOG2

    def test_single_spin_closed_form(self):
        inst = _single_spin_instance(0.7)
        assert SystemService.free_energy(inst) == pytest.approx(math.log(2.0 * math.cosh(0.7)), abs=1e-12)
        m = SystemService.exact_magnetizations(inst)
        assert m[0] == pytest.approx(math.tanh(0.7), abs=1e-12)

    def test_permutation_invariance(self, kspin2, rng):
        inst = SystemService.sample_instance(8, kspin2, rng)
        permuted = SystemService.permute_sites(inst, rng.permutation(8))
        assert SystemService.free_energy(permuted) == pytest.approx(SystemService.free_energy(inst), abs=1e-12)

    def test_bad_permutation(self, kspin2, rng):
        inst = SystemService.sample_instance(4, kspin2, rng)
        with pytest.raises(ParameterError):
            SystemService.permute_sites(inst, [0, 0, 1, 2])

    def test_enumeration_cap(self, ksat2, rng):
        inst = SystemService.sample_instance(6, ksat2, rng)
        with pytest.raises(EnumerationCapError):
            SystemService.free_energy(inst, cap=4)

    def test_chunked_partition_matches_direct_sum(self, ksat2):
        inst = SystemService.sample_instance(13, ksat2, stream(3, "big"))
        H = SystemService.gibbs_log_weights(inst)
        assert H.size == 2 ** 13
        direct = math.log(np.sum(np.exp(H)))
        assert SystemService.log_partition(inst) == pytest.approx(direct, rel=1e-12)

    def test_ksat_clause_never_raises_partition(self, ksat2):
        rng = stream(9, "extra-clause")
        inst = SystemService.sample_instance(8, ksat2, rng)
        clause = ksat2.clause
        for _ in range(5):
            group = inst.model_group
            extended = ClauseGroup(
                model=clause,
                indices=np.vstack([group.indices, rng.choice(8, size=(1, clause.K), replace=False)]),
                disorder=np.concatenate([group.disorder, rng.choice(np.array([-1.0, 1.0]), size=(1, clause.K))]),
            )
            bigger = inst.model_copy(update={"groups": [extended, *inst.perturbation_groups]})
            assert bigger.n_clauses == inst.n_clauses + 1
            assert SystemService.log_partition(bigger) <= SystemService.log_partition(inst) + 1e-12
            inst = bigger

    def test_disorder_average_without_clauses(self, empty_model):
        estimate = SystemService.disorder_averaged_free_energy(6, empty_model, 5, seed=1)
        assert estimate.value == pytest.approx(LOG2, abs=1e-15)
        assert estimate.std_error == pytest.approx(0.0, abs=1e-15)


class TestSampling:
    def test_exact_sampler_magnetizations(self, ksat2):
        inst = SystemService.sample_instance(10, ksat2, stream(4, "inst"))
        m = SystemService.exact_magnetizations(inst)
        batch = SystemService.sample_replicas(inst, 20000, stream(4, "replicas"))
        se = np.sqrt(np.maximum(1.0 - m ** 2, 1e-12) / batch.n)
        assert np.all(np.abs(batch.spins.mean(axis=0) - m) <= 4 * se)

    def test_mcmc_magnetizations(self, ksat2):
        inst = SystemService.sample_instance(10, ksat2, stream(5, "inst"))
        m = SystemService.exact_magnetizations(inst)
        batch = SystemService.sample_replicas(inst, 4000, stream(5, "mcmc"), method="mcmc", burn_in=200)
        se = np.sqrt(np.maximum(1.0 - m ** 2, 1e-12) / batch.n)
        assert np.all(np.abs(batch.spins.mean(axis=0) - m) <= 4 * se)

    def test_mcmc_overlap_histogram(self, ksat2):
        inst = SystemService.sample_instance(10, ksat2, stream(6, "inst"))
        exact = SystemService.exact_overlap_distribution(inst)
        assert sum(exact.probs) == pytest.approx(1.0)
        pairs = SystemService.sample_replica_tuples(inst, 4000, 2, stream(6, "mcmc"), method="mcmc", burn_in=200)
        frame = SystemService.overlap_histogram(pairs)
        assert list(frame.columns) == ["overlap", "count", "frequency", "std_error"]
        assert frame["count"].sum() == 4000
        gap = np.abs(frame["frequency"].to_numpy() - np.array(exact.probs))
        se = np.sqrt(np.array(exact.probs) * (1.0 - np.array(exact.probs)) / 4000)
        assert np.all(gap <= 4 * se + 1e-3)

    def test_unknown_method(self, ksat2, rng):
        inst = SystemService.sample_instance(4, ksat2, rng)
        with pytest.raises(ParameterError):
            SystemService.sample_replicas(inst, 2, rng, method="gibbs")

    def test_r_hat(self):
        assert SystemService.potential_scale_reduction(np.ones((10, 4))) == 1.0
        trace = np.column_stack([np.zeros(50), np.ones(50) * 5.0]) + stream(7, "trace").normal(size=(50, 2)) * 0.1
        assert SystemService.potential_scale_reduction(trace) > 1.1

    def test_mcmc_trace(self, ksat2):
        inst = SystemService.sample_instance(6, ksat2, stream(7, "inst"))
        trace = SystemService.mcmc_trace(inst, n_chains=4, n_samples=100, rng=stream(7, "chains"), burn_in=20,
                                         thinning=2)
        assert trace.samples.shape == (100, 4, 6)
        assert trace.energies.shape == (100, 4)
        assert trace.sweeps == 20 + 100 * 2
        assert np.allclose(trace.energies[-1], SystemService.energy(inst, trace.samples[-1]))
        assert 0.9 <= trace.r_hat < 1.1

    @pytest.mark.slow
    def test_thermodynamic_integration_matches_enumeration(self, ksat2):
        inst = SystemService.sample_instance(10, ksat2, stream(8, "inst"))
        exact = SystemService.free_energy(inst)
        estimate = SystemService.free_energy_ti(inst, stream(8, "ti"))
        assert abs(estimate.value - exact) <= 3 * estimate.std_error + 2e-3


class TestOverlaps:
    def test_examples(self):
        assert SystemService.overlap([1, 1, -1, -1], [1, -1, -1, 1]) == 0.0
        assert SystemService.overlap([1, -1, 1], [1, -1, 1]) == 1.0
        with pytest.raises(ParameterError):
            SystemService.overlap([1, 1], [1, 1, 1])

    def test_ultrametricity_baseline(self, empty_model):
        inst = SystemService.sample_instance(6, empty_model, stream(9, "inst"))
        triplets = SystemService.sample_replica_tuples(inst, 20000, 3, stream(9, "triplets"))
        estimate = SystemService.ultrametricity_violation(triplets, 0.2)
        baseline = SystemService.ultrametricity_uniform_baseline(6, 0.2)
        assert 0.0 < baseline < 1.0
        assert abs(estimate.value - baseline) <= 3 * math.sqrt(baseline * (1 - baseline) / estimate.n)

    def test_ultrametricity_large_delta(self, ksat2, rng):
        inst = SystemService.sample_instance(6, ksat2, rng)
        triplets = SystemService.sample_replica_tuples(inst, 100, 3, rng)
        assert SystemService.ultrametricity_violation(triplets, 2.0).value == 0.0
        assert SystemService.ultrametricity_uniform_baseline(6, 2.0) == 0.0

    def test_positivity_baseline(self, empty_model):
        assert SystemService.positivity_uniform_baseline(4, 0.0) == pytest.approx(5.0 / 16.0)
        inst = SystemService.sample_instance(8, empty_model, stream(10, "inst"))
        pairs = SystemService.sample_replica_tuples(inst, 20000, 2, stream(10, "pairs"))
        estimate = SystemService.positivity_mass(pairs, 0.25)
        baseline = SystemService.positivity_uniform_baseline(8, 0.25)
        assert abs(estimate.value - baseline) <= 3 * math.sqrt(baseline * (1 - baseline) / estimate.n)


class TestGhirlandaGuerra:
    def test_trivial_test_function(self, ksat2):
        instances = SystemService.sample_instances(6, ksat2, 3, seed=11)
        spec = GGSpec(n=3, f_kind="one", psi_kind="power", power=2)
        for method in ("exact", "mc"):
            result = SystemService.gg_residual(instances, spec, method=method, n_sets=10)
            assert (result.residual, result.std_error) == (0.0, 0.0)
            assert result.lhs == result.rhs > 0.0
        exact = SystemService.gg_residual(instances, spec)
        mean_psi = np.mean([SystemService.gg_exact_parts(inst, spec)[2] for inst in instances])
        assert exact.lhs == pytest.approx(mean_psi, rel=1e-12)

    @pytest.mark.parametrize("spec", [
        GGSpec(n=2, f_kind="overlap", psi_kind="identity"),
        GGSpec(n=2, f_kind="spin", site=1, psi_kind="power", power=2),
    ])
    def test_monte_carlo_matches_enumeration(self, ksat2, spec):
        instances = SystemService.sample_instances(8, ksat2, 4, seed=12)
        exact = SystemService.gg_residual(instances, spec, method="exact")
        mc = SystemService.gg_residual(instances, spec, method="mc", n_sets=3000, seed=12)
        assert abs(mc.residual - exact.residual) <= 3 * mc.std_error + 2e-3

    def test_uniform_measure_at_finite_size(self, empty_model):
        # uniform spins: <R_12 R_13> = <R_12> = 0 while <R_12^2> = 1/N, so the residual is -1/(2N)
        instances = SystemService.sample_instances(5, empty_model, 2, seed=13)
        result = SystemService.gg_residual(instances, GGSpec(n=2, f_kind="overlap", psi_kind="identity"))
        assert result.residual == pytest.approx(-0.1, abs=1e-12)

    def test_mixture_report(self, ksat2):
        instances = SystemService.sample_instances(6, ksat2, 3, seed=14)
        report = SystemService.gg_mixture_report(instances, GGSpec(n=2, f_kind="overlap"), [-0.5, 0.0, 1.0])
        assert [r.threshold for r in report] == [-0.5, 0.0, 1.0]
        assert all(math.isfinite(r.residual) for r in report)

    def test_site_outside_system(self, ksat2):
        instances = SystemService.sample_instances(4, ksat2, 1, seed=15)
        with pytest.raises(ParameterError):
            SystemService.gg_residual(instances, GGSpec(n=2, f_kind="spin", site=9))
