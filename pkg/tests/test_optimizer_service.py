import math

import numpy as np
import pytest

from engine.schemas.clause_schemas import DilutedModel, KSatModel, KSpinModel
from engine.schemas.search_schemas import SearchPoint, SearchSpec
from engine.services.optimizer_service import OptimizerService
from engine.utils.error_util import ParameterError
from engine.utils.stats_util import LOG2


class TestParameterization:
    def test_zero_logits(self):
        assert OptimizerService.zetas_from_logits(np.zeros(2)) == (0.5,)
        zetas = OptimizerService.zetas_from_logits(np.zeros(3))
        assert zetas == pytest.approx((1.0 / 3.0, 2.0 / 3.0))

    def test_logits_round_trip(self):
        logits = OptimizerService.logits_from_zetas((0.2, 0.7))
        assert OptimizerService.zetas_from_logits(logits) == pytest.approx((0.2, 0.7), abs=1e-12)

    @pytest.mark.parametrize("logits", [[100.0, -100.0, -100.0], [-50.0, 0.0, 50.0], [3.0, 3.0, -40.0]])
    def test_extreme_logits_stay_feasible(self, logits):
        zetas = OptimizerService.zetas_from_logits(np.array(logits))
        assert 0.0 < zetas[0] < zetas[1] < 1.0

    def test_decode_clips_h(self):
        spec = SearchSpec(r=1, G=2)
        params, h = OptimizerService.decode(np.array([0.0, 0.0, 3.0, -0.5]), spec)
        assert params.zetas == (0.5,)
        assert h.values.tolist() == [1.0, -0.5]

    def test_initial_points(self):
        spec = SearchSpec(r=2, G=2, seed=3)
        assert np.array_equal(OptimizerService.initial_point(spec, 0), np.zeros(spec.n_parameters))
        a = OptimizerService.initial_point(spec, 1)
        b = OptimizerService.initial_point(spec, 1)
        assert a.shape == (3 + 4,)
        assert np.array_equal(a, b)


class TestEmbedding:
    def _point(self):
        return SearchPoint(r=1, G=2, zetas=(0.5,), h_values=(-0.6, 0.4), value=0.0)

    def test_structure(self):
        deeper = OptimizerService.embed_point(self._point())
        assert deeper.r == 2
        assert deeper.zetas == (0.5, 0.75)
        assert deeper.h_values == (-0.6, -0.6, 0.4, 0.4)

    def test_refined_grid(self):
        deeper = OptimizerService.embed_point(self._point(), G=4)
        assert deeper.G == 4
        assert deeper.h_values[:4] == (-0.6,) * 4
        assert deeper.h_values[-4:] == (0.4,) * 4
        with pytest.raises(ParameterError):
            OptimizerService.embed_point(self._point(), G=3)

    def test_value_is_preserved(self, ksat2):
        point = self._point()
        deeper = OptimizerService.embed_point(point)
        shallow_spec = SearchSpec(r=1, G=2, M=8)
        deep_spec = SearchSpec(r=2, G=2, M=8)
        a = OptimizerService.evaluate(OptimizerService.encode(point.zetas, point.h_values), shallow_spec,
                                      ksat2, 1500, seed=1)
        b = OptimizerService.evaluate(OptimizerService.encode(deeper.zetas, deeper.h_values), deep_spec,
                                      ksat2, 1500, seed=2)
        assert abs(a.value - b.value) <= 3 * math.hypot(a.std_error, b.std_error)


class TestSearch:
    def test_no_clauses_gives_log2(self, empty_model):
        spec = SearchSpec(r=1, G=2, M=4, budgets=(6,), multistart=2, max_iter=5)
        result = OptimizerService.minimize_P(spec, empty_model)
        assert result.value == LOG2
        assert result.std_error == 0.0
        assert result.reeval.value == LOG2
        assert result.reeval_z == 0.0
        assert result.n_failed_starts == 0
        frame = OptimizerService.trace_frame(result)
        assert {"start", "stage", "evaluation", "params_hash", "value"} <= set(frame.columns)
        assert len(frame) == len(result.trace) > 0

    def test_same_seed_any_worker_count(self, ksat2):
        spec = SearchSpec(r=1, G=2, M=3, budgets=(8,), multistart=2, max_iter=4, seed=5)
        a = OptimizerService.minimize_P(spec, ksat2, workers=1)
        b = OptimizerService.minimize_P(spec, ksat2, workers=2)
        assert a.best == b.best
        assert a.trace == b.trace

    def test_search_never_exceeds_its_start(self, ksat2):
        spec = SearchSpec(r=1, G=2, M=4, budgets=(40,), multistart=1, max_iter=15, seed=6)
        result = OptimizerService.minimize_P(spec, ksat2)
        first = result.trace[0]
        assert result.best.value <= first.value
        assert 0.0 < result.best.zetas[0] < 1.0
        assert all(abs(v) <= 1.0 for v in result.best.h_values)

    def test_depths_and_running_minimum(self, empty_model):
        spec = SearchSpec(G=2, M=3, budgets=(4,), multistart=1, max_iter=3)
        results = OptimizerService.minimize_over_depths(spec, empty_model, depths=(1, 2))
        assert [res.r for res in results] == [1, 2]
        frame = OptimizerService.running_minimum(results)
        assert frame["running_min"].tolist() == [LOG2, LOG2]
        assert frame["running_min_r"].tolist() == [1, 1]


class TestUpperBoundGap:
    def test_validity(self):
        assert OptimizerService.fl_validity(DilutedModel(clause=KSatModel(K=3, beta=1.0), lam=1.0))
        assert OptimizerService.fl_validity(DilutedModel(clause=KSpinModel(K=2, beta=1.0), lam=1.0))
        assert not OptimizerService.fl_validity(DilutedModel(clause=KSpinModel(K=3, beta=1.0), lam=1.0))

    def test_gap_table_without_clauses(self, empty_model):
        spec = SearchSpec(r=1, G=2, M=3, budgets=(4,), multistart=1, max_iter=3)
        frame = OptimizerService.fl_gap_report(empty_model, [4, 6], spec, n_instances=3)
        assert frame["N"].tolist() == [4, 6]
        assert np.allclose(frame["gap"], 0.0, atol=1e-15)
        assert frame["valid"].all()

    def test_odd_kspin_is_flagged(self):
        model = DilutedModel(clause=KSpinModel(K=3, beta=1.0), lam=0.0)
        spec = SearchSpec(r=1, G=2, M=3, budgets=(4,), multistart=1, max_iter=3)
        frame = OptimizerService.fl_gap_report(model, [4], spec, n_instances=2)
        assert not frame["valid"].any()

    @pytest.mark.slow
    def test_upper_bound_ksat(self):
        model = DilutedModel(clause=KSatModel(K=2, beta=1.0), lam=1.0)
        spec = SearchSpec(r=1, G=2, M=16, budgets=(200, 800), multistart=2, seed=7)
        results = OptimizerService.minimize_over_depths(spec, model, depths=(1, 2))
        frame = OptimizerService.fl_gap_report(model, [8, 12], spec, n_instances=20, results=results)
        assert np.all(frame["gap"] >= -3 * frame["gap_std_error"])
        r1, r2 = results
        assert r2.reeval.value <= r1.reeval.value + 3 * math.hypot(r1.reeval.std_error, r2.reeval.std_error)

    def test_reeval_uses_fresh_samples(self, ksat2):
        spec = SearchSpec(r=1, G=2, M=3, budgets=(6,), multistart=1, max_iter=2, reeval_factor=3)
        result = OptimizerService.minimize_P(spec, ksat2)
        assert result.reeval.n_samples == 18
        assert result.reeval.seed != result.best.seed
