import math
from functools import partial

import numpy as np
import pytest

from engine.schemas.cascade_schemas import CascadeParams, VertexPath
from engine.services.cascade_service import CascadeService
from engine.utils.error_util import ParameterError
from engine.utils.rng_util import stream


class TestWedge:
    def test_examples(self):
        assert CascadeService.wedge((1, 2, 3), (1, 2, 5)) == 2
        assert CascadeService.wedge((1,), (2,)) == 0
        assert CascadeService.wedge(VertexPath.of(4, 4), VertexPath.of(4, 4)) == 2

    def test_root(self):
        assert CascadeService.wedge((), (3, 1)) == 0


class TestPoissonPoints:
    def test_arrivals(self):
        assert CascadeService.points_from_arrivals(np.array([1.0]), 0.5)[0] == 1.0
        assert CascadeService.points_from_arrivals(np.array([4.0]), 0.5)[0] == pytest.approx(1.0 / 16.0)

    def test_rejects_bad_zeta(self, rng):
        with pytest.raises(ParameterError):
            CascadeService.sample_poisson_points(1.0, 4, rng)
        with pytest.raises(ParameterError):
            CascadeService.sample_poisson_points(0.0, 4, rng)

    def test_points_are_decreasing(self, rng):
        points = CascadeService.sample_poisson_points(0.4, 50, rng, size=10)
        assert np.all(np.diff(points, axis=1) < 0)

    @pytest.mark.parametrize("zeta", [0.3, 0.5, 0.8])
    def test_count_above_matches_power_law(self, zeta):
        for x in (0.5, 1.0, 2.0, 4.0):
            # M large enough that truncation never removes points above x
            estimate = CascadeService.point_count_above(zeta, 400, x, 4000, seed=11)
            assert abs(estimate.value - x ** (-zeta)) <= 3 * estimate.std_error + 1e-3


class TestBuildCascade:
    def test_normalized_and_sorted(self, params_r2, rng):
        cascade = CascadeService.build_cascade(params_r2, 6, rng)
        CascadeService.validate_cascade(cascade)
        assert cascade.n_leaves == 36
        assert cascade.leaf_weights.sum() == pytest.approx(1.0, abs=1e-12)
        top = cascade.sorted_cluster_weights(1)
        assert np.all(np.diff(top) <= 0)

    def test_sort_map_preserves_wedges(self, params_r2, rng):
        cascade = CascadeService.build_cascade(params_r2, 5, rng)
        assert CascadeService.verify_sort_map(cascade, rng, n_pairs=200)
        assert sorted(cascade.sort_map.tolist()) == list(range(cascade.n_leaves))

    def test_single_child(self, params_r1, rng):
        cascade = CascadeService.build_cascade(params_r1, 1, rng)
        assert cascade.sorted_weights.tolist() == [1.0]
        assert cascade.pi(VertexPath.of(1)) == VertexPath.of(1)

    def test_pi_of_root_children(self, params_r1, rng):
        cascade = CascadeService.build_cascade(params_r1, 4, rng)
        best = int(np.argmax(cascade.leaf_weights))
        assert cascade.pi(VertexPath.of(1)) == VertexPath.of(best + 1)

    def test_same_stream_same_cascade(self, params_r2):
        a = CascadeService.build_cascade(params_r2, 4, stream(3, "c", 0))
        b = CascadeService.build_cascade(params_r2, 4, stream(3, "c", 0))
        assert np.array_equal(a.log_leaf_weights, b.log_leaf_weights)

    def test_leaf_frequencies(self, params_r1, rng):
        cascade = CascadeService.build_cascade(params_r1, 8, rng)
        z = CascadeService.leaf_frequency_check(cascade, 20000, seed=5)
        assert np.max(np.abs(z)) < 5.0


class TestOverlaps:
    def test_pair_masses_sum_to_one(self, params_r2, rng):
        cascade = CascadeService.build_cascade(params_r2, 6, rng)
        masses = CascadeService.pair_overlap_masses(cascade)
        assert masses.shape == (3,)
        assert masses.sum() == pytest.approx(1.0)
        assert np.all(masses >= 0)

    def test_cdf_at_top_level_is_one(self, params_r2, rng):
        cascade = CascadeService.build_cascade(params_r2, 4, rng)
        assert CascadeService.overlap_cdf_value(cascade, 2) == 1.0
        estimate = CascadeService.overlap_law(params_r2, 4, 2, 10, seed=1)
        assert (estimate.value, estimate.std_error) == (1.0, 0.0)

    def test_overlap_values(self, params_r2, params_r1):
        assert CascadeService.overlap_values(params_r2).tolist() == [0.0, 0.5, 1.0]
        with pytest.raises(ParameterError):
            CascadeService.overlap_values(params_r1)

    def test_ensemble_check(self, params_r1):
        ensemble = [CascadeService.build_cascade(params_r1, 50, stream(2, "e", i)) for i in range(400)]
        estimate = CascadeService.overlap_cdf_check(ensemble, 0)
        assert estimate.extra["target"] == 0.5
        assert abs(estimate.value - 0.5) <= 3 * estimate.std_error + estimate.truncation_budget

    @pytest.mark.slow
    def test_overlap_law_two_levels(self, params_r2):
        for p in (0, 1):
            estimate = CascadeService.overlap_law(params_r2, 200, p, 2000, seed=20240101)
            target = params_r2.zetas[p]
            assert abs(estimate.value - target) <= 3 * estimate.std_error + estimate.truncation_budget


class TestTruncation:
    def test_budget_decreases_in_M(self, params_r2):
        budgets = [CascadeService.truncation_budget(params_r2, M) for M in (4, 16, 64, 256)]
        assert all(a >= b for a, b in zip(budgets, budgets[1:]))
        assert 0.0 <= budgets[-1] <= 1.0

    def test_untracked_fraction_formula(self):
        from scipy.special import zeta as riemann_zeta
        expected = 10 ** (1 - 2.0) / (2.0 - 1.0) / riemann_zeta(2.0)
        assert CascadeService.level_untracked_fraction(0.5, 10) == pytest.approx(expected)

    def test_choose_branching(self, params_r1):
        M = CascadeService.choose_branching(params_r1, 0.05)
        assert CascadeService.truncation_budget(params_r1, M) <= 0.05
        assert CascadeService.truncation_budget(params_r1, M - 1) > 0.05 or M == 2

    def test_choose_branching_unreachable(self):
        params = CascadeParams(r=2, zetas=(0.9, 0.95))
        assert CascadeService.choose_branching(params, 1e-9, max_leaves=100) == 10

    def test_resolve_branching(self, params_r1, monkeypatch):
        assert CascadeService.resolve_branching(params_r1, 7) == 7
        monkeypatch.setenv("RPC_TRUNCATION_BUDGET", "0.05")
        # 2 / (zeta(2) M) <= 0.05 first holds at M = 25
        assert CascadeService.resolve_branching(params_r1) == 25
        assert CascadeService.resolve_branching(params_r1, budget=0.1) == 13

    def test_empirical_budget_in_range(self, params_r2, rng):
        cascade = CascadeService.build_cascade(params_r2, 8, rng)
        assert 0.0 <= CascadeService.empirical_truncation_budget(cascade) <= 1.0


class TestDumpLoad:
    def test_dump_and_load(self, params_r2, rng):
        cascade = CascadeService.build_cascade(params_r2, 3, rng)
        record = CascadeService.dump_cascade(cascade)
        assert "0.0" in record["log_weights"] and "2.2" in record["log_weights"]
        loaded = CascadeService.load_cascade(record)
        assert np.allclose(loaded.leaf_weights, cascade.leaf_weights)
        assert np.array_equal(loaded.sort_map, cascade.sort_map)
        for p in range(3):
            assert np.array_equal(loaded.level_maps[p], cascade.level_maps[p])


class TestSampleLeaf:
    def test_degenerate_cascade(self, params_r1, rng):
        cascade = CascadeService.build_cascade(params_r1, 1, rng)
        assert CascadeService.sample_leaf(cascade, rng) == VertexPath.of(1)

    def test_indices_in_range(self, params_r2, rng):
        cascade = CascadeService.build_cascade(params_r2, 3, rng)
        draws = CascadeService.sample_leaf_indices(cascade, rng, 500)
        assert draws.min() >= 0 and draws.max() < 9
        assert not math.isnan(draws.mean())

    def test_wedge_frequencies_match_pair_masses(self, params_r2):
        cascade = CascadeService.build_cascade(params_r2, 4, stream(17, "wedge-cascade"))
        paths = [cascade.leaf_path(j) for j in range(cascade.n_leaves)]
        V = cascade.sorted_weights
        exact = np.zeros(3)
        for a in range(cascade.n_leaves):
            for b in range(cascade.n_leaves):
                exact[CascadeService.wedge(paths[a], paths[b])] += V[a] * V[b]
        assert np.allclose(exact, CascadeService.pair_overlap_masses(cascade), atol=1e-12)

        rng = stream(17, "wedge-draws")
        n_pairs = 5000
        draw = partial(CascadeService.sample_leaf, cascade, rng)
        wedges = [CascadeService.wedge(draw(), draw()) for _ in range(n_pairs)]
        freq = np.bincount(wedges, minlength=3) / n_pairs
        se = np.sqrt(exact * (1.0 - exact) / n_pairs)
        assert np.all(np.abs(freq - exact) <= 4 * se + 1e-9)
