import math
from functools import partial
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp, zeta as riemann_zeta

from engine.dependencies.logging import logger
from engine.schemas.base_schemas import FunctionalEstimate, Estimate
from engine.schemas.cascade_schemas import (
    CascadeParams, TruncatedCascade, VertexPath,
)
from engine.utils.config_util import load_config
from engine.utils.error_util import ErrorHandling
from engine.utils.pool_util import parallel_map
from engine.utils.rng_util import stream
from engine.utils.stats_util import mean_and_se, bernoulli_se

PathLike = Union[VertexPath, Sequence[int]]


def _indices(path: PathLike) -> tuple:
    return path.indices if isinstance(path, VertexPath) else tuple(path)


class CascadeService:
    """
    Construction and inspection of truncated Ruelle probability cascades.

    Methods:
        wedge: depth of the lowest common ancestor of two vertices
        sample_poisson_points: top-M points of the Poisson process with mean measure zeta x^(-1-zeta) dx
        build_cascade: weights, cluster weights and the sorting bijection
        sample_leaf: draw a pure state with probability V_alpha
        pair_overlap_masses: law of the overlap level of two replicas given a cascade
        overlap_cdf_check: ensemble estimate of P(alpha ^ beta <= p)
        truncation_budget: expected untracked mass of an M-ary truncation
    """

    @staticmethod
    def wedge(a: PathLike, b: PathLike) -> int:
        """Number of common vertices of the two root paths, not counting the root"""
        common = 0
        for x, y in zip(_indices(a), _indices(b)):
            if x != y:
                break
            common += 1
        return common

    @staticmethod
    def points_from_arrivals(arrivals: np.ndarray, zeta: float) -> np.ndarray:
        """Map arrival times Gamma_n of a unit-rate process to u_n = Gamma_n^(-1/zeta)"""
        CascadeService._check_zeta(zeta)
        return np.power(np.asarray(arrivals, dtype=float), -1.0 / zeta)

    @staticmethod
    def sample_log_poisson_points(zeta: float, M: int, rng: np.random.Generator,
                                  size: Optional[int] = None) -> np.ndarray:
        """
        log u_1 > ... > log u_M for the M largest points, one row per process.

        Returns:
            Array of shape (M,) or (size, M)
        """
        CascadeService._check_zeta(zeta)
        if M < 1:
            raise ErrorHandling.invalid_parameter(f"M must be >= 1, got {M}")
        shape = (M,) if size is None else (size, M)
        arrivals = np.cumsum(rng.standard_exponential(shape), axis=-1)
        return -np.log(arrivals) / zeta

    @staticmethod
    def sample_poisson_points(zeta: float, M: int, rng: np.random.Generator,
                              size: Optional[int] = None) -> np.ndarray:
        return np.exp(CascadeService.sample_log_poisson_points(zeta, M, rng, size))

    @staticmethod
    def build_cascade(params: CascadeParams, M: int, rng: np.random.Generator) -> TruncatedCascade:
        """
        Build a truncated cascade.

        Leaf log-weights are sums of log-points along the path, normalized with a
        max-shifted exponential sum. Cluster weights are summed bottom-up so that
        v_alpha = sum_n v_{alpha n} holds exactly. The sorting bijection orders
        the children of every vertex by decreasing cluster weight, ties broken
        by original child index.
        """
        if M < 1:
            raise ErrorHandling.invalid_parameter(f"M must be >= 1, got {M}")
        r = params.r

        log_points = []
        log_w = np.zeros(1)
        for p in range(r):
            lp = CascadeService.sample_log_poisson_points(params.zetas[p], M, rng, size=M ** p)
            log_points.append(lp)
            log_w = (log_w[:, None] + lp).reshape(-1)

        log_v = log_w - logsumexp(log_w)
        if not np.all(np.isfinite(log_v)):
            raise ErrorHandling.numerical_failure("build_cascade", "non-finite leaf log-weight")
        v = np.exp(log_v)

        cluster = [None] * (r + 1)
        log_cluster = [None] * (r + 1)
        cluster[r] = v
        log_cluster[r] = log_v
        for p in range(r - 1, -1, -1):
            cluster[p] = cluster[p + 1].reshape(M ** p, M).sum(axis=1)
            log_cluster[p] = logsumexp(log_cluster[p + 1].reshape(M ** p, M), axis=1)

        level_maps = CascadeService._sorting_maps(log_cluster, M, r)
        sort_map = level_maps[r]
        return TruncatedCascade(
            params=params,
            M=M,
            log_points=log_points,
            log_leaf_weights=log_v,
            leaf_weights=v,
            cluster_weights=cluster,
            level_maps=level_maps,
            sort_map=sort_map,
            sorted_weights=v[sort_map],
        )

    @staticmethod
    def _sorting_maps(log_cluster: List[np.ndarray], M: int, r: int) -> List[np.ndarray]:
        """Sorted label -> original vertex, per depth, built from the root down"""
        original = np.zeros(1, dtype=np.int64)
        maps = [original]
        offsets = np.arange(M, dtype=np.int64)
        for p in range(r):
            children = original[:, None] * M + offsets
            keys = log_cluster[p + 1][children]
            order = np.argsort(-keys, axis=1, kind="stable")
            original = np.take_along_axis(children, order, axis=1).reshape(-1)
            maps.append(original)
        return maps

    @staticmethod
    def resort(log_leaf_weights: np.ndarray, M: int, r: int) -> List[np.ndarray]:
        """Sorting maps for arbitrary leaf log-weights on the M-ary tree"""
        log_cluster = [None] * (r + 1)
        log_cluster[r] = np.asarray(log_leaf_weights, dtype=float)
        for p in range(r - 1, -1, -1):
            log_cluster[p] = logsumexp(log_cluster[p + 1].reshape(M ** p, M), axis=1)
        return CascadeService._sorting_maps(log_cluster, M, r)

    @staticmethod
    def validate_cascade(cascade: TruncatedCascade, tol: float = 1e-10) -> None:
        """Raise when normalization, consistency or child ordering fails"""
        M, r = cascade.M, cascade.r
        for name, weights in (("v", cascade.leaf_weights), ("V", cascade.sorted_weights)):
            if abs(float(weights.sum()) - 1.0) > tol:
                raise ErrorHandling.numerical_failure("build_cascade", f"sum of {name} is {weights.sum()!r}")
        for p in range(r):
            children_sum = cascade.cluster_weights[p + 1].reshape(M ** p, M).sum(axis=1)
            if not np.array_equal(children_sum, cascade.cluster_weights[p]):
                raise ErrorHandling.numerical_failure("build_cascade", f"cluster weights inconsistent at depth {p}")
            sorted_children = cascade.sorted_cluster_weights(p + 1).reshape(M ** p, M)
            if np.any(np.diff(sorted_children, axis=1) > tol):
                raise ErrorHandling.numerical_failure("build_cascade", f"children not sorted at depth {p}")

    @staticmethod
    def verify_sort_map(cascade: TruncatedCascade, rng: np.random.Generator, n_pairs: int = 64) -> bool:
        """Check on random leaf pairs that the sort map preserves wedge values"""
        n = cascade.n_leaves
        a = rng.integers(0, n, size=n_pairs)
        b = rng.integers(0, n, size=n_pairs)
        for x, y in zip(a, b):
            sorted_wedge = CascadeService.wedge(cascade.leaf_path(x), cascade.leaf_path(y))
            original_wedge = CascadeService.wedge(cascade.leaf_path(cascade.sort_map[x]),
                                                  cascade.leaf_path(cascade.sort_map[y]))
            if sorted_wedge != original_wedge:
                return False
        return True

    @staticmethod
    def sample_leaf_indices(cascade: TruncatedCascade, rng: np.random.Generator, size: int,
                            use_sorted: bool = True) -> np.ndarray:
        """Flat leaf indices drawn by inverse CDF over V (or v)"""
        weights = cascade.sorted_weights if use_sorted else cascade.leaf_weights
        cdf = np.cumsum(weights)
        u = rng.random(size) * cdf[-1]
        return np.minimum(np.searchsorted(cdf, u, side="right"), cascade.n_leaves - 1)

    @staticmethod
    def sample_leaf(cascade: TruncatedCascade, rng: np.random.Generator, use_sorted: bool = True) -> VertexPath:
        flat = CascadeService.sample_leaf_indices(cascade, rng, 1, use_sorted)[0]
        return cascade.leaf_path(int(flat))

    @staticmethod
    def pair_overlap_masses(cascade: TruncatedCascade) -> np.ndarray:
        """
        Sum of V_alpha V_beta over leaf pairs with alpha ^ beta = p, for p = 0..r.
        """
        r = cascade.r
        cdf = np.empty(r + 1)
        for p in range(r):
            cdf[p] = 1.0 - float(np.sum(cascade.cluster_weights[p + 1] ** 2))
        cdf[r] = 1.0
        return np.diff(cdf, prepend=0.0)

    @staticmethod
    def overlap_values(params: CascadeParams) -> np.ndarray:
        """q_p for the overlap levels p = 0..r"""
        if params.overlaps is None:
            raise ErrorHandling.invalid_parameter("the cascade has no overlap ladder")
        return np.asarray(params.overlaps, dtype=float)

    @staticmethod
    def overlap_cdf_value(cascade: TruncatedCascade, p: int) -> float:
        """sum over alpha ^ beta <= p of V_alpha V_beta for one cascade"""
        if p >= cascade.r:
            return 1.0
        return 1.0 - float(np.sum(cascade.cluster_weights[p + 1] ** 2))

    @staticmethod
    def overlap_cdf_check(ensemble: Sequence[TruncatedCascade], p: int) -> FunctionalEstimate:
        """Ensemble estimate of E sum_{alpha ^ beta <= p} V_alpha V_beta; target zeta_p"""
        if not ensemble:
            raise ErrorHandling.invalid_parameter("overlap_cdf_check needs at least one cascade")
        params = ensemble[0].params
        values = [CascadeService.overlap_cdf_value(c, p) for c in ensemble]
        if p >= params.r:
            value, se = 1.0, 0.0
        else:
            value, se = mean_and_se(values)
        return FunctionalEstimate(
            value=value, std_error=se, n=len(values), M=ensemble[0].M,
            truncation_budget=CascadeService.truncation_budget(params, ensemble[0].M),
            extra={"level": p, "target": params.zeta_at(p)},
        )

    @staticmethod
    def overlap_law(params: CascadeParams, M: int, p: int, n_cascades: int, seed: int,
                    workers: Optional[int] = None) -> FunctionalEstimate:
        """Streaming version of overlap_cdf_check: cascades are built per replicate and dropped"""
        logger.info(f"overlap_law r={params.r} M={M} p={p} n={n_cascades} seed={seed}")
        if p >= params.r:
            return FunctionalEstimate(value=1.0, std_error=0.0, n=n_cascades, M=M, seed=seed,
                                      extra={"level": p, "target": 1.0})
        values = parallel_map(partial(_overlap_replicate, params, M, p, seed), range(n_cascades), workers)
        value, se = mean_and_se(values)
        return FunctionalEstimate(
            value=value, std_error=se, n=n_cascades, M=M, seed=seed,
            truncation_budget=CascadeService.truncation_budget(params, M),
            extra={"level": p, "target": params.zeta_at(p)},
        )

    @staticmethod
    def point_count_above(zeta: float, M: int, x: float, n_draws: int, seed: int) -> Estimate:
        """Mean number of top-M points above x; the untruncated law gives x^(-zeta)"""
        rng = stream(seed, "poisson-points", int(round(1000 * zeta)), int(round(1000 * x)))
        log_points = CascadeService.sample_log_poisson_points(zeta, M, rng, size=n_draws)
        counts = np.sum(log_points > math.log(x), axis=1)
        value, se = mean_and_se(counts)
        return Estimate(value=value, std_error=se, n=n_draws)

    @staticmethod
    def level_untracked_fraction(zeta: float, M: int) -> float:
        """Typical share of the mass of one Poisson process beyond its M-th point"""
        exponent = 1.0 / zeta
        tail = M ** (1.0 - exponent) / (exponent - 1.0)
        return float(min(1.0, tail / riemann_zeta(exponent)))

    @staticmethod
    def truncation_budget(params: CascadeParams, M: int) -> float:
        """
        Allowed bias of pair-weight statistics from the M-ary truncation.

        Twice the summed per-level untracked mass: renormalizing over the
        tracked leaves moves a sum of squared weights by at most that much.
        """
        untracked = sum(CascadeService.level_untracked_fraction(z, M) for z in params.zetas)
        return float(min(1.0, 2.0 * untracked))

    @staticmethod
    def empirical_truncation_budget(cascade: TruncatedCascade) -> float:
        """Same quantity estimated by extrapolating the power-law tail of each vertex's points"""
        M = cascade.M
        total = 0.0
        for p, lp in enumerate(cascade.log_points):
            zeta = cascade.params.zetas[p]
            log_tail = lp[:, -1] + math.log(M * zeta / (1.0 - zeta))
            fraction = np.exp(log_tail - logsumexp(lp, axis=1))
            total += float(np.sum(cascade.cluster_weights[p] * np.minimum(fraction, 1.0)))
        return float(min(1.0, 2.0 * total))

    @staticmethod
    def choose_branching(params: CascadeParams, budget: Optional[float] = None,
                         max_leaves: Optional[int] = None) -> int:
        """
        Smallest M whose truncation budget is below `budget`, subject to
        M^r <= max_leaves. Both default to RPC_TRUNCATION_BUDGET and RPC_MAX_LEAVES.
        """
        env = load_config()
        budget = env.truncation_budget() if budget is None else budget
        max_leaves = env.max_leaves() if max_leaves is None else max_leaves
        largest = max(2, int(math.floor(max_leaves ** (1.0 / params.r) + 1e-9)))
        for M in range(2, largest + 1):
            if CascadeService.truncation_budget(params, M) <= budget:
                return M
        logger.warning(
            f"Truncation budget {budget} unreachable under {max_leaves} leaves; "
            f"using M={largest} with budget {CascadeService.truncation_budget(params, largest):.4g}"
        )
        return largest

    @staticmethod
    def resolve_branching(params: CascadeParams, M: Optional[int] = None, budget: Optional[float] = None,
                          max_leaves: Optional[int] = None) -> int:
        """An explicit M, else the adaptive choice"""
        if M is not None:
            return M
        M = CascadeService.choose_branching(params, budget, max_leaves)
        logger.debug(f"branching r={params.r} zetas={params.zetas} -> M={M}")
        return M

    @staticmethod
    def dump_cascade(cascade: TruncatedCascade) -> dict:
        """JSON record: leaf indices as base-M digit strings"""
        M = cascade.M
        keys = [cascade.leaf_path(j).to_digits() for j in range(cascade.n_leaves)]
        return {
            "params": cascade.params.model_dump(mode="json"),
            "M": M,
            "log_weights": {k: float(w) for k, w in zip(keys, cascade.log_leaf_weights)},
            "sort_map": {keys[j]: keys[int(o)] for j, o in enumerate(cascade.sort_map)},
        }

    @staticmethod
    def load_cascade(record: dict) -> TruncatedCascade:
        """Rebuild a cascade from its dump; Poisson points are not part of the dump"""
        params = CascadeParams(**record["params"])
        M, r = int(record["M"]), params.r

        def flat_of(key: str) -> int:
            flat = 0
            for d in (key.split(".") if key else []):
                flat = flat * M + int(d)
            return flat

        log_v = np.empty(M ** r)
        for key, w in record["log_weights"].items():
            log_v[flat_of(key)] = w
        sort_map = np.empty(M ** r, dtype=np.int64)
        for key, original in record["sort_map"].items():
            sort_map[flat_of(key)] = flat_of(original)

        v = np.exp(log_v)
        cluster = [None] * (r + 1)
        cluster[r] = v
        for p in range(r - 1, -1, -1):
            cluster[p] = cluster[p + 1].reshape(M ** p, M).sum(axis=1)
        level_maps = [sort_map[np.arange(M ** p) * M ** (r - p)] // M ** (r - p) for p in range(r)]
        level_maps.append(sort_map)
        return TruncatedCascade(
            params=params, M=M, log_points=[], log_leaf_weights=log_v, leaf_weights=v,
            cluster_weights=cluster, level_maps=level_maps, sort_map=sort_map,
            sorted_weights=v[sort_map],
        )

    @staticmethod
    def _check_zeta(zeta: float) -> None:
        if not (0.0 < zeta < 1.0):
            raise ErrorHandling.invalid_parameter(f"zeta must lie in (0, 1), got {zeta}")

    @staticmethod
    def leaf_frequency_check(cascade: TruncatedCascade, n_draws: int, seed: int) -> np.ndarray:
        """z-scores of empirical leaf frequencies against V"""
        rng = stream(seed, "leaf-frequency")
        draws = CascadeService.sample_leaf_indices(cascade, rng, n_draws)
        freq = np.bincount(draws, minlength=cascade.n_leaves) / n_draws
        se = np.array([bernoulli_se(p, n_draws) for p in cascade.sorted_weights])
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, (freq - cascade.sorted_weights) / se, 0.0)
        return z


def _overlap_replicate(params: CascadeParams, M: int, p: int, seed: int, index: int) -> float:
    cascade = CascadeService.build_cascade(params, M, stream(seed, "overlap-law", index))
    return CascadeService.overlap_cdf_value(cascade, p)
