import math
from functools import partial
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from engine.dependencies.logging import logger
from engine.schemas.base_schemas import FunctionalEstimate
from engine.schemas.cascade_schemas import CascadeParams, TruncatedCascade, prefix_index
from engine.schemas.functional_schemas import (
    InvarianceReport, RecursionResult, RecursionSpec, TiltResult,
)
from engine.services.cascade_service import CascadeService
from engine.utils.error_util import ErrorHandling
from engine.utils.pool_util import parallel_map
from engine.utils.rng_util import stream
from engine.utils.stats_util import (
    correlation_and_se, log_mean_exp, mean_and_se, z_against,
)

TOP_WEIGHTS = 5


class RpcRecursion:
    """
    X_p(x) = (1/zeta_p) log E_z exp(zeta_p X_{p+1}(x, z)), with X_r the terminal function.

    Expectations over z use a fixed rule (Gauss nodes, the exact atoms of a
    discrete law, or an equal-weight Monte Carlo sample when spec.method is "mc").
    """

    def __init__(self, spec: RecursionSpec, n_nodes: Optional[int] = None, seed: int = 0):
        self.spec = spec
        if spec.method == "mc":
            # n_mc is the size of the full r-level grid
            per_level = max(16, int(round(spec.n_mc ** (1.0 / spec.r))))
            rng = stream(seed, "recursion-nodes", per_level)
            self.nodes = spec.z.sample(rng, per_level)
            self.log_node_weights = np.full(per_level, -math.log(per_level))
        else:
            nodes, weights = spec.z.nodes(n_nodes or spec.n_nodes)
            self.nodes = nodes
            with np.errstate(divide="ignore"):
                self.log_node_weights = np.log(weights)

    def reduce(self, p: int, x_next: np.ndarray) -> np.ndarray:
        """One recursion step over the last axis of x_next, which runs over the nodes"""
        zeta = self.spec.zetas[p]
        shift = np.max(x_next, axis=-1, keepdims=True)
        return np.squeeze(shift, axis=-1) + log_mean_exp(self.log_node_weights, zeta * (x_next - shift)) / zeta

    def value(self, p: int, x: np.ndarray) -> np.ndarray:
        """
        X_p at a batch of prefixes.

        Args:
            p: Level, 0 <= p <= r
            x: Path variables z_1..z_p, shape (batch, p)

        Returns:
            Array of shape (batch,)
        """
        r = self.spec.r
        x = np.atleast_2d(np.asarray(x, dtype=float))
        batch = x.shape[0]
        free = r - p
        n = self.nodes.size
        z = np.empty((batch,) + (n,) * free + (r,))
        z[..., :p] = x.reshape((batch,) + (1,) * free + (p,))
        for j in range(free):
            shape = [1] * (free + 1)
            shape[j + 1] = n
            z[..., p + j] = self.nodes.reshape(shape)
        values = self.spec.terminal.evaluate(z)
        for level in range(r - 1, p - 1, -1):
            values = self.reduce(level, values)
        return values

    def x0(self) -> float:
        return float(self.value(0, np.zeros((1, 0)))[0])

    def sample_nu(self, p: int, x: np.ndarray, rng: np.random.Generator) -> float:
        """
        One draw from nu_p(x, .): z with density W_p(x, z) = exp zeta_p (X_{p+1}(x, z) - X_p(x))
        against the law of z, by rejection from the law of z.
        """
        zeta = self.spec.zetas[p]
        x = np.asarray(x, dtype=float).reshape(1, p)
        x_p = float(self.value(p, x)[0])
        log_ceiling = zeta * (self.spec.bound - x_p)
        for _ in range(100000):
            z = float(self.spec.z.sample(rng, 1)[0])
            x_next = float(self.value(p + 1, np.append(x, [[z]], axis=1))[0])
            if math.log(rng.random()) <= zeta * (x_next - x_p) - log_ceiling:
                return z
        raise ErrorHandling.numerical_failure("sample_nu", "rejection sampler did not accept")


class RecursionService:
    """
    The cascade recursion X_p and the properties of cascades tilted by exp X_r.

    Methods:
        rpc_recursion: X_0 with an error estimate
        rpc_average_identity_check: E log sum v exp X_r - X_0 over cascades
        tilt_and_resort: tilted weights, re-sorted, with the applied bijection
        invariance_test: tilted-resorted cascades against plain ones
    """

    @staticmethod
    def rpc_recursion(spec: RecursionSpec, seed: int = 0) -> Tuple[RecursionResult, RpcRecursion]:
        recursion = RpcRecursion(spec, seed=seed)
        x0 = recursion.x0()
        if not math.isfinite(x0):
            raise ErrorHandling.numerical_failure("rpc_recursion", f"X_0 is {x0}")
        if spec.terminal.is_constant():
            error = 0.0
        elif spec.method == "mc":
            batches = [RpcRecursion(spec, seed=seed + 1 + b).x0() for b in range(8)]
            error = float(np.std(batches, ddof=1))
        elif spec.z.kind == "discrete":
            error = 0.0
        else:
            coarse = RpcRecursion(spec, n_nodes=max(2, spec.n_nodes // 2)).x0()
            error = abs(x0 - coarse)
        return RecursionResult(x0=x0, error=error, bound=spec.bound, method=spec.method), recursion

    @staticmethod
    def sample_vertex_z(spec: RecursionSpec, M: int, rng: np.random.Generator) -> List[np.ndarray]:
        """z for every vertex at depths 1..r, entry p - 1 of shape (M^p,)"""
        return [spec.z.sample(rng, M ** p) for p in range(1, spec.r + 1)]

    @staticmethod
    def leaf_terminal_values(spec: RecursionSpec, z_levels: List[np.ndarray], M: int) -> np.ndarray:
        """X_r at every leaf, reading the z of its ancestors"""
        r = spec.r
        paths = np.stack([z_levels[p - 1][prefix_index(M, r, p)] for p in range(1, r + 1)], axis=-1)
        return spec.terminal.evaluate(paths)

    @staticmethod
    def rpc_average_identity_check(spec: RecursionSpec, M: int, n_samples: int, seed: int,
                                   workers: Optional[int] = None) -> FunctionalEstimate:
        """
        Mean over independent cascades of log sum_alpha v_alpha exp X_r - X_0.

        Returns:
            FunctionalEstimate whose value is the residual; std_error combines the
            sampling error with the recursion error
        """
        result, _ = RecursionService.rpc_recursion(spec, seed=seed)
        logger.info(f"rpc_average_identity_check r={spec.r} M={M} n={n_samples} X_0={result.x0:.6f}")
        values = parallel_map(partial(_identity_replicate, spec, M, result.x0, seed), range(n_samples), workers)
        mean, se = mean_and_se(values)
        params = CascadeParams(r=spec.r, zetas=spec.zetas)
        return FunctionalEstimate(
            value=mean,
            std_error=math.hypot(se, result.error),
            n=n_samples,
            M=M,
            truncation_budget=CascadeService.truncation_budget(params, M),
            seed=seed,
            extra={"x0": result.x0, "recursion_error": result.error, "bound": result.bound},
        )

    @staticmethod
    def tilt_and_resort(cascade: TruncatedCascade, leaf_tilt: np.ndarray,
                        z_levels: Optional[List[np.ndarray]] = None) -> TiltResult:
        """
        V~ proportional to V exp X_r, then re-sorted by the descending-children rule.

        Args:
            cascade: Built cascade
            leaf_tilt: X_r per sorted leaf label, shape (M^r,)
            z_levels: z per sorted vertex at depths 1..r, carried through the re-sorting
        """
        M, r = cascade.M, cascade.r
        leaf_tilt = np.asarray(leaf_tilt, dtype=float)
        log_V = cascade.log_leaf_weights[cascade.sort_map]
        z_levels = z_levels or []
        if np.all(leaf_tilt == leaf_tilt[0]):
            maps = [np.arange(M ** p) for p in range(r + 1)]
            return TiltResult(
                tilted_weights=cascade.sorted_weights,
                log_tilted_weights=log_V,
                level_maps=maps,
                z_levels=list(z_levels),
                identity=True,
                wedge_preserved=True,
            )
        log_tilted = log_V + leaf_tilt
        log_tilted = log_tilted - logsumexp(log_tilted)
        maps = CascadeService.resort(log_tilted, M, r)
        log_resorted = log_tilted[maps[r]]
        preserved = RecursionService.preserves_parent_child(maps, M)
        if not preserved:
            raise ErrorHandling.numerical_failure("tilt_and_resort", "re-sorting broke the parent-child relation")
        return TiltResult(
            tilted_weights=np.exp(log_resorted),
            log_tilted_weights=log_resorted,
            level_maps=maps,
            z_levels=[z[maps[p + 1]] for p, z in enumerate(z_levels)],
            identity=all(np.array_equal(m, np.arange(m.size)) for m in maps),
            wedge_preserved=preserved,
        )

    @staticmethod
    def preserves_parent_child(maps: List[np.ndarray], M: int) -> bool:
        """Children of the vertex labeled j are mapped to children of the vertex maps[p][j]"""
        for p in range(len(maps) - 1):
            child = maps[p + 1]
            parent_of_label = np.arange(child.size) // M
            if not np.array_equal(child // M, maps[p][parent_of_label]):
                return False
        return True

    @staticmethod
    def sample_nu_chain(recursion: RpcRecursion, rng: np.random.Generator) -> np.ndarray:
        """z~_1, z~_11, ..., z~_{1...1}: one root-to-leaf path of the nu_p array"""
        path = np.zeros((1, 0))
        for p in range(recursion.spec.r):
            z = recursion.sample_nu(p, path, rng)
            path = np.append(path, [[z]], axis=1)
        return path[0]

    @staticmethod
    def invariance_test(spec: RecursionSpec, M: int, n_replicates: int, seed: int,
                        workers: Optional[int] = None) -> InvarianceReport:
        """
        Compare plain cascades with tilted and re-sorted ones.

        Statistics: means of the five largest weights, P(wedge <= p) for p < r,
        the first two moments of the re-sorted z on the path 1, 11, ... against
        draws of the nu_p chain, and the correlation between the largest tilted
        weight and the re-sorted z at vertex 1.
        """
        params = CascadeParams(r=spec.r, zetas=spec.zetas)
        recursion = RpcRecursion(spec, seed=seed)
        logger.info(f"invariance_test r={spec.r} M={M} n={n_replicates} seed={seed}")

        plain = np.array(parallel_map(partial(_plain_statistics, params, M, seed), range(n_replicates), workers))
        tilted = np.array(parallel_map(partial(_tilted_statistics, spec, M, seed), range(n_replicates), workers))
        chains = np.array([
            RecursionService.sample_nu_chain(recursion, stream(seed, "nu-chain", i)) for i in range(n_replicates)
        ])

        budget = CascadeService.truncation_budget(params, M)
        z_scores = {}
        for k in range(TOP_WEIGHTS):
            z_scores[f"top_weight_{k + 1}"] = _budgeted_z(plain[:, k], tilted[:, k], budget)
        for p in range(spec.r):
            col = TOP_WEIGHTS + p
            z_scores[f"overlap_cdf_{p}"] = _budgeted_z(plain[:, col], tilted[:, col], budget)
        z_start = TOP_WEIGHTS + spec.r
        for p in range(spec.r):
            label = "1" * (p + 1)
            resorted = tilted[:, z_start + p]
            z_scores[f"z_mean_{label}"] = _budgeted_z(resorted, chains[:, p], budget)
            z_scores[f"z_second_moment_{label}"] = _budgeted_z(resorted ** 2, chains[:, p] ** 2, budget)
        rho, rho_se = correlation_and_se(tilted[:, 0], tilted[:, z_start])
        z_scores["independence_top_weight_z_1"] = z_against(rho, rho_se, 0.0)
        return InvarianceReport(n_replicates=n_replicates, M=M, truncation_budget=budget, z_scores=z_scores)


def _budgeted_z(a: np.ndarray, b: np.ndarray, budget: float) -> float:
    mean_a, se_a = mean_and_se(a)
    mean_b, se_b = mean_and_se(b)
    return z_against(mean_a, math.hypot(se_a, se_b), mean_b, budget)


def _cascade_statistics(weights: np.ndarray, M: int, r: int) -> List[float]:
    top = np.sort(weights)[::-1][:TOP_WEIGHTS]
    top = np.pad(top, (0, max(0, TOP_WEIGHTS - top.size)))
    cdf = []
    for p in range(r):
        cluster = weights.reshape(M ** (p + 1), -1).sum(axis=1)
        cdf.append(1.0 - float(np.sum(cluster ** 2)))
    return list(top) + cdf


def _plain_statistics(params: CascadeParams, M: int, seed: int, index: int) -> List[float]:
    cascade = CascadeService.build_cascade(params, M, stream(seed, "invariance-plain", index))
    return _cascade_statistics(cascade.sorted_weights, M, params.r)


def _tilted_statistics(spec: RecursionSpec, M: int, seed: int, index: int) -> List[float]:
    rng = stream(seed, "invariance-tilted", index)
    params = CascadeParams(r=spec.r, zetas=spec.zetas)
    cascade = CascadeService.build_cascade(params, M, rng)
    z_levels = RecursionService.sample_vertex_z(spec, M, rng)
    tilt = RecursionService.leaf_terminal_values(spec, z_levels, M)
    result = RecursionService.tilt_and_resort(cascade, tilt, z_levels)
    stats = _cascade_statistics(result.tilted_weights, M, spec.r)
    return stats + [float(z[0]) for z in result.z_levels]


def _identity_replicate(spec: RecursionSpec, M: int, x0: float, seed: int, index: int) -> float:
    rng = stream(seed, "rpc-identity", index)
    params = CascadeParams(r=spec.r, zetas=spec.zetas)
    cascade = CascadeService.build_cascade(params, M, rng)
    z_levels = RecursionService.sample_vertex_z(spec, M, rng)
    tilt = RecursionService.leaf_terminal_values(spec, z_levels, M)
    return float(log_mean_exp(cascade.log_leaf_weights, tilt)) - x0
