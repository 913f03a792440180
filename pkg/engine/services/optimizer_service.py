import math
from functools import partial
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.special import softmax

from engine.dependencies.logging import logger
from engine.schemas.cascade_schemas import CascadeParams
from engine.schemas.clause_schemas import DilutedModel, KSpinModel
from engine.schemas.field_schemas import OrderParamH
from engine.schemas.search_schemas import SearchPoint, SearchResult, SearchSpec, TraceEntry
from engine.services.cascade_service import CascadeService
from engine.services.functional_service import FunctionalService
from engine.services.system_service import SystemService
from engine.utils.error_util import ErrorHandling, NumericalError
from engine.utils.json_utils import stable_hash
from engine.utils.pool_util import parallel_map
from engine.utils.rng_util import stream

MIN_INCREMENT = 1e-6
SIMPLEX_STEP = 0.5


class OptimizerService:
    """
    Derivative-free minimization of the Monte Carlo functional over (zeta, h)
    at fixed depth, and the comparison with finite-N free energies.

    Parameter vector: r + 1 logits followed by the G^r raw h values. The logits
    map to zetas through cumulative softmax increments, the raw values are
    clipped to [-1, 1], so every evaluated point is feasible.
    """

    @staticmethod
    def zetas_from_logits(logits: np.ndarray) -> Tuple[float, ...]:
        increments = np.maximum(softmax(np.asarray(logits, dtype=float)), MIN_INCREMENT)
        increments = increments / increments.sum()
        return tuple(float(z) for z in np.cumsum(increments)[:-1])

    @staticmethod
    def logits_from_zetas(zetas: Sequence[float]) -> np.ndarray:
        increments = np.diff(np.concatenate([[0.0], np.asarray(zetas, dtype=float), [1.0]]))
        return np.log(increments)

    @staticmethod
    def decode(x: np.ndarray, spec: SearchSpec) -> Tuple[CascadeParams, OrderParamH]:
        x = np.asarray(x, dtype=float)
        zetas = OptimizerService.zetas_from_logits(x[:spec.r + 1])
        values = np.clip(x[spec.r + 1:], -1.0, 1.0)
        return (CascadeParams(r=spec.r, zetas=zetas),
                OrderParamH(r=spec.r, G=spec.G, values=values.reshape((spec.G,) * spec.r)))

    @staticmethod
    def encode(zetas: Sequence[float], h_values: Sequence[float]) -> np.ndarray:
        return np.concatenate([OptimizerService.logits_from_zetas(zetas), np.asarray(h_values, dtype=float).ravel()])

    @staticmethod
    def embed_point(point: SearchPoint, G: Optional[int] = None) -> SearchPoint:
        """
        The same functional order parameter written at depth r + 1.

        A new last level with zeta_r = (zeta_{r-1} + 1) / 2 is appended and h
        ignores the new coordinate: the level-r cluster weights of the deeper
        cascade have the law of the shallower one, so the functional value is unchanged.
        A different grid resolution G must be a multiple of the current one.
        """
        G_new = point.G if G is None else G
        if G_new % point.G:
            raise ErrorHandling.invalid_parameter(f"cannot refine a grid of {point.G} cells into {G_new}")
        values = np.asarray(point.h_values, dtype=float).reshape((point.G,) * point.r)
        for axis in range(point.r):
            values = np.repeat(values, G_new // point.G, axis=axis)
        values = np.repeat(values[..., None], G_new, axis=-1)
        zetas = tuple(point.zetas) + ((point.zetas[-1] + 1.0) / 2.0,)
        return point.model_copy(update={"r": point.r + 1, "G": G_new, "zetas": zetas,
                                        "h_values": tuple(float(v) for v in values.ravel())})

    @staticmethod
    def stage_seed(seed: int, start: int, stage: int) -> int:
        return int(stream(seed, "search-stage", start, stage).integers(0, 2 ** 31 - 1))

    @staticmethod
    def initial_point(spec: SearchSpec, start: int, warm: Optional[SearchPoint] = None) -> np.ndarray:
        if start == 0:
            if warm is not None:
                return OptimizerService.encode(warm.zetas, warm.h_values)
            return np.zeros(spec.n_parameters)
        rng = stream(spec.seed, "search-start", start)
        return np.concatenate([rng.normal(size=spec.r + 1), rng.uniform(-1.0, 1.0, size=spec.G ** spec.r)])

    @staticmethod
    def evaluate(x: np.ndarray, spec: SearchSpec, model: DilutedModel, n_samples: int, seed: int) -> SearchPoint:
        params, h = OptimizerService.decode(x, spec)
        M = CascadeService.resolve_branching(params, spec.M, spec.truncation_budget, spec.max_leaves)
        estimate = FunctionalService.estimate_P(params, h, model, M, n_samples, seed, workers=1)
        return SearchPoint(r=spec.r, G=spec.G, zetas=params.zetas,
                           h_values=tuple(float(v) for v in h.values.ravel()),
                           value=estimate.value, std_error=estimate.std_error, n_samples=n_samples, seed=seed, M=M)

    @staticmethod
    def run_start(spec: SearchSpec, model: DilutedModel, start: int,
                  warm: Optional[SearchPoint] = None) -> Tuple[Optional[SearchPoint], List[TraceEntry]]:
        """
        One start: a Nelder-Mead stage per budget, the objective made
        deterministic inside a stage by a fixed seed. A non-finite objective
        aborts the start.
        """
        x = OptimizerService.initial_point(spec, start, warm)
        trace: List[TraceEntry] = []
        best = None
        try:
            for stage, budget in enumerate(spec.budgets):
                seed = OptimizerService.stage_seed(spec.seed, start, stage)

                def objective(y: np.ndarray) -> float:
                    point = OptimizerService.evaluate(y, spec, model, budget, seed)
                    trace.append(TraceEntry(
                        start=start, stage=stage, evaluation=len(trace),
                        params_hash=stable_hash([point.zetas, point.h_values]),
                        value=point.value, std_error=point.std_error, n_samples=budget,
                    ))
                    return point.value

                simplex = np.vstack([x, x + SIMPLEX_STEP * np.eye(x.size)])
                result = minimize(objective, x, method="Nelder-Mead",
                                  options={"maxiter": spec.max_iter, "xatol": spec.xatol,
                                           "fatol": spec.fatol, "initial_simplex": simplex})
                x = result.x
                best = OptimizerService.evaluate(x, spec, model, budget, seed)
                logger.debug(f"search r={spec.r} start={start} stage={stage} budget={budget} "
                             f"value={best.value:.6f} se={best.std_error:.2e} nfev={result.nfev}")
        except NumericalError:
            logger.error(f"search r={spec.r} start={start} aborted on a non-finite objective", exc_info=True)
            return None, trace
        return best, trace

    @staticmethod
    def minimize_P(spec: SearchSpec, model: DilutedModel, warm: Optional[SearchPoint] = None,
                   workers: Optional[int] = None) -> SearchResult:
        """
        Multistart minimization at depth spec.r.

        The best start is re-evaluated with a fresh seed and reeval_factor times
        the last budget; a z-score above 3 against the reported value is logged.
        """
        logger.info(f"minimize_P r={spec.r} G={spec.G} M={spec.M or 'adaptive'} starts={spec.multistart} "
                    f"budgets={list(spec.budgets)} seed={spec.seed}")
        outcomes = parallel_map(partial(_search_start, spec, model, warm), range(spec.multistart), workers)
        trace = [entry for _, entries in outcomes for entry in entries]
        points = [point for point, _ in outcomes]
        feasible = [p for p in points if p is not None]
        if not feasible:
            raise ErrorHandling.numerical_failure("minimize_P", "every start hit a non-finite objective")
        best = min(feasible, key=lambda p: p.value)

        reeval_seed = int(stream(spec.seed, "search-reeval", spec.r).integers(0, 2 ** 31 - 1))
        x = OptimizerService.encode(best.zetas, best.h_values)
        reeval = OptimizerService.evaluate(x, spec, model, spec.budgets[-1] * spec.reeval_factor, reeval_seed)
        se = math.hypot(best.std_error, reeval.std_error)
        gap = abs(best.value - reeval.value)
        reeval_z = 0.0 if gap == 0.0 else (gap / se if se > 0.0 else math.inf)
        if reeval_z > 3.0:
            logger.warning(f"minimize_P r={spec.r}: re-evaluation differs by {reeval_z:.2f} SE")
        return SearchResult(
            r=spec.r, best=best, reeval=reeval, reeval_z=reeval_z,
            start_values=[p.value if p is not None else None for p in points],
            trace=trace, n_failed_starts=len(points) - len(feasible),
        )

    @staticmethod
    def minimize_over_depths(spec: SearchSpec, model: DilutedModel, depths: Sequence[int] = (1, 2),
                             workers: Optional[int] = None) -> List[SearchResult]:
        """Per-depth minima, each depth warm-started from the embedded best point of the previous one"""
        results: List[SearchResult] = []
        warm = None
        for r in sorted(depths):
            if warm is not None and warm.r != r:
                while warm.r < r:
                    warm = OptimizerService.embed_point(warm)
                if warm.r != r:
                    warm = None
            result = OptimizerService.minimize_P(spec.model_copy(update={"r": r}), model, warm, workers)
            results.append(result)
            warm = result.best
        return results

    @staticmethod
    def running_minimum(results: Sequence[SearchResult]) -> pd.DataFrame:
        rows = []
        best_value, best_se, best_r = math.inf, 0.0, None
        for result in results:
            if result.value < best_value:
                best_value, best_se, best_r = result.value, result.std_error, result.r
            rows.append({"r": result.r, "value": result.value, "std_error": result.std_error,
                         "running_min": best_value, "running_min_std_error": best_se, "running_min_r": best_r})
        return pd.DataFrame(rows)

    @staticmethod
    def trace_frame(result: SearchResult) -> pd.DataFrame:
        return pd.DataFrame([entry.model_dump() for entry in result.trace])

    @staticmethod
    def fl_validity(model: DilutedModel) -> bool:
        """The upper bound is established for K-sat at every K and for K-spin at even K"""
        return not (isinstance(model.clause, KSpinModel) and model.K % 2 == 1)

    @staticmethod
    def fl_gap_report(model: DilutedModel, N_list: Sequence[int], spec: SearchSpec, n_instances: int,
                      depths: Sequence[int] = (1,), method: str = "exact", workers: Optional[int] = None,
                      results: Optional[Sequence[SearchResult]] = None) -> pd.DataFrame:
        """
        Disorder-averaged finite-N free energies against the minimized functional.
        gap = P_min - F_N, so the upper bound reads gap >= 0 up to noise.
        """
        valid = OptimizerService.fl_validity(model)
        if not valid:
            logger.warning(f"fl-compare: the upper bound is not established for K-spin with odd K={model.K}")
        if results is None:
            results = OptimizerService.minimize_over_depths(spec, model, depths, workers)
        best = min(results, key=lambda res: res.value)
        rows = []
        for N in N_list:
            fe = SystemService.disorder_averaged_free_energy(N, model, n_instances, spec.seed, method, workers)
            gap = best.value - fe.value
            gap_se = math.hypot(best.std_error, fe.std_error)
            rows.append({
                "N": N,
                "free_energy": fe.value,
                "free_energy_std_error": fe.std_error,
                "functional_min": best.value,
                "functional_std_error": best.std_error,
                "r": best.r,
                "gap": gap,
                "gap_std_error": gap_se,
                "gap_z": gap / gap_se if gap_se > 0.0 else 0.0,
                "valid": valid,
            })
        return pd.DataFrame(rows)


def _search_start(spec: SearchSpec, model: DilutedModel, warm: Optional[SearchPoint],
                  start: int) -> Tuple[Optional[SearchPoint], List[TraceEntry]]:
    return OptimizerService.run_start(spec, model, start, warm)
