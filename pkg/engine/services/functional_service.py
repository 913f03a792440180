from functools import partial
from typing import Callable, Optional

import numpy as np

from engine.clauses import BaseClause, build_clause
from engine.dependencies.logging import logger
from engine.schemas.base_schemas import FunctionalEstimate
from engine.schemas.cascade_schemas import CascadeParams
from engine.schemas.clause_schemas import DilutedModel
from engine.schemas.field_schemas import OrderParamH
from engine.schemas.functional_schemas import LeafTerms
from engine.services.cascade_service import CascadeService
from engine.services.field_service import FieldService
from engine.utils.error_util import ErrorHandling
from engine.utils.pool_util import parallel_map
from engine.utils.rng_util import stream
from engine.utils.stats_util import LOG2, log_av_exp, log_mean_exp, mean_and_se

# n_copies -> array (n_copies, n_leaves) of independent field copies
FieldSampler = Callable[[int], np.ndarray]


def clause_term_sum(clause: BaseClause, disorder: np.ndarray, fields: np.ndarray,
                    with_eps: bool) -> np.ndarray:
    """
    Sum over terms k of log exp theta_k(fields[k, 0], ..., fields[k, -1] [, eps]).

    Args:
        clause: Clause law
        disorder: Disorder of every term, shape (n_terms,) + disorder shape
        fields: Field copies, shape (n_terms, n_copies, n_leaves)
        with_eps: Append the cavity spin eps as last argument

    Returns:
        (n_leaves, 2) for eps = +1, -1 when with_eps, otherwise (n_leaves,)
    """
    n_terms, _, n_leaves = fields.shape
    if n_terms == 0:
        return np.zeros((n_leaves, 2)) if with_eps else np.zeros(n_leaves)
    x = np.moveaxis(fields, 1, -1)
    d = np.expand_dims(disorder, 1)
    if not with_eps:
        return clause.log_exp_theta(d, x).sum(axis=0)
    columns = []
    for eps in (1.0, -1.0):
        x_eps = np.concatenate([x, np.full(x.shape[:-1] + (1,), eps)], axis=-1)
        columns.append(clause.log_exp_theta(d, x_eps).sum(axis=0))
    return np.stack(columns, axis=-1)


class FunctionalService:
    """
    Monte Carlo evaluation of the Mezard-Parisi functional and of its version
    with perturbation terms.

    Methods:
        sample_A_alpha: per-leaf A_alpha(eps) of one disorder draw
        sample_B_alpha: per-leaf B_alpha of one disorder draw
        estimate_P: log 2 + E log sum v Av exp A - E log sum v exp B
        estimate_P_single_atom: the same functional without a cascade
        omega_star_infimum: infimum over the frozen w_* coordinate of an (r+2)-ary h
    """

    @staticmethod
    def poisson_count(rng: np.random.Generator, mean: float, cap: Optional[int] = None) -> int:
        n = int(rng.poisson(mean)) if mean > 0.0 else 0
        return n if cap is None else min(n, cap)

    @staticmethod
    def sample_A_terms(fields: FieldSampler, n_leaves: int, model: DilutedModel, rng: np.random.Generator,
                       with_perturbation: bool, poisson_cap: Optional[int] = None) -> LeafTerms:
        """A_alpha(eps) for eps = +1 (column 0) and eps = -1 (column 1)"""
        clause = build_clause(model.clause)
        K = model.K
        n = FunctionalService.poisson_count(rng, model.lam * K, poisson_cap)
        disorder = clause.sample_disorder(rng, n)
        total = clause_term_sum(clause, disorder, fields(n * (K - 1)).reshape(n, K - 1, n_leaves), True)
        n_pert = 0
        if with_perturbation:
            g1 = build_clause(model.pert_model(1)).sample_disorder(rng, 1)[0]
            total[:, 0] += g1
            for d in range(2, model.d_max + 1):
                pert = build_clause(model.pert_model(d))
                n_d = FunctionalService.poisson_count(rng, float(d), poisson_cap)
                disorder = pert.sample_disorder(rng, n_d)
                total += clause_term_sum(pert, disorder, fields(n_d * (d - 1)).reshape(n_d, d - 1, n_leaves), True)
                n_pert += n_d
        return LeafTerms(values=total, n_model_terms=n, n_pert_terms=n_pert)

    @staticmethod
    def sample_B_terms(fields: FieldSampler, n_leaves: int, model: DilutedModel, rng: np.random.Generator,
                       with_perturbation: bool, poisson_cap: Optional[int] = None) -> LeafTerms:
        clause = build_clause(model.clause)
        K = model.K
        n = FunctionalService.poisson_count(rng, model.lam * (K - 1), poisson_cap)
        disorder = clause.sample_disorder(rng, n)
        total = clause_term_sum(clause, disorder, fields(n * K).reshape(n, K, n_leaves), False)
        n_pert = 0
        if with_perturbation:
            for d in range(2, model.d_max + 1):
                pert = build_clause(model.pert_model(d))
                n_d = FunctionalService.poisson_count(rng, float(d - 1), poisson_cap)
                disorder = pert.sample_disorder(rng, n_d)
                total += clause_term_sum(pert, disorder, fields(n_d * d).reshape(n_d, d, n_leaves), False)
                n_pert += n_d
        return LeafTerms(values=total, n_model_terms=n, n_pert_terms=n_pert)

    @staticmethod
    def sample_A_alpha(h: OrderParamH, M: int, model: DilutedModel, rng: np.random.Generator,
                       with_perturbation: Optional[bool] = None, poisson_cap: Optional[int] = None) -> LeafTerms:
        """A_alpha(eps) on the M^r leaves with fresh hierarchical field copies per clause slot"""
        with_perturbation = model.with_perturbation if with_perturbation is None else with_perturbation
        return FunctionalService.sample_A_terms(
            lambda n: FieldService.sample_leaf_fields(h, M, n, rng), M ** h.r, model, rng,
            with_perturbation, poisson_cap,
        )

    @staticmethod
    def sample_B_alpha(h: OrderParamH, M: int, model: DilutedModel, rng: np.random.Generator,
                       with_perturbation: Optional[bool] = None, poisson_cap: Optional[int] = None) -> LeafTerms:
        with_perturbation = model.with_perturbation if with_perturbation is None else with_perturbation
        return FunctionalService.sample_B_terms(
            lambda n: FieldService.sample_leaf_fields(h, M, n, rng), M ** h.r, model, rng,
            with_perturbation, poisson_cap,
        )

    @staticmethod
    def functional_delta(log_weights: np.ndarray, A: np.ndarray, B: np.ndarray) -> float:
        """log sum w Av exp A - log sum w exp B for one draw, weights need not be normalized"""
        value = float(log_mean_exp(log_weights, log_av_exp(A[:, 0], A[:, 1])) - log_mean_exp(log_weights, B))
        if not np.isfinite(value):
            raise ErrorHandling.numerical_failure("estimate_P", f"non-finite per-sample value {value}")
        return value

    @staticmethod
    def estimate_P(params: CascadeParams, h: OrderParamH, model: DilutedModel, M: int, n_samples: int,
                   seed: int, with_perturbation: Optional[bool] = None, weights: str = "sorted",
                   poisson_cap: Optional[int] = None, workers: Optional[int] = None) -> FunctionalEstimate:
        """
        Monte Carlo value of the functional over n_samples independent
        (cascade, fields, disorder) draws.

        Args:
            params: Cascade depth and zetas; params.r must equal h.r
            h: Order parameter
            model: Clause law, lambda and perturbation strength
            M: Branching truncation
            n_samples: Number of independent draws
            seed: Run seed; draw i uses stream (seed, "mp-eval", i)
            with_perturbation: Include the perturbation terms (default: eps_pert > 0)
            weights: "sorted" sums against V, "original" against v
            poisson_cap: Truncate every Poisson count (for brute-force comparisons)
            workers: Process count for the draws

        Returns:
            FunctionalEstimate
        """
        if params.r != h.r:
            raise ErrorHandling.invalid_parameter(f"h has depth {h.r}, cascade depth is {params.r}")
        if weights not in ("sorted", "original"):
            raise ErrorHandling.invalid_parameter(f"weights must be 'sorted' or 'original', got {weights}")
        with_perturbation = model.with_perturbation if with_perturbation is None else with_perturbation
        logger.info(f"estimate_P r={params.r} M={M} n={n_samples} seed={seed} perturbation={with_perturbation}")

        deltas = parallel_map(
            partial(_functional_replicate, params, h, model, M, with_perturbation, weights, poisson_cap, seed),
            range(n_samples), workers,
        )
        return FunctionalService._estimate(deltas, model, with_perturbation, M=M, seed=seed,
                                           budget=CascadeService.truncation_budget(params, M))

    @staticmethod
    def estimate_P_single_atom(model: DilutedModel, n_samples: int, seed: int, field: float = 0.0,
                               with_perturbation: Optional[bool] = None, poisson_cap: Optional[int] = None,
                               workers: Optional[int] = None) -> FunctionalEstimate:
        """The functional for a single pure state whose spins all have mean `field`"""
        if abs(field) > 1.0:
            raise ErrorHandling.invalid_parameter(f"field must lie in [-1, 1], got {field}")
        with_perturbation = model.with_perturbation if with_perturbation is None else with_perturbation
        deltas = parallel_map(
            partial(_single_atom_replicate, model, float(field), with_perturbation, poisson_cap, seed),
            range(n_samples), workers,
        )
        return FunctionalService._estimate(deltas, model, with_perturbation, M=1, seed=seed, budget=0.0)

    @staticmethod
    def omega_star_infimum(params: CascadeParams, h: OrderParamH, model: DilutedModel, M: int,
                           n_samples: int, seed: int, **kwargs) -> FunctionalEstimate:
        """
        Minimum of estimate_P over the cell centers of the w_* coordinate,
        every cell evaluated on the same draws.
        """
        if not h.omega_star_coordinate:
            return FunctionalService.estimate_P(params, h, model, M, n_samples, seed, **kwargs)
        best = None
        for cell in range(h.G):
            omega_star = (cell + 0.5) / h.G
            estimate = FunctionalService.estimate_P(params, h.with_omega_star(omega_star), model, M,
                                                    n_samples, seed, **kwargs)
            logger.debug(f"omega_star={omega_star:.4f} value={estimate.value:.6f}")
            if best is None or estimate.value < best.value:
                best = estimate.model_copy(update={"extra": {**estimate.extra, "omega_star": omega_star}})
        return best

    @staticmethod
    def _estimate(deltas, model: DilutedModel, with_perturbation: bool, M: int, seed: int,
                  budget: float) -> FunctionalEstimate:
        mean, se = mean_and_se(deltas)
        return FunctionalEstimate(
            value=LOG2 + mean,
            std_error=se,
            n=len(deltas),
            M=M,
            truncation_budget=budget,
            seed=seed,
            extra={
                "d_max": model.d_max,
                "perturbation": with_perturbation,
                "perturbation_tail_bound": model.perturbation_tail_bound() if with_perturbation else 0.0,
            },
        )


def _functional_replicate(params: CascadeParams, h: OrderParamH, model: DilutedModel, M: int,
                          with_perturbation: bool, weights: str, poisson_cap: Optional[int],
                          seed: int, index: int) -> float:
    rng = stream(seed, "mp-eval", index)
    cascade = CascadeService.build_cascade(params, M, rng)
    if weights == "sorted":
        log_weights = cascade.log_leaf_weights[cascade.sort_map]
    else:
        log_weights = cascade.log_leaf_weights
    n_leaves = cascade.n_leaves

    def fields(n: int) -> np.ndarray:
        return FieldService.sample_leaf_fields(h, M, n, rng)

    A = FunctionalService.sample_A_terms(fields, n_leaves, model, rng, with_perturbation, poisson_cap)
    B = FunctionalService.sample_B_terms(fields, n_leaves, model, rng, with_perturbation, poisson_cap)
    return FunctionalService.functional_delta(log_weights, A.values, B.values)


def _single_atom_replicate(model: DilutedModel, field: float, with_perturbation: bool,
                           poisson_cap: Optional[int], seed: int, index: int) -> float:
    rng = stream(seed, "mp-eval-atom", index)

    def fields(n: int) -> np.ndarray:
        return np.full((n, 1), field)

    A = FunctionalService.sample_A_terms(fields, 1, model, rng, with_perturbation, poisson_cap)
    B = FunctionalService.sample_B_terms(fields, 1, model, rng, with_perturbation, poisson_cap)
    return FunctionalService.functional_delta(np.zeros(1), A.values, B.values)
