import math
from functools import partial
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from engine.dependencies.logging import logger
from engine.schemas.cascade_schemas import CascadeParams
from engine.schemas.cavity_schemas import CavityDraw, CavityField, CavityResult, CavitySpec
from engine.schemas.clause_schemas import DilutedModel
from engine.schemas.field_schemas import OrderParamH
from engine.services.cascade_service import CascadeService
from engine.services.field_service import FieldService
from engine.services.functional_service import FieldSampler, FunctionalService
from engine.utils.error_util import ErrorHandling
from engine.utils.pool_util import parallel_map
from engine.utils.rng_util import stream
from engine.utils.stats_util import log_av_exp, mean_and_se


class CavityService:
    """
    Both sides of the cavity equations for a measure of cascade form:
    pure states with weights V_alpha and spin means given by hierarchical fields.
    """

    @staticmethod
    def cavity_field(fields: FieldSampler, n_leaves: int, model: DilutedModel, rng: np.random.Generator,
                     with_perturbation: Optional[bool] = None, poisson_cap: Optional[int] = None) -> CavityField:
        """
        Cavity field of one new coordinate on every leaf.

        A(eps) collects Poisson(lambda K) model clauses and the perturbation
        clauses, each fed with fresh field copies; A = log Av exp A(eps) and
        xi = Av eps exp A(eps) / exp A = tanh((A(+1) - A(-1)) / 2).
        """
        with_perturbation = model.with_perturbation if with_perturbation is None else with_perturbation
        terms = FunctionalService.sample_A_terms(fields, n_leaves, model, rng, with_perturbation, poisson_cap)
        A_eps = terms.values
        return CavityField(
            A_eps=A_eps,
            A=log_av_exp(A_eps[:, 0], A_eps[:, 1]),
            xi=np.tanh((A_eps[:, 0] - A_eps[:, 1]) / 2.0),
            n_model_terms=terms.n_model_terms,
            n_pert_terms=terms.n_pert_terms,
        )

    @staticmethod
    def tilted_weights(log_weights: np.ndarray, A_total: np.ndarray) -> np.ndarray:
        """V exp(sum_i A_i) normalized to one"""
        tilted = log_weights + A_total
        norm = logsumexp(tilted)
        if not np.isfinite(norm):
            raise ErrorHandling.numerical_failure("cavity_residual", f"tilted normalization is {norm}")
        return np.exp(tilted - norm)

    @staticmethod
    def replica_products(weights: np.ndarray, values: np.ndarray, spec: CavitySpec, use_xi: bool,
                         xi: Optional[np.ndarray] = None) -> float:
        """
        prod_l sum_alpha w_alpha prod_{i in C_l} x_i^alpha, with x_i = xi_i on
        cavity coordinates when use_xi, otherwise the field values. An empty
        C_l contributes exactly 1.
        """
        total = 1.0
        for l in range(spec.q):
            if not spec.sets[l]:
                continue
            product = np.ones_like(weights)
            for i in spec.sets[l]:
                if use_xi and i <= spec.n:
                    product = product * xi[i - 1]
                else:
                    product = product * values[i - 1]
            total *= float(weights @ product)
        return total

    @staticmethod
    def cavity_draw(params: CascadeParams, h: OrderParamH, model: DilutedModel, spec: CavitySpec, M: int,
                    rng: np.random.Generator, with_perturbation: Optional[bool] = None,
                    poisson_cap: Optional[int] = None, relabel: bool = False) -> CavityDraw:
        """
        One common-random-number draw of both sides: the same cascade and the
        same m field copies enter the left and the right side.
        """
        cascade = CascadeService.build_cascade(params, M, rng)
        if relabel:
            log_weights = cascade.log_leaf_weights
        else:
            log_weights = cascade.log_leaf_weights[cascade.sort_map]
        weights = np.exp(log_weights - logsumexp(log_weights))
        n_leaves = cascade.n_leaves
        values = FieldService.sample_leaf_fields(h, M, spec.m, rng)

        def fields(n: int) -> np.ndarray:
            return FieldService.sample_leaf_fields(h, M, n, rng)

        xi = np.zeros((spec.n, n_leaves))
        A_total = np.zeros(n_leaves)
        counts = []
        for i in range(spec.n):
            field = CavityService.cavity_field(fields, n_leaves, model, rng, with_perturbation, poisson_cap)
            xi[i] = field.xi
            A_total += field.A
            counts.append(field.n_model_terms)

        lhs = CavityService.replica_products(weights, values, spec, use_xi=False)
        if spec.n == 0:
            rhs = lhs
        else:
            tilted = CavityService.tilted_weights(log_weights - logsumexp(log_weights), A_total)
            rhs = CavityService.replica_products(tilted, values, spec, use_xi=True, xi=xi)
        return CavityDraw(lhs=lhs, rhs=rhs, A_counts=counts)

    @staticmethod
    def cavity_residual(params: CascadeParams, h: OrderParamH, model: DilutedModel, spec: CavitySpec, M: int,
                        n_samples: int, seed: int, with_perturbation: Optional[bool] = None,
                        poisson_cap: Optional[int] = None, relabel: bool = False,
                        workers: Optional[int] = None) -> CavityResult:
        """
        Monte Carlo averages of both sides of the cavity equations.

        Args:
            params: Cascade depth and zetas
            h: Order parameter of the fields, same depth as the cascade
            model: Clause law, lambda and perturbation strength
            spec: Coordinates and replica sets
            M: Branching truncation
            n_samples: Number of independent draws
            seed: Run seed; draw k uses stream (seed, "cavity", k)
            with_perturbation: Include the perturbation terms in A_i (default: eps_pert > 0)
            poisson_cap: Truncate every Poisson count
            relabel: Sum against the unsorted cascade weights
            workers: Process count

        Returns:
            CavityResult
        """
        if params.r != h.r:
            raise ErrorHandling.invalid_parameter(f"h has depth {h.r}, cascade depth is {params.r}")
        logger.info(f"cavity_residual n={spec.n} m={spec.m} q={spec.q} M={M} samples={n_samples} seed={seed}")
        draws = parallel_map(
            partial(_cavity_replicate, params, h, model, spec, M, with_perturbation, poisson_cap, relabel, seed),
            range(n_samples), workers,
        )
        lhs = np.array([d.lhs for d in draws])
        rhs = np.array([d.rhs for d in draws])
        lhs_mean, lhs_se = mean_and_se(lhs)
        rhs_mean, rhs_se = mean_and_se(rhs)
        residual, se = mean_and_se(lhs - rhs)
        if not all(math.isfinite(x) for x in (lhs_mean, rhs_mean, residual)):
            raise ErrorHandling.numerical_failure("cavity_residual", "non-finite side average")
        counts = [c for d in draws for c in d.A_counts]
        return CavityResult(
            lhs=lhs_mean, lhs_std_error=lhs_se, rhs=rhs_mean, rhs_std_error=rhs_se,
            residual=residual, std_error=se, n_samples=n_samples, M=M, seed=seed,
            extra={
                "relabel": relabel,
                "poisson_cap": poisson_cap,
                "mean_model_terms": float(np.mean(counts)) if counts else 0.0,
            },
        )


def _cavity_replicate(params: CascadeParams, h: OrderParamH, model: DilutedModel, spec: CavitySpec, M: int,
                      with_perturbation: Optional[bool], poisson_cap: Optional[int], relabel: bool,
                      seed: int, index: int) -> CavityDraw:
    rng = stream(seed, "cavity", index)
    return CavityService.cavity_draw(params, h, model, spec, M, rng, with_perturbation, poisson_cap, relabel)
