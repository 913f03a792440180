from typing import Optional, Sequence

import numpy as np

from engine.clauses import build_clause
from engine.schemas.clause_schemas import ClauseInstance
from engine.utils.error_util import ErrorHandling


class ClauseService:
    """Single-clause operations: disorder sampling and evaluation on corners and fields"""

    @staticmethod
    def sample_disorder(model, rng: np.random.Generator,
                        indices: Optional[Sequence[int]] = None) -> ClauseInstance:
        disorder = build_clause(model).sample_disorder(rng, 1)[0]
        return ClauseInstance(
            model=model,
            disorder=disorder,
            indices=tuple(int(i) for i in indices) if indices is not None else None,
        )

    @staticmethod
    def theta_corner(inst: ClauseInstance, sigma: Sequence[int]) -> float:
        clause = build_clause(inst.model)
        return float(clause.theta(inst.disorder, clause.check_spins(sigma)))

    @staticmethod
    def log_exp_theta(inst: ClauseInstance, x: Sequence[float]) -> float:
        clause = build_clause(inst.model)
        value = float(clause.log_exp_theta(inst.disorder, clause.check_fields(x)))
        if not np.isfinite(value):
            raise ErrorHandling.numerical_failure("exp_theta_extended", f"log exp theta is {value}")
        return value

    @staticmethod
    def exp_theta_extended(inst: ClauseInstance, x: Sequence[float]) -> float:
        """exp theta averaged over independent spins with means x; strictly positive"""
        return float(np.exp(ClauseService.log_exp_theta(inst, x)))

    @staticmethod
    def corner_average(inst: ClauseInstance, x: Sequence[float]) -> float:
        """Brute-force 2^k corner sum of the same average"""
        clause = build_clause(inst.model)
        return float(clause.corner_average(inst.disorder, clause.check_fields(x)))
