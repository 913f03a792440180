import math

import numpy as np

from engine.clauses.base_clause import BaseClause, _log_unit
from engine.schemas.clause_schemas import PertModel


class PerturbationClause(BaseClause):
    """theta^d(sigma) = g^d prod_j (1 + sigma_j) / 2, variance of g^d exactly 2^-d eps_pert"""

    def __init__(self, model: PertModel):
        super().__init__(model)

    def sample_disorder(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return math.sqrt(self.model.sigma2) * rng.standard_normal(size)

    def theta(self, disorder: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        return np.asarray(disorder) * np.prod((1.0 + sigma) / 2.0, axis=-1)

    def log_exp_theta(self, disorder: np.ndarray, x: np.ndarray) -> np.ndarray:
        P = np.prod((1.0 + x) / 2.0, axis=-1)
        return np.logaddexp(_log_unit(1.0 - P), np.asarray(disorder, dtype=float) + _log_unit(P))
