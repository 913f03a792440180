import numpy as np

from engine.clauses.base_clause import BaseClause, _log_unit
from engine.schemas.clause_schemas import KSpinModel


class KSpinClause(BaseClause):
    """K-spin interaction beta g sigma_1 ... sigma_K"""

    def __init__(self, model: KSpinModel):
        super().__init__(model)

    def sample_disorder(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.model.g_dist == "rademacher":
            return rng.choice(np.array([-1.0, 1.0]), size=size)
        return rng.standard_normal(size)

    def theta(self, disorder: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        return self.model.beta * np.asarray(disorder) * np.prod(sigma, axis=-1)

    def log_exp_theta(self, disorder: np.ndarray, x: np.ndarray) -> np.ndarray:
        # ch(a)(1 + th(a) P) = ((1 + P) e^a + (1 - P) e^-a) / 2
        a = self.model.beta * np.asarray(disorder, dtype=float)
        P = np.prod(x, axis=-1)
        return np.logaddexp(a + _log_unit((1.0 + P) / 2.0), -a + _log_unit((1.0 - P) / 2.0))
