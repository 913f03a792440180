import numpy as np

from engine.clauses.base_clause import BaseClause, _log_unit
from engine.schemas.clause_schemas import KSatModel


class KSatClause(BaseClause):
    """K-sat penalty -beta when every sigma_j equals J_j, zero otherwise"""

    def __init__(self, model: KSatModel):
        super().__init__(model)

    @property
    def disorder_shape(self) -> tuple:
        return (self.model.K,)

    def sample_disorder(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(np.array([-1.0, 1.0]), size=(size, self.model.K))

    def theta(self, disorder: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        return -self.model.beta * np.prod((1.0 + np.asarray(disorder) * sigma) / 2.0, axis=-1)

    def log_exp_theta(self, disorder: np.ndarray, x: np.ndarray) -> np.ndarray:
        # 1 + (e^-beta - 1) P = (1 - P) + e^-beta P
        P = np.prod((1.0 + np.asarray(disorder) * x) / 2.0, axis=-1)
        return np.logaddexp(_log_unit(1.0 - P), -self.model.beta + _log_unit(P))
