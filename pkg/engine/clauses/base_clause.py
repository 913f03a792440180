from abc import ABC, abstractmethod
from itertools import product

import numpy as np

from engine.utils.error_util import ErrorHandling


def _log_unit(x: np.ndarray) -> np.ndarray:
    """log of a value in [0, 1] with log 0 = -inf and no warnings"""
    with np.errstate(divide="ignore"):
        return np.log(x)


class BaseClause(ABC):
    """
    Base class for clause laws theta on {-1, +1}^k.

    Disorder arrays carry a leading batch shape: (...,) for a single coupling
    g, (..., k) for per-coordinate signs. Spin and field arrays are (..., k)
    and broadcast against the disorder batch.
    """

    def __init__(self, model):
        self.model = model

    @property
    def arity(self) -> int:
        return self.model.arity

    @property
    def disorder_shape(self) -> tuple:
        return ()

    @abstractmethod
    def sample_disorder(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw `size` independent disorders, shape (size,) + disorder_shape"""
        pass

    @abstractmethod
    def theta(self, disorder: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        """theta on spin corners"""
        pass

    @abstractmethod
    def log_exp_theta(self, disorder: np.ndarray, x: np.ndarray) -> np.ndarray:
        """log of exp theta averaged over independent spins with means x"""
        pass

    def exp_theta_extended(self, disorder: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_exp_theta(disorder, x))

    def corner_average(self, disorder: np.ndarray, x: np.ndarray) -> np.ndarray:
        """
        sum over sigma of exp theta(sigma) prod_j (1 + x_j sigma_j) / 2, by enumerating all 2^k corners.
        """
        x = np.asarray(x, dtype=float)
        total = 0.0
        for corner in product((-1.0, 1.0), repeat=self.arity):
            sigma = np.array(corner)
            weight = np.prod((1.0 + x * sigma) / 2.0, axis=-1)
            total = total + np.exp(self.theta(disorder, np.broadcast_to(sigma, x.shape))) * weight
        return total

    def check_fields(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.arity,):
            raise ErrorHandling.invalid_parameter(f"expected {self.arity} coordinates, got shape {x.shape}")
        if np.any(np.abs(x) > 1.0) or not np.all(np.isfinite(x)):
            raise ErrorHandling.invalid_parameter("clause inputs must lie in [-1, 1]")
        return x

    def check_spins(self, sigma: np.ndarray) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape[-1:] != (self.arity,) or np.any(np.abs(sigma) != 1.0):
            raise ErrorHandling.invalid_parameter(f"spins must be {self.arity} values in {{-1, +1}}")
        return sigma
