import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import Field, model_validator
from scipy.special import roots_hermitenorm, roots_legendre

from engine.schemas.base_schemas import BaseSchema, ArraySchema


class ZDistribution(BaseSchema):
    """
    Law of the auxiliary variable z attached to every non-root vertex.

    discrete: `values` with `probs`; uniform: on [low, high]; normal: N(mean, std^2).
    """
    kind: Literal["discrete", "uniform", "normal"] = "uniform"
    values: Optional[Tuple[float, ...]] = None
    probs: Optional[Tuple[float, ...]] = None
    low: float = 0.0
    high: float = 1.0
    mean: float = 0.0
    std: float = Field(default=1.0, gt=0.0)

    @model_validator(mode="after")
    def validate_law(self):
        if self.kind == "discrete":
            if not self.values:
                raise ValueError("a discrete z law needs values")
            probs = self.probs or tuple(1.0 / len(self.values) for _ in self.values)
            if len(probs) != len(self.values) or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
                raise ValueError("discrete probs must be non-negative, one per value, summing to 1")
        if self.kind == "uniform" and not self.high > self.low:
            raise ValueError("uniform z law needs high > low")
        return self

    @property
    def bounded(self) -> bool:
        return self.kind != "normal"

    def support(self) -> Tuple[float, float]:
        if self.kind == "discrete":
            return min(self.values), max(self.values)
        if self.kind == "uniform":
            return self.low, self.high
        return -math.inf, math.inf

    def nodes(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Quadrature points and probability weights; exact for discrete laws"""
        if self.kind == "discrete":
            probs = self.probs or tuple(1.0 / len(self.values) for _ in self.values)
            return np.asarray(self.values, dtype=float), np.asarray(probs, dtype=float)
        if self.kind == "uniform":
            x, w = roots_legendre(n)
            return self.low + (self.high - self.low) * (x + 1.0) / 2.0, w / 2.0
        x, w = roots_hermitenorm(n)
        return self.mean + self.std * x, w / w.sum()

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "discrete":
            probs = self.probs or None
            return rng.choice(np.asarray(self.values, dtype=float), size=size, p=probs)
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=size)
        return rng.normal(self.mean, self.std, size=size)


class TerminalFunction(BaseSchema):
    """
    X_r(z_1, ..., z_r) for the path variables of a leaf.

    constant: c; linear: c + sum_p a_p z_p; tanh: c + amplitude tanh(sum_p a_p z_p).
    """
    kind: Literal["constant", "linear", "tanh"] = "constant"
    c: float = 0.0
    coefficients: Tuple[float, ...] = ()
    amplitude: float = 1.0

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        """z has shape (..., r); returns shape (...)"""
        z = np.asarray(z, dtype=float)
        if self.kind == "constant":
            return np.full(z.shape[:-1], self.c)
        s = z @ self._coefficients(z.shape[-1])
        if self.kind == "linear":
            return self.c + s
        return self.c + self.amplitude * np.tanh(s)

    def is_constant(self) -> bool:
        if self.kind == "constant" or not any(self.coefficients):
            return True
        return self.kind == "tanh" and self.amplitude == 0.0

    def bound(self, z_law: ZDistribution, r: int) -> float:
        """sup |X_r| over the support of z"""
        if self.kind == "constant":
            return abs(self.c)
        if self.kind == "tanh":
            return abs(self.c) + abs(self.amplitude)
        low, high = z_law.support()
        a = self._coefficients(r)
        total = abs(self.c)
        for coefficient in a:
            if coefficient != 0.0:
                total += max(abs(coefficient * low), abs(coefficient * high))
        return total

    def _coefficients(self, r: int) -> np.ndarray:
        a = np.zeros(r)
        given = np.asarray(self.coefficients[:r], dtype=float)
        a[:given.size] = given
        return a


class RecursionSpec(BaseSchema):
    """Depth, zetas, z law and terminal function of the X_p recursion"""
    r: int = Field(..., ge=1)
    zetas: Tuple[float, ...]
    terminal: TerminalFunction = TerminalFunction()
    z: ZDistribution = ZDistribution()
    n_nodes: int = Field(default=32, ge=2)
    method: Literal["quadrature", "mc"] = "quadrature"
    n_mc: int = Field(default=4096, ge=16)

    @model_validator(mode="after")
    def validate_recursion(self):
        if len(self.zetas) != self.r:
            raise ValueError(f"expected {self.r} zetas, got {len(self.zetas)}")
        if any(not (0.0 < z < 1.0) for z in self.zetas) or any(b <= a for a, b in zip(self.zetas, self.zetas[1:])):
            raise ValueError("zetas must be strictly increasing in (0, 1)")
        if not math.isfinite(self.terminal.bound(self.z, self.r)):
            raise ValueError("the terminal function must be bounded on the support of z")
        return self

    @property
    def bound(self) -> float:
        return self.terminal.bound(self.z, self.r)


class RecursionResult(BaseSchema):
    """X_0 with its quadrature or Monte Carlo error"""
    x0: float
    error: float = Field(default=0.0, ge=0.0)
    bound: float = 0.0
    method: str = "quadrature"


class TiltResult(ArraySchema):
    """
    Tilted and re-sorted weights.

    `level_maps[p][j]` is the pre-tilt sorted label (flat, depth p) now carrying
    label j; `z_levels[p]` are the auxiliary variables at depth p + 1 in the
    new labeling.
    """
    tilted_weights: np.ndarray
    log_tilted_weights: np.ndarray
    level_maps: List[np.ndarray]
    z_levels: List[np.ndarray]
    identity: bool
    wedge_preserved: bool


class LeafTerms(ArraySchema):
    """Per-leaf log terms of one disorder draw with the Poisson counts behind them"""
    values: np.ndarray
    n_model_terms: int
    n_pert_terms: int = 0


class InvarianceReport(BaseSchema):
    """z-scores of the tilt-and-resort comparison, one per statistic"""
    n_replicates: int
    M: int
    truncation_budget: float
    z_scores: Dict[str, float]
    threshold: float = 3.0

    @property
    def max_abs_z(self) -> float:
        return max((abs(z) for z in self.z_scores.values()), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_abs_z <= self.threshold
