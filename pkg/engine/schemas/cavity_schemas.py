from typing import Any, Dict, List, Tuple

import numpy as np
from pydantic import Field, model_validator

from engine.schemas.base_schemas import BaseSchema, ArraySchema


class CavitySpec(BaseSchema):
    """
    Coordinates and replica sets of one cavity-equation statistic.

    Coordinates are 1-based: 1..n are cavity coordinates, n+1..m the rest.
    `sets[l]` is the set C_l of the l-th replica, so q = len(sets).
    """
    n: int = Field(..., ge=0)
    m: int = Field(..., ge=1)
    sets: Tuple[Tuple[int, ...], ...]

    @model_validator(mode="after")
    def validate_sets(self):
        if self.n > self.m:
            raise ValueError(f"n={self.n} cavity coordinates exceed m={self.m}")
        if not self.sets:
            raise ValueError("at least one replica set is required")
        for s in self.sets:
            if any(i < 1 or i > self.m for i in s):
                raise ValueError(f"set {list(s)} has coordinates outside 1..{self.m}")
            if len(set(s)) != len(s):
                raise ValueError(f"set {list(s)} repeats a coordinate")
        return self

    @property
    def q(self) -> int:
        return len(self.sets)

    def cavity_part(self, l: int) -> Tuple[int, ...]:
        return tuple(i for i in self.sets[l] if i <= self.n)

    def outer_part(self, l: int) -> Tuple[int, ...]:
        return tuple(i for i in self.sets[l] if i > self.n)


class CavityField(ArraySchema):
    """A_i(eps) on every leaf with the derived A_i and xi_i"""
    A_eps: np.ndarray
    A: np.ndarray
    xi: np.ndarray
    n_model_terms: int
    n_pert_terms: int


class CavityResult(BaseSchema):
    """Both sides of the cavity equations and their difference, all with standard errors"""
    lhs: float
    lhs_std_error: float
    rhs: float
    rhs_std_error: float
    residual: float
    std_error: float
    n_samples: int
    M: int
    seed: int
    extra: Dict[str, Any] = Field(default_factory=dict)


class CavityDraw(BaseSchema):
    lhs: float
    rhs: float
    A_counts: List[int] = Field(default_factory=list)
