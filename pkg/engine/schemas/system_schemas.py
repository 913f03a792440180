from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import Field, model_validator

from engine.schemas.base_schemas import BaseSchema, ArraySchema
from engine.schemas.clause_schemas import ClauseModel, DilutedModel


class ClauseGroup(ArraySchema):
    """All clauses of one law in a finite system, stored column-wise"""
    model: ClauseModel
    indices: np.ndarray
    disorder: np.ndarray

    @model_validator(mode="after")
    def validate_group(self):
        k = self.model.arity
        if self.indices.ndim != 2 or self.indices.shape[1] != k:
            raise ValueError(f"indices must have shape (n, {k}), got {self.indices.shape}")
        if self.disorder.shape[0] != self.indices.shape[0]:
            raise ValueError("one disorder entry per clause is required")
        return self

    @property
    def size(self) -> int:
        return self.indices.shape[0]


class HamiltonianInstance(ArraySchema):
    """
    A finite diluted Hamiltonian on N spins (0-based indices).

    `groups[0]` holds the model clauses; the remaining groups hold the
    perturbation clauses theta^d, d = 1..d_max, present iff eps_pert > 0.
    """
    N: int = Field(..., ge=1)
    model: DilutedModel
    groups: List[ClauseGroup]

    @model_validator(mode="after")
    def validate_indices(self):
        for group in self.groups:
            if group.size and (group.indices.min() < 0 or group.indices.max() >= self.N):
                raise ValueError(f"clause indices must lie in [0, {self.N})")
        return self

    @property
    def model_group(self) -> ClauseGroup:
        return self.groups[0]

    @property
    def perturbation_groups(self) -> List[ClauseGroup]:
        return self.groups[1:]

    @property
    def n_clauses(self) -> int:
        return sum(group.size for group in self.groups)

    def to_record(self) -> dict:
        return {
            "N": self.N,
            "model": self.model.model_dump(mode="json", by_alias=True),
            "groups": [
                {
                    "model": group.model.model_dump(mode="json"),
                    "indices": group.indices.tolist(),
                    "disorder": group.disorder.tolist(),
                }
                for group in self.groups
            ],
        }


class ReplicaBatch(ArraySchema):
    """n replica configurations in {-1, +1}^N drawn from the Gibbs measure of one instance"""
    spins: np.ndarray
    method: Literal["exact", "mcmc"]
    sweeps: int = 0
    burn_in: int = 0

    @property
    def n(self) -> int:
        return self.spins.shape[0]


class McmcTrace(ArraySchema):
    """Thinned Metropolis samples of several chains"""
    samples: np.ndarray
    energies: np.ndarray
    r_hat: float
    sweeps: int
    burn_in: int
    thinning: int


class GGSpec(BaseSchema):
    """
    Test functions of a Ghirlanda-Guerra residual.

    f: "one", "spin" (sigma^1_site) or "overlap" (R_{1,2}, needs n >= 2).
    psi: "one", "identity", "power" (R^power) or "indicator" (R <= threshold).
    """
    n: int = Field(default=2, ge=2)
    f_kind: Literal["one", "spin", "overlap"] = "one"
    site: int = Field(default=0, ge=0)
    psi_kind: Literal["one", "identity", "power", "indicator"] = "identity"
    power: int = Field(default=2, ge=1)
    threshold: float = 0.0

    def psi(self, R: np.ndarray) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        if self.psi_kind == "one":
            return np.ones_like(R)
        if self.psi_kind == "identity":
            return R
        if self.psi_kind == "power":
            return R ** self.power
        return (R <= self.threshold).astype(float)


class GGResidual(BaseSchema):
    """One Ghirlanda-Guerra residual with its parts"""
    residual: float
    std_error: float = 0.0
    lhs: float
    rhs: float
    n_instances: int
    method: str
    threshold: Optional[float] = None


class OverlapBins(BaseSchema):
    """Overlap values (2k - N)/N and their probabilities"""
    values: Tuple[float, ...]
    probs: Tuple[float, ...]
