from typing import Annotated, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import ConfigDict, Field, field_validator, model_validator

from engine.schemas.base_schemas import BaseSchema, ArraySchema, base_config


class KSpinModel(BaseSchema):
    """theta(sigma) = beta g sigma_1 ... sigma_K"""
    variant: Literal["kspin"] = "kspin"
    K: int = Field(..., ge=1)
    beta: float = Field(..., ge=0.0)
    g_dist: Literal["gaussian", "rademacher"] = "gaussian"

    @property
    def arity(self) -> int:
        return self.K


class KSatModel(BaseSchema):
    """theta(sigma) = -beta prod_j (1 + J_j sigma_j) / 2"""
    variant: Literal["ksat"] = "ksat"
    K: int = Field(..., ge=1)
    beta: float = Field(..., ge=0.0)

    @property
    def arity(self) -> int:
        return self.K


class PertModel(BaseSchema):
    """theta^d(sigma) = g prod_j (1 + sigma_j) / 2 with g ~ N(0, 2^-d eps_pert)"""
    variant: Literal["pert"] = "pert"
    d: int = Field(..., ge=1)
    eps_pert: float = Field(..., ge=0.0)

    @property
    def arity(self) -> int:
        return self.d

    @property
    def sigma2(self) -> float:
        return self.eps_pert * 2.0 ** (-self.d)


ClauseModel = Annotated[Union[KSpinModel, KSatModel, PertModel], Field(discriminator="variant")]


class DilutedModel(BaseSchema):
    """A diluted model: clause law, connectivity lambda and perturbation strength"""
    clause: Annotated[Union[KSpinModel, KSatModel], Field(discriminator="variant")]
    lam: float = Field(..., ge=0.0, alias="lambda")
    eps_pert: float = Field(default=0.0, ge=0.0)
    d_max: int = Field(default=12, ge=1)

    model_config = ConfigDict(**base_config, populate_by_name=True)

    @property
    def K(self) -> int:
        return self.clause.K

    @property
    def with_perturbation(self) -> bool:
        return self.eps_pert > 0.0

    def pert_model(self, d: int) -> PertModel:
        return PertModel(d=d, eps_pert=self.eps_pert)

    def perturbation_tail_bound(self) -> float:
        """sum_{d > d_max} E|g^d| E pi(d): the neglected part of the perturbation series"""
        if not self.with_perturbation:
            return 0.0
        d = np.arange(self.d_max + 1, self.d_max + 200, dtype=float)
        return float(np.sum(d * np.sqrt(2.0 * self.eps_pert * 2.0 ** (-d) / np.pi)))


class ClauseInstance(ArraySchema):
    """
    One clause with sampled disorder: g (K-spin, perturbation) as a 0-d array,
    or J in {-1, +1}^K (K-sat). `indices` are the 0-based spins it touches
    when attached to a finite system.
    """
    model: ClauseModel
    disorder: np.ndarray
    indices: Optional[Tuple[int, ...]] = None

    @field_validator("disorder", mode="before")
    @classmethod
    def as_array(cls, v):
        return np.asarray(v, dtype=float)

    @model_validator(mode="after")
    def validate_disorder(self):
        if self.model.variant == "ksat":
            if self.disorder.shape != (self.model.K,) or not np.all(np.abs(self.disorder) == 1.0):
                raise ValueError("K-sat disorder must be K signs in {-1, +1}")
        elif self.disorder.shape != ():
            raise ValueError("K-spin and perturbation disorder is a single coupling g")
        if self.indices is not None and len(self.indices) != self.model.arity:
            raise ValueError(f"clause touches {self.model.arity} spins, got {len(self.indices)} indices")
        self.disorder.setflags(write=False)
        return self

    def to_record(self) -> dict:
        return {
            "model": self.model.model_dump(mode="json"),
            "disorder": self.disorder.tolist(),
            "indices": list(self.indices) if self.indices is not None else None,
        }
