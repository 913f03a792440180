import math
from typing import Optional, Dict, Any
from pydantic import BaseModel, Field, ConfigDict, field_validator

base_config = ConfigDict(
    extra="ignore",
    validate_assignment=True,
    frozen=True,
)

array_config = ConfigDict(
    extra="ignore",
    frozen=True,
    arbitrary_types_allowed=True,
)


class BaseSchema(BaseModel):
    """
    A base schema for all configuration-like models
    """
    model_config = base_config


class ArraySchema(BaseModel):
    """
    A base schema for immutable results holding numpy arrays
    """
    model_config = array_config


class Estimate(BaseSchema):
    """A Monte Carlo value with its standard error"""
    value: float
    std_error: float = Field(default=0.0, ge=0.0)
    n: int = Field(default=1, ge=0)

    @field_validator("value")
    @classmethod
    def validate_value(cls, v):
        if not math.isfinite(v):
            raise ValueError("estimate value must be finite")
        return v


class FunctionalEstimate(Estimate):
    """Monte Carlo value of a functional with sample and truncation metadata"""
    M: Optional[int] = None
    truncation_budget: float = Field(default=0.0, ge=0.0)
    seed: Optional[int] = None
    extra: Dict[str, Any] = Field(default_factory=dict)

    @property
    def n_disorder_samples(self) -> int:
        return self.n
