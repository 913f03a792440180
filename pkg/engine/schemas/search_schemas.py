from typing import Any, Dict, List, Optional, Tuple

from pydantic import Field, model_validator

from engine.schemas.base_schemas import BaseSchema


class SearchSpec(BaseSchema):
    """
    Settings of a minimization of the functional at a fixed depth r.

    `budgets` is the sample-count schedule: every start runs one Nelder-Mead
    stage per entry, each stage restarting from the previous best point with
    its own fixed seed. Without `M` every evaluated point gets the smallest
    branching whose truncation budget meets `truncation_budget`.
    """
    r: int = Field(default=1, ge=1)
    G: int = Field(default=2, ge=1)
    M: Optional[int] = Field(default=None, ge=1)
    truncation_budget: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    max_leaves: Optional[int] = Field(default=None, ge=1)
    budgets: Tuple[int, ...] = (200, 800)
    multistart: int = Field(default=2, ge=1)
    max_iter: int = Field(default=60, ge=1)
    xatol: float = Field(default=1e-2, gt=0.0)
    fatol: float = Field(default=1e-3, gt=0.0)
    reeval_factor: int = Field(default=4, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def validate_budgets(self):
        if not self.budgets or any(b < 2 for b in self.budgets):
            raise ValueError("budgets must be a non-empty list of sample counts >= 2")
        return self

    @property
    def n_parameters(self) -> int:
        return self.r + 1 + self.G ** self.r


class SearchPoint(BaseSchema):
    """A feasible (zeta, h) point with its estimated functional value"""
    r: int
    G: int
    zetas: Tuple[float, ...]
    h_values: Tuple[float, ...]
    value: float
    std_error: float = 0.0
    n_samples: int = 0
    seed: Optional[int] = None
    M: Optional[int] = None

    def estimate_P_input(self) -> Dict[str, Any]:
        """Cascade and h sections reusable as a run config"""
        return {
            "cascade": {"r": self.r, "zetas": list(self.zetas), "M": self.M},
            "h": {"r": self.r, "G": self.G, "values": list(self.h_values)},
        }


class TraceEntry(BaseSchema):
    start: int
    stage: int
    evaluation: int
    params_hash: str
    value: float
    std_error: float
    n_samples: int


class SearchResult(BaseSchema):
    """Best point of a search at one depth, its re-evaluation and the full trace"""
    r: int
    best: SearchPoint
    reeval: SearchPoint
    reeval_z: float
    start_values: List[Optional[float]]
    trace: List[TraceEntry]
    n_failed_starts: int = 0

    @property
    def value(self) -> float:
        return self.best.value

    @property
    def std_error(self) -> float:
        return self.best.std_error
