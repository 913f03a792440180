from typing import List, Optional, Tuple

import numpy as np
from pydantic import Field, model_validator

from engine.schemas.base_schemas import ArraySchema


class OrderParamH(ArraySchema):
    """
    Grid-discretized order parameter h with values in [-1, 1].

    h(w_1, ..., w_k) = values[ceil(G w_1) - 1, ..., ceil(G w_k) - 1] with k = r,
    or k = r + 2 when `omega_star_coordinate` is set: a leading w_* coordinate
    (frozen at `omega_star` when evaluating), a root coordinate, then the r
    path coordinates.
    """
    r: int = Field(..., ge=1)
    G: int = Field(..., ge=1)
    values: np.ndarray
    omega_star_coordinate: bool = False
    omega_star: float = Field(default=0.5, ge=0.0, le=1.0)

    @model_validator(mode="before")
    @classmethod
    def shape_values(cls, data):
        if not isinstance(data, dict) or "values" not in data:
            return data
        data = dict(data)
        values = np.asarray(data["values"], dtype=float)
        r, G = int(data.get("r", 0)), int(data.get("G", 0))
        arity = r + 2 if data.get("omega_star_coordinate", False) else r
        if r >= 1 and G >= 1 and values.size == G ** arity:
            values = values.reshape((G,) * arity)
        data["values"] = values
        return data

    @model_validator(mode="after")
    def validate_values(self):
        expected = (self.G,) * self.arity
        if self.values.shape != expected:
            raise ValueError(f"values must have shape {expected} ({self.G ** self.arity} entries), "
                             f"got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(np.abs(self.values) > 1.0):
            raise ValueError("h values must lie in [-1, 1]")
        self.values.setflags(write=False)
        return self

    @property
    def arity(self) -> int:
        return self.r + 2 if self.omega_star_coordinate else self.r

    @property
    def n_path_coordinates(self) -> int:
        """Coordinates drawn per tree vertex: r, plus the root when w_* is present"""
        return self.r + 1 if self.omega_star_coordinate else self.r

    @classmethod
    def constant(cls, r: int, G: int, c: float, omega_star_coordinate: bool = False) -> "OrderParamH":
        arity = r + 2 if omega_star_coordinate else r
        return cls(r=r, G=G, values=np.full((G,) * arity, float(c)),
                   omega_star_coordinate=omega_star_coordinate)

    def with_omega_star(self, omega_star: float) -> "OrderParamH":
        return self.model_copy(update={"omega_star": float(omega_star)})

    def to_record(self) -> dict:
        return {
            "r": self.r,
            "G": self.G,
            "values": self.values.reshape(-1).tolist(),
            "omega_star_coordinate": self.omega_star_coordinate,
            "omega_star": self.omega_star,
        }


class FieldSample(ArraySchema):
    """
    Independent copies of the hierarchical field on an M-ary tree of depth r.

    `uniforms[p]` has shape (n_copies, M^p) and holds w_beta for the depth-p
    vertices (depth 0 only when h carries a root coordinate, otherwise None).
    `values` has shape (n_copies, M^r) in original leaf order.
    """
    M: int
    uniforms: List[Optional[np.ndarray]]
    values: np.ndarray

    @property
    def n_copies(self) -> int:
        return self.values.shape[0]


class UltrametricGaussian(ArraySchema):
    """Leaf values g^gamma with covariance c_{gamma ^ gamma'} on an M-ary tree"""
    levels: Tuple[float, ...]
    M: int
    values: np.ndarray
