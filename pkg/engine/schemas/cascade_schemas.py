from typing import Optional, Tuple, List

import numpy as np
from pydantic import Field, field_validator, model_validator

from engine.schemas.base_schemas import BaseSchema, ArraySchema


class VertexPath(BaseSchema):
    """
    A vertex of the tree as its sequence of 1-based child indices.
    The empty sequence is the root.
    """
    indices: Tuple[int, ...] = ()

    @field_validator("indices")
    @classmethod
    def validate_indices(cls, v):
        if any(i < 1 for i in v):
            raise ValueError("child indices are 1-based and must be >= 1")
        return tuple(int(i) for i in v)

    def __len__(self) -> int:
        return len(self.indices)

    def prefix(self, p: int) -> "VertexPath":
        return VertexPath(indices=self.indices[:p])

    def check_bounds(self, depth: int, branching: int) -> None:
        if len(self.indices) > depth:
            raise ValueError(f"path {self.indices} is deeper than {depth}")
        if any(i > branching for i in self.indices):
            raise ValueError(f"path {self.indices} exceeds branching bound {branching}")

    def to_digits(self) -> str:
        """Base-M digit string of the 0-based child indices, as used in dumps"""
        return ".".join(str(i - 1) for i in self.indices)

    @classmethod
    def of(cls, *indices: int) -> "VertexPath":
        return cls(indices=tuple(indices))


class CascadeParams(BaseSchema):
    """Depth, Poisson parameters and optional overlap ladder of a cascade"""
    r: int = Field(..., ge=1)
    zetas: Tuple[float, ...]
    overlaps: Optional[Tuple[float, ...]] = None

    @model_validator(mode="after")
    def validate_ladders(self):
        zetas = self.zetas
        if len(zetas) != self.r:
            raise ValueError(f"expected {self.r} zetas, got {len(zetas)}")
        if any(not (0.0 < z < 1.0) for z in zetas):
            raise ValueError("every zeta must lie in (0, 1)")
        if any(b <= a for a, b in zip(zetas, zetas[1:])):
            raise ValueError("zetas must be strictly increasing")
        if self.overlaps is not None:
            q = self.overlaps
            if len(q) != self.r + 1:
                raise ValueError(f"expected {self.r + 1} overlaps, got {len(q)}")
            if q[0] < 0.0 or q[-1] > 1.0 or any(b <= a for a, b in zip(q, q[1:])):
                raise ValueError("overlaps must satisfy 0 <= q_0 < ... < q_r <= 1")
        return self

    def zeta_at(self, p: int) -> float:
        """zeta_p with the conventions zeta_{-1} = 0 and zeta_r = 1"""
        if p < 0:
            return 0.0
        if p >= self.r:
            return 1.0
        return self.zetas[p]


class TruncatedCascade(ArraySchema):
    """
    A Ruelle probability cascade truncated to M children per vertex.

    Leaves are addressed by flat indices in [0, M^r): the base-M digits of a
    flat index are the 0-based child indices along its path. `sort_map[j]` is
    the original leaf behind sorted leaf j, so `sorted_weights = leaf_weights[sort_map]`.
    """
    params: CascadeParams
    M: int = Field(..., ge=1)
    log_points: List[np.ndarray]
    log_leaf_weights: np.ndarray
    leaf_weights: np.ndarray
    cluster_weights: List[np.ndarray]
    level_maps: List[np.ndarray]
    sort_map: np.ndarray
    sorted_weights: np.ndarray

    @property
    def r(self) -> int:
        return self.params.r

    @property
    def n_leaves(self) -> int:
        return self.M ** self.params.r

    def leaf_path(self, flat: int) -> VertexPath:
        return VertexPath(indices=tuple(int(d) + 1 for d in leaf_digits(flat, self.M, self.r)))

    def flat_index(self, path: VertexPath) -> int:
        path.check_bounds(self.r, self.M)
        flat = 0
        for i in path.indices:
            flat = flat * self.M + (i - 1)
        return flat

    def pi(self, path: VertexPath) -> VertexPath:
        """The original vertex carrying sorted label `path`"""
        p = len(path)
        original = int(self.level_maps[p][self.flat_index(path)])
        return VertexPath(indices=tuple(int(d) + 1 for d in leaf_digits(original, self.M, p)))

    def sorted_cluster_weights(self, p: int) -> np.ndarray:
        """V_alpha for all vertices at depth p, in sorted-label flat order"""
        return self.cluster_weights[p][self.level_maps[p]]


def leaf_digits(flat: int, M: int, depth: int) -> List[int]:
    digits = []
    for _ in range(depth):
        flat, d = divmod(int(flat), M)
        digits.append(d)
    return digits[::-1]


def prefix_index(M: int, r: int, p: int) -> np.ndarray:
    """Depth-p ancestor (flat, depth-p numbering) of every leaf"""
    return np.arange(M ** r) // (M ** (r - p))
