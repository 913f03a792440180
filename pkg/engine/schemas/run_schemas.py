import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import Field, model_validator

from engine.schemas.base_schemas import BaseSchema
from engine.schemas.cascade_schemas import CascadeParams
from engine.schemas.cavity_schemas import CavitySpec
from engine.schemas.clause_schemas import DilutedModel
from engine.schemas.field_schemas import OrderParamH
from engine.schemas.functional_schemas import RecursionSpec
from engine.schemas.search_schemas import SearchSpec
from engine.schemas.system_schemas import GGSpec


class CascadeSection(CascadeParams):
    """Without M the branching is chosen from the budget section"""
    M: Optional[int] = Field(default=None, ge=1)

    def params(self) -> CascadeParams:
        return CascadeParams(r=self.r, zetas=self.zetas, overlaps=self.overlaps)


class HSection(BaseSchema):
    """
    h inline (`values`), from a JSON file holding the same keys (`file`),
    or constant (`constant`). A relative file path is resolved against the
    directory of the run config.
    """
    r: Optional[int] = None
    G: int = Field(default=1, ge=1)
    values: Optional[List[float]] = None
    file: Optional[str] = None
    constant: Optional[float] = None
    omega_star_coordinate: bool = False
    omega_star: float = Field(default=0.5, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def validate_source(self):
        sources = sum(x is not None for x in (self.values, self.file, self.constant))
        if sources > 1:
            raise ValueError("give only one of values, file or constant")
        return self


class BudgetSection(BaseSchema):
    n_samples: int = Field(default=1000, ge=1)
    n_replicates: int = Field(default=1000, ge=1)
    poisson_cap: Optional[int] = Field(default=None, ge=0)
    weights: Literal["sorted", "original"] = "sorted"
    with_perturbation: Optional[bool] = None
    omega_star_infimum: bool = False
    level: int = Field(default=0, ge=0)
    x_values: Tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    truncation_budget: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    max_leaves: Optional[int] = Field(default=None, ge=1)


class FiniteSection(BaseSchema):
    N: int = Field(default=8, ge=1)
    N_list: Tuple[int, ...] = (8, 12, 16)
    n_instances: int = Field(default=20, ge=1)
    method: Literal["exact", "mcmc"] = "exact"
    n_replicas: int = Field(default=1000, ge=1)
    burn_in: int = Field(default=100, ge=0)
    thinning: int = Field(default=10, ge=1)
    n_chains: int = Field(default=16, ge=2)
    n_mcmc_samples: int = Field(default=200, ge=2)
    n_nodes: int = Field(default=8, ge=2)
    delta: float = Field(default=0.0, ge=0.0)
    threshold: float = Field(default=0.0, ge=0.0)
    histogram: bool = True


class GGSection(GGSpec):
    method: Literal["exact", "mc"] = "exact"
    n_sets: int = Field(default=500, ge=1)
    thresholds: Tuple[float, ...] = ()

    def to_spec(self) -> GGSpec:
        return GGSpec(**{name: getattr(self, name) for name in GGSpec.model_fields})


class CavitySection(CavitySpec):
    relabel: bool = False


class SearchSection(SearchSpec):
    depths: Tuple[int, ...] = (1,)


class OutputSection(BaseSchema):
    path: Optional[str] = None
    format: Literal["json-lines", "csv"] = "json-lines"
    csv: Optional[str] = None


class RunConfig(BaseSchema):
    """
    A JSON run configuration. Every command reads the sections it needs and
    ignores the rest.
    """
    model: Optional[DilutedModel] = None
    cascade: Optional[CascadeSection] = None
    h: Optional[HSection] = None
    budget: BudgetSection = BudgetSection()
    finite: FiniteSection = FiniteSection()
    recursion: Optional[RecursionSpec] = None
    gg: GGSection = GGSection()
    cavity: Optional[CavitySection] = None
    search: SearchSection = SearchSection()
    output: OutputSection = OutputSection()
    seed: Optional[int] = None
    workers: Optional[int] = Field(default=None, ge=1)

    def order_parameter(self, base_dir: Path, r: Optional[int] = None) -> OrderParamH:
        """The h section as an OrderParamH; a missing section means h = 0"""
        section = self.h or HSection()
        depth = section.r or r or (self.cascade.r if self.cascade else 1)
        if section.file is not None:
            path = Path(section.file)
            path = path if path.is_absolute() else base_dir / path
            data = json.loads(path.read_text())
            return OrderParamH(**{"r": depth, "G": section.G, **data})
        if section.values is not None:
            return OrderParamH(r=depth, G=section.G, values=np.asarray(section.values, dtype=float),
                               omega_star_coordinate=section.omega_star_coordinate,
                               omega_star=section.omega_star)
        return OrderParamH.constant(depth, section.G, section.constant or 0.0, section.omega_star_coordinate)
