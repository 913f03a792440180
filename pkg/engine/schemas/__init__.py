"""
Schema definitions for the engine.

Base schemas come first; every other module only depends on those listed above it.
"""
from engine.schemas.base_schemas import BaseSchema, ArraySchema, Estimate, FunctionalEstimate

from engine.schemas.cascade_schemas import VertexPath, CascadeParams, TruncatedCascade
from engine.schemas.field_schemas import OrderParamH, FieldSample, UltrametricGaussian
from engine.schemas.clause_schemas import (
    KSpinModel,
    KSatModel,
    PertModel,
    ClauseModel,
    DilutedModel,
    ClauseInstance,
)
from engine.schemas.functional_schemas import (
    ZDistribution,
    TerminalFunction,
    RecursionSpec,
    RecursionResult,
    TiltResult,
    LeafTerms,
    InvarianceReport,
)
from engine.schemas.system_schemas import (
    ClauseGroup,
    HamiltonianInstance,
    ReplicaBatch,
    McmcTrace,
    GGSpec,
    GGResidual,
    OverlapBins,
)
from engine.schemas.cavity_schemas import CavitySpec, CavityField, CavityResult, CavityDraw
from engine.schemas.search_schemas import SearchSpec, SearchPoint, TraceEntry, SearchResult
from engine.schemas.run_schemas import RunConfig
