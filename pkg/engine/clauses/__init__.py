from engine.clauses.base_clause import BaseClause
from engine.clauses.kspin_clause import KSpinClause
from engine.clauses.ksat_clause import KSatClause
from engine.clauses.perturbation_clause import PerturbationClause
from engine.utils.error_util import ErrorHandling

# Available clause laws, keyed by the `variant` field of a clause model.
# A new law subclasses BaseClause and registers here.
CLAUSES = {
    "kspin": KSpinClause,
    "ksat": KSatClause,
    "pert": PerturbationClause,
}


def build_clause(model) -> BaseClause:
    clause_class = CLAUSES.get(model.variant)
    if clause_class is None:
        raise ErrorHandling.invalid_parameter(f"Unknown clause variant: {model.variant}")
    return clause_class(model)


__all__ = ["BaseClause", "CLAUSES", "build_clause", "KSpinClause", "KSatClause", "PerturbationClause"]
