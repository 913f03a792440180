# Cascades and fields
from engine.services.cascade_service import CascadeService
from engine.services.field_service import FieldService
from engine.services.clause_service import ClauseService

# Functional
from engine.services.functional_service import FunctionalService
from engine.services.recursion_service import RecursionService, RpcRecursion

# Finite systems
from engine.services.system_service import SystemService
from engine.services.cavity_service import CavityService

# Search
from engine.services.optimizer_service import OptimizerService
