from engine.dependencies.logging import logger


class EngineError(Exception):
    """Base class for every error raised by the engine"""
    pass


class ParameterError(EngineError, ValueError):
    """An input lies outside the domain of the operation"""
    pass


class ConfigError(EngineError):
    """A run configuration could not be read or validated"""

    def __init__(self, detail: str, location: str = ""):
        self.detail = detail
        self.location = location
        super().__init__(f"{location}: {detail}" if location else detail)


class NumericalError(EngineError):
    """A numerical operation produced a non-finite or otherwise unusable value"""

    def __init__(self, operation: str, detail: str):
        self.operation = operation
        self.detail = detail
        super().__init__(f"{operation}: {detail}")


class EnumerationCapError(NumericalError):
    """Exact enumeration was requested above the configured spin cap"""
    pass


class ErrorHandling:
    """Builds logged engine exceptions; call sites `raise` the returned object"""

    @staticmethod
    def invalid_parameter(detail: str = "Invalid parameter") -> ParameterError:
        logger.error(f"Parameter error: {detail}")
        return ParameterError(detail)

    @staticmethod
    def invalid_config(detail: str = "Invalid configuration", location: str = "") -> ConfigError:
        logger.error(f"Config error at {location or '<root>'}: {detail}")
        return ConfigError(detail, location)

    @staticmethod
    def numerical_failure(operation: str, detail: str = "Non-finite value") -> NumericalError:
        logger.error(f"Numerical error in {operation}: {detail}")
        return NumericalError(operation, detail)

    @staticmethod
    def enumeration_cap(n_spins: int, cap: int) -> EnumerationCapError:
        detail = f"N={n_spins} exceeds the enumeration cap {cap}; use the mcmc estimator"
        logger.error(f"Enumeration error: {detail}")
        return EnumerationCapError("free_energy", detail)
