import os
from pathlib import Path
from functools import lru_cache
from typing import Any, Dict, Optional, Tuple, Union
from dotenv import load_dotenv


class EnvConfigError(Exception):
    """Raised when an environment variable is missing or cannot be cast"""
    pass


# name -> (default, type)
SETTINGS: Dict[str, Tuple[Any, type]] = {
    "RPC_SEED": (20240101, int),
    "RPC_WORKERS": (1, int),
    "RPC_LOG_DIR": ("logs", str),
    "RPC_ENUMERATION_CAP": (24, int),
    "RPC_TRUNCATION_BUDGET": (0.05, float),
    "RPC_MAX_LEAVES": (4096, int),
    "MODE": ("production", str),
}


def cast_value(key: str, value: str, cast_type: type) -> Any:
    try:
        if cast_type == bool:
            return value.lower() in ('true', '1', 'yes', 'on')
        return cast_type(value)
    except (ValueError, TypeError) as e:
        raise EnvConfigError(f"Failed to cast {key}={value!r} to {cast_type.__name__}: {e}")


class EnvConfig:
    """
    Process environment, optionally extended by a .env file.

    Run seed, worker count, log directory, enumeration cap, cascade
    truncation budget, leaf cap and MODE come from here whenever neither the
    command line nor the run config sets them. See SETTINGS for the defaults.
    """

    def __init__(self, env_path: Optional[Union[str, Path]] = None):
        self.env_file = self._load_env_file(env_path)

    @staticmethod
    def _load_env_file(env_path: Optional[Union[str, Path]] = None) -> Optional[Path]:
        # an explicit path must exist; ./.env is optional
        env_file = Path(env_path) if env_path else Path('.env')
        if not env_file.exists():
            if env_path:
                raise EnvConfigError(f"Environment file not found: {env_file}")
            return None
        load_dotenv(env_file)
        return env_file

    @staticmethod
    def get_variable(key: str, default: Any = None, cast_type: type = str, required: bool = False) -> Any:
        """
        Typed lookup of one variable.

        Raises:
            EnvConfigError: the variable is required and unset, or its value does not cast
        """
        value = os.getenv(key)
        if value is None:
            if required:
                raise EnvConfigError(f"Required environment variable missing: {key}")
            return default
        return cast_value(key, value, cast_type)

    def setting(self, key: str) -> Any:
        default, cast_type = SETTINGS[key]
        return self.get_variable(key, default, cast_type)

    def default_seed(self) -> int:
        return self.setting("RPC_SEED")

    def workers(self) -> int:
        return max(1, self.setting("RPC_WORKERS"))

    def log_dir(self) -> Path:
        return Path(self.setting("RPC_LOG_DIR"))

    def enumeration_cap(self) -> int:
        return self.setting("RPC_ENUMERATION_CAP")

    def truncation_budget(self) -> float:
        return self.setting("RPC_TRUNCATION_BUDGET")

    def max_leaves(self) -> int:
        return self.setting("RPC_MAX_LEAVES")

    def mode(self) -> str:
        return self.setting("MODE")


@lru_cache()
def load_config(env_path: Optional[Union[str, Path]] = None) -> EnvConfig:
    """
    Get or create environment configuration.

    Example:
        >>> env = load_config()
        >>> env.workers()
        1
    """
    return EnvConfig(env_path)
