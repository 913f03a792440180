import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from engine.schemas.field_schemas import OrderParamH
from engine.schemas.run_schemas import RunConfig
from engine.utils.config_util import load_config
from engine.utils.error_util import ErrorHandling
from engine.utils.json_utils import stable_hash


def load_run_config(path: Optional[str]) -> tuple[RunConfig, dict, Path]:
    """
    Read and validate a JSON run configuration.

    Returns:
        The validated config, its raw document and the directory relative
        file references are resolved against

    Raises:
        ConfigError: with "line L column C" for malformed JSON or the dotted
            field path for a failed validation
    """
    if path is None:
        return RunConfig(), {}, Path.cwd()
    config_path = Path(path)
    if not config_path.exists():
        raise ErrorHandling.invalid_config(f"config file not found: {config_path}", "--config")
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise ErrorHandling.invalid_config(error.msg, f"{config_path}: line {error.lineno} column {error.colno}")
    if not isinstance(raw, dict):
        raise ErrorHandling.invalid_config("the config must be a JSON object", str(config_path))
    try:
        config = RunConfig(**raw)
    except ValidationError as error:
        first = error.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ErrorHandling.invalid_config(first["msg"], location)
    h_file = config.h.file if config.h else None
    if h_file is not None:
        h_path = Path(h_file)
        h_path = h_path if h_path.is_absolute() else config_path.parent / h_path
        if not h_path.exists():
            raise ErrorHandling.invalid_config(f"file not found: {h_path}", "h.file")
    return config, raw, config_path.parent


class RunContext:
    """Everything a command needs: validated config, seed, worker count and record stamping"""

    def __init__(self, command: str, config: RunConfig, raw: dict, base_dir: Path,
                 seed: Optional[int] = None, workers: Optional[int] = None):
        env = load_config()
        self.command = command
        self.config = config
        self.base_dir = base_dir
        self.seed = seed if seed is not None else (config.seed if config.seed is not None else env.default_seed())
        self.workers = workers or config.workers or env.workers()
        self.config_hash = stable_hash(config.model_dump(mode="json", by_alias=True), length=64)
        self.raw = raw
        self.started_at = datetime.now(timezone.utc).isoformat()

    def order_parameter(self, r: Optional[int] = None) -> OrderParamH:
        """The h section, a malformed h file reported as a config error at h.file"""
        try:
            return self.config.order_parameter(self.base_dir, r)
        except json.JSONDecodeError as error:
            raise ErrorHandling.invalid_config(error.msg, f"h.file: line {error.lineno} column {error.colno}")
        except ValidationError as error:
            first = error.errors()[0]
            location = ".".join(["h", *(str(part) for part in first["loc"])])
            raise ErrorHandling.invalid_config(first["msg"], location)

    def require(self, section: str):
        value = getattr(self.config, section)
        if value is None:
            raise ErrorHandling.invalid_config(f"command {self.command} needs a '{section}' section", section)
        return value

    def record(self, kind: str, **fields) -> dict:
        return {
            "command": self.command,
            "kind": kind,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "started_at": self.started_at,
            "finished_at": datetime.now(timezone.utc).isoformat(),
            **fields,
        }
