from datetime import datetime
from pathlib import Path
import hashlib
import json
from typing import Any

import numpy as np


class JSONEncoder(json.JSONEncoder):
    """JSON encoder for result records: numpy values, datetimes and paths"""

    def default(self, obj):
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.integer):
            return int(obj)
        if isinstance(obj, np.floating):
            return float(obj)
        if isinstance(obj, np.bool_):
            return bool(obj)
        if isinstance(obj, (datetime, Path)):
            return str(obj)
        if hasattr(obj, "model_dump"):
            return obj.model_dump(mode="json")
        return super().default(obj)


def to_json(data: dict) -> dict:
    """Prepare dictionary for JSON serialization"""
    if not data:
        return data
    return json.loads(json.dumps(data, cls=JSONEncoder))


def dumps_record(record: dict) -> str:
    """One self-describing JSON line"""
    return json.dumps(record, cls=JSONEncoder, sort_keys=True, separators=(",", ":"))


def stable_hash(data: Any, length: int = 16) -> str:
    """sha256 of the canonical JSON form, truncated"""
    canonical = json.dumps(data, cls=JSONEncoder, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:length]
