"""Atomic JSON and CSV output."""

import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Callable

import numpy as np
import pandas as pd
from pydantic import BaseModel

logger = logging.getLogger(__name__)


def to_jsonable(value: Any) -> Any:
    """Convert NumPy and pydantic values to plain JSON types.

    Non-finite floats become None.
    """
    if isinstance(value, BaseModel):
        return to_jsonable(value.model_dump(by_alias=True))
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def _write_atomic(path: Path, write: Callable[[Any], None]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            write(f)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {path}")


def write_json(path: Path, data: Any) -> Path:
    """Write data as indented UTF-8 JSON, keys in insertion order."""
    payload = to_jsonable(data)

    def write(f):
        json.dump(payload, f, indent=2, ensure_ascii=False, allow_nan=False)
        f.write("\n")

    _write_atomic(Path(path), write)
    return Path(path)


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    """Write a frame as comma-separated values with a header and no index."""

    def write(f):
        frame.to_csv(f, index=False, sep=",", decimal=".", lineterminator="\n")

    _write_atomic(Path(path), write)
    return Path(path)
