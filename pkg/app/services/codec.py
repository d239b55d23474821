import json
import logging
import os
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from app.services.nkmeans import TRACE_COLUMNS, RoundMetrics

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
TRAJECTORY_COLUMNS = ["round", "agent", "cluster", "coord_index", "value"]


def json_serial(obj):
    """JSON serializer for objects not serializable by default json code"""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "model_dump"):
        return obj.model_dump()
    raise TypeError(f"Type {type(obj)} not serializable")


def rho_tag(rho: float) -> str:
    """File-name form of rho: shortest repr, so 1000.0 -> 1000 and 0.5 -> 0.5."""
    value = float(rho)
    return str(int(value)) if value.is_integer() else repr(value)


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path: str, payload: Any) -> str:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, default=json_serial, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info(f"Wrote {path}")
    return path


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_csv(path: str, frame: pd.DataFrame) -> str:
    _ensure_parent(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {path} ({len(frame)} rows)")
    return path


def trace_frame(trace: Sequence[RoundMetrics]) -> pd.DataFrame:
    rows = [[getattr(m, c) for c in TRACE_COLUMNS] for m in trace]
    frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    frame["partition_changed"] = frame["partition_changed"].astype(int)
    return frame


def trajectory_frame(trajectory: Iterable[Tuple[int, np.ndarray]]) -> pd.DataFrame:
    """Long format: one row per (round, agent, cluster, coordinate)."""
    rows: List[Tuple[int, int, int, int, float]] = []
    for r, x in trajectory:
        M, K, p = x.shape
        for m in range(M):
            for k in range(K):
                for i in range(p):
                    rows.append((r, m, k, i, float(x[m, k, i])))
    return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)
