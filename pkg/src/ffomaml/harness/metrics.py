"""Forecast error metrics and result tables."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import DimensionMismatch, EmptyInput

MAPE_EPS = 1e-9


@dataclass
class MetricsRecord:
    mse: float
    mae: float
    mape: Optional[float]
    task_count: int = 0
    method: str = ""
    seed: Optional[int] = None
    timestamp: Optional[str] = None

    def __post_init__(self):
        for name in ("mse", "mae", "mape"):
            val = getattr(self, name)
            if val is not None and not (math.isfinite(val) and val >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {val}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))


def compute_metrics(predictions: Sequence[float], targets: Sequence[float],
                    task_count: int = 0, method: str = "", seed=None,
                    mape_eps: float = MAPE_EPS) -> MetricsRecord:
    """MSE, MAE and MAPE; MAPE skips targets with ``|y| <= mape_eps``.

    MAPE is None when every target is near zero.
    """
    pred = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if pred.shape != y.shape:
        raise DimensionMismatch(f"{pred.shape} predictions for {y.shape} targets")
    if pred.size == 0:
        raise EmptyInput("no predictions")
    err = pred - y
    keep = np.abs(y) > mape_eps
    mape = float(np.mean(np.abs(err[keep]) / np.abs(y[keep]))) if keep.any() else None
    return MetricsRecord(float(np.mean(err ** 2)), float(np.mean(np.abs(err))), mape,
                         task_count, method, seed)


def format_table(records: Sequence[MetricsRecord]) -> str:
    """Plain-text results table with one row per method, four decimals."""
    width = max([len("Method")] + [len(r.method) for r in records])
    lines = [f"{'Method':<{width}}  {'MSE':>8}  {'MAE':>8}  {'MAPE':>8}"]
    for r in records:
        mape = "-" if r.mape is None else f"{r.mape:.4f}"
        lines.append(f"{r.method:<{width}}  {r.mse:>8.4f}  {r.mae:>8.4f}  {mape:>8}")
    return "\n".join(lines)
