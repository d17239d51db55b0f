"""Audit reports shared by all modules."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def _clean(value):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return value


@dataclass
class AuditReport:
    """Outcome of a checkable statement.

    Parameters
    ----------
    name : str
    status : str
        ``"PASS"`` or ``"FAIL"``.
    metrics : dict
        Scalar diagnostics.
    tables : dict
        Named lists of row dicts or arrays for plotting.
    notes : list of str
    """

    name: str
    status: str
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.status not in ("PASS", "FAIL"):
            raise ValueError(f"status must be PASS or FAIL, got {self.status!r}")

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def to_dict(self) -> dict:
        return _clean(dict(name=self.name, status=self.status, metrics=self.metrics,
                           tables=self.tables, notes=list(self.notes)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"
