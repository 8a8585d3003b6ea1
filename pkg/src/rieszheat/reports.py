"""Structured experiment reports: JSON bodies and CSV metric tables.

Every numeric record carries either an interval or an exactness flag, plus
an optional theory value and a provenance tag saying how the number was
obtained ('mc' for Monte Carlo estimates, 'quadrature', 'closed-form',
'fit', 'exact').  Reports embed the full configuration and master seed, so
a report file is sufficient to reproduce itself; serialization is key-sorted
and timestamps live in dedicated fields, which makes report bodies
byte-identical across reruns modulo those fields.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

__all__ = ["MetricRecord", "ExperimentReport"]


def _plain(value):
    """Make a value JSON-serializable (numpy scalars/arrays, tuples, inf)."""
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float):
        if value != value:
            return "nan"
        if value == float("inf"):
            return "inf"
        if value == float("-inf"):
            return "-inf"
        return value
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    return value


@dataclass
class MetricRecord:
    name: str
    estimate: float
    interval: tuple | None = None
    exact: bool = False
    theory_value: float | None = None
    provenance: str = "mc"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.interval is None and not self.exact:
            raise ValueError(
                f"record {self.name!r} needs an interval or the exact flag"
            )

    def as_dict(self) -> dict:
        out = {
            "name": self.name,
            "estimate": _plain(self.estimate),
            "provenance": self.provenance,
        }
        if self.interval is not None:
            out["interval"] = [_plain(self.interval[0]), _plain(self.interval[1])]
        if self.exact:
            out["exact"] = True
        if self.theory_value is not None:
            out["theory_value"] = _plain(self.theory_value)
        if self.extra:
            out["extra"] = _plain(self.extra)
        return out


@dataclass
class ExperimentReport:
    command: str
    config: dict
    master_seed: int
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    created: float = field(default_factory=time.time)
    finished: float | None = None

    def add(self, name, estimate, interval=None, exact=False, theory_value=None,
            provenance="mc", **extra) -> MetricRecord:
        rec = MetricRecord(name=name, estimate=estimate, interval=interval,
                           exact=exact, theory_value=theory_value,
                           provenance=provenance, extra=extra)
        self.records.append(rec)
        return rec

    def warn(self, message: str):
        self.warnings.append(str(message))

    def close(self):
        self.finished = time.time()

    def body(self) -> dict:
        """The reproducible part of the report (no timestamps)."""
        return {
            "command": self.command,
            "config": _plain(self.config),
            "master_seed": self.master_seed,
            "records": [r.as_dict() for r in self.records],
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        doc = dict(self.body())
        doc["timestamps"] = {"created": self.created, "finished": self.finished}
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["name", "estimate", "interval_lo", "interval_hi",
                         "exact", "theory_value", "provenance"])
        for r in self.records:
            lo, hi = (r.interval if r.interval is not None else ("", ""))
            writer.writerow([
                r.name, _plain(r.estimate), _plain(lo), _plain(hi),
                int(r.exact), "" if r.theory_value is None else _plain(r.theory_value),
                r.provenance,
            ])
        return buf.getvalue()
