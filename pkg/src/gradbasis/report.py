"""Verification report record shared by all verifiers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field


@dataclass
class VerificationReport:
    """Outcome of one theorem check.

    ``quantities`` holds the compared values (``L``, optimal values, gaps),
    ``tolerances`` the thresholds they were compared against, and ``verdicts``
    one boolean per sub-check.  ``passed`` is the conjunction of ``verdicts``.
    """

    check: str
    loss: float
    quantities: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.verdicts.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return _jsonable(d)

    @classmethod
    def from_dict(cls, d: dict) -> VerificationReport:
        d = dict(d)
        d.pop("passed", None)
        return cls(**d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and callable(obj.item):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj
