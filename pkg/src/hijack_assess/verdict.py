from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any


class Status(str, enum.Enum):
    LEGITIMATE = "legitimate"
    INCONCLUSIVE = "inconclusive"
    NOT_COVERED = "not_covered"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class FilterVerdict:
    """Outcome of one filter for one alarm; ``evidence`` is JSON-friendly."""

    status: Status
    evidence: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def legitimate(self) -> bool:
        return self.status is Status.LEGITIMATE

    @property
    def covered(self) -> bool:
        return self.status is not Status.NOT_COVERED

    @classmethod
    def legit(cls, **evidence: Any) -> "FilterVerdict":
        return cls(Status.LEGITIMATE, evidence)

    @classmethod
    def inconclusive(cls, **evidence: Any) -> "FilterVerdict":
        return cls(Status.INCONCLUSIVE, evidence)

    @classmethod
    def not_covered(cls, **evidence: Any) -> "FilterVerdict":
        return cls(Status.NOT_COVERED, evidence)

    @classmethod
    def discarded(cls, **evidence: Any) -> "FilterVerdict":
        return cls(Status.DISCARDED, evidence)

    def to_dict(self) -> dict[str, Any]:
        return {"status": self.status.value, "evidence": self.evidence}
