from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, model_validator


class ScoreKind(str, Enum):
    SSE = "sse"
    CRPS = "crps"
    DSS = "dss"
    IS1 = "is1"
    IS2 = "is2"


INTERVAL_KINDS = (ScoreKind.IS1, ScoreKind.IS2)


class ScoringRule(BaseModel):
    """
    A negatively oriented scoring rule S(F, y). `alpha` only matters for the
    interval scores; it is dropped for the other kinds so equal rules compare equal.
    """
    model_config = ConfigDict(frozen=True)

    kind: ScoreKind
    alpha: Optional[float] = None

    @model_validator(mode="before")
    @classmethod
    def _normalize(cls, data: Any) -> Any:
        if isinstance(data, str):
            data = _parse_fields(data)
        if isinstance(data, dict) and str(getattr(data.get("kind"), "value", data.get("kind"))).lower() not in ("is1", "is2"):
            data = {k: v for k, v in data.items() if k != "alpha"}
        return data

    @model_validator(mode="after")
    def _check_alpha(self) -> "ScoringRule":
        if self.kind in INTERVAL_KINDS and (self.alpha is None or not 0.0 < self.alpha < 1.0):
            raise ValueError(f"{self.kind.value} requires 0 < alpha < 1, got {self.alpha}")
        return self

    @classmethod
    def parse(cls, text: str) -> "ScoringRule":
        return cls.model_validate(text)

    @classmethod
    def sse(cls) -> "ScoringRule":
        return cls(kind=ScoreKind.SSE)

    @classmethod
    def crps(cls) -> "ScoringRule":
        return cls(kind=ScoreKind.CRPS)

    @classmethod
    def dss(cls) -> "ScoringRule":
        return cls(kind=ScoreKind.DSS)

    @classmethod
    def is1(cls, alpha: float = 0.2) -> "ScoringRule":
        return cls(kind=ScoreKind.IS1, alpha=alpha)

    @classmethod
    def is2(cls, alpha: float = 0.2) -> "ScoringRule":
        return cls(kind=ScoreKind.IS2, alpha=alpha)

    def __str__(self) -> str:
        if self.kind in INTERVAL_KINDS:
            return f"{self.kind.value}:{self.alpha!r}"
        return self.kind.value


def _parse_fields(text: str) -> dict:
    name, _, alpha = text.strip().lower().partition(":")
    fields: dict = {"kind": name}
    if alpha:
        fields["alpha"] = float(alpha)
    return fields


class ScoreSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    total: float
    per_point_mean: float
    n: int

    @classmethod
    def from_total(cls, total: float, n: int) -> "ScoreSummary":
        # total is rebuilt from the mean so total == per_point_mean * n holds bit for bit
        mean = float(total) / n
        return cls(total=mean * n, per_point_mean=mean, n=n)
