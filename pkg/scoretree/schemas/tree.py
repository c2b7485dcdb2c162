from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from scoretree.schemas.dataset import ColumnKind
from scoretree.schemas.scoring import ScoringRule

MODEL_FORMAT_VERSION = 1


class SplitRule(BaseModel):
    """
    Threshold splits route x <= threshold left; category splits route a row
    left iff its category is in left_categories.
    """
    model_config = ConfigDict(frozen=True)

    feature: int = Field(ge=0)
    threshold: Optional[float] = None
    left_categories: Optional[Tuple[str, ...]] = None

    @field_validator("left_categories")
    @classmethod
    def _canonical_categories(cls, value):
        if value is None:
            return value
        if not value:
            raise ValueError("left category set is empty")
        return tuple(sorted(set(value)))

    @model_validator(mode="after")
    def _one_kind(self) -> "SplitRule":
        if (self.threshold is None) == (self.left_categories is None):
            raise ValueError("a split has either a threshold or a category set")
        return self

    @property
    def is_categorical(self) -> bool:
        return self.left_categories is not None


class TreeConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    rule: ScoringRule
    max_depth: int = Field(default=4, ge=1)
    min_node_size: int = Field(default=50, ge=1)
    quantile_step: float = Field(default=0.05, gt=0.0, le=0.5)
    kappa: float = Field(default=0.0, ge=0.0, le=1.0)
    discrete_unique_cutoff: int = Field(default=10, ge=1)
    seed: int = 0
    pruning: bool = True


# --- Model document (JSON persistence) ---

class NodeDocument(BaseModel):
    id: int = Field(ge=0)
    type: Literal["internal", "leaf"]
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left_categories: Optional[List[str]] = None
    delta: Optional[float] = None
    n: Optional[int] = None
    total: Optional[float] = None
    samples: Optional[List[float]] = None


class ModelDocument(BaseModel):
    version: int
    config: TreeConfig
    feature_names: List[str]
    feature_kinds: List[ColumnKind]
    response_name: str
    root_delta: float
    root_n: int
    variance_floor: float
    nodes: List[NodeDocument]


# --- Reports ---

class SplitRecord(BaseModel):
    node: int
    depth: int
    feature: int
    feature_name: str
    threshold: Optional[float] = None
    left_categories: Optional[Tuple[str, ...]] = None
    delta: float
    n: int

    def describe(self) -> str:
        if self.left_categories is not None:
            return f"{self.feature_name} in {{{', '.join(self.left_categories)}}}"
        return f"{self.feature_name} <= {self.threshold:.6g}"


class TreeStats(BaseModel):
    depth: int
    leaf_count: int
    splits: List[SplitRecord]

    @property
    def thresholds(self) -> List[float]:
        return [s.threshold for s in self.splits if s.threshold is not None]
