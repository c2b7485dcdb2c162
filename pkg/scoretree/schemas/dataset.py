from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


class ColumnSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: ColumnKind
    categories: Optional[Tuple[str, ...]] = None
