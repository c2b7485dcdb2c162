import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from scoretree.core.errors import (
    DatasetFormatError,
    EmptyFileError,
    MissingResponseError,
    MissingValueError,
    NonFiniteValueError,
    NonNumericResponseError,
    RaggedRowError,
    SchemaMismatchError,
)
from scoretree.schemas.dataset import ColumnKind, ColumnSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.17g"


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Columnar table of predictors plus one real response. Numeric predictor
    columns hold float64, categorical ones hold str.
    """
    columns: Tuple[ColumnSpec, ...]
    predictors: pd.DataFrame
    response: np.ndarray
    response_name: str = "y"

    def __post_init__(self):
        if list(self.predictors.columns) != [c.name for c in self.columns]:
            raise SchemaMismatchError("predictor frame does not match the column specs")
        if self.response.shape != (len(self.predictors),):
            raise SchemaMismatchError("response length does not match the predictor rows")
        if not np.all(np.isfinite(self.response)):
            raise NonFiniteValueError(f"response '{self.response_name}' contains a non-finite value")
        for spec in self.columns:
            col = self.predictors[spec.name]
            if col.isna().any():
                raise MissingValueError(f"missing value in column '{spec.name}'")
            if spec.kind is ColumnKind.NUMERIC and not np.all(np.isfinite(col.to_numpy(dtype=np.float64))):
                raise NonFiniteValueError(f"column '{spec.name}' contains a non-finite value")
            if spec.kind is ColumnKind.CATEGORICAL and not set(col).issubset(spec.categories or ()):
                raise SchemaMismatchError(f"column '{spec.name}' has values outside its category table")

    @property
    def n(self) -> int:
        return int(self.response.size)

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def feature_names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def feature_kinds(self) -> Tuple[ColumnKind, ...]:
        return tuple(c.kind for c in self.columns)

    def column_values(self, k: int) -> np.ndarray:
        spec = self.columns[k]
        col = self.predictors[spec.name]
        if spec.kind is ColumnKind.NUMERIC:
            return col.to_numpy(dtype=np.float64)
        return col.astype(str).to_numpy(dtype=object)

    def take(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.intp)
        return Dataset(
            columns=self.columns,
            predictors=self.predictors.iloc[rows].reset_index(drop=True),
            response=self.response[rows],
            response_name=self.response_name,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = self.predictors.copy()
        frame[self.response_name] = self.response
        return frame

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.columns == other.columns
            and self.response_name == other.response_name
            and self.predictors.equals(other.predictors)
            and np.array_equal(self.response, other.response)
        )


def _parse_numeric(cells: pd.Series) -> pd.Series:
    """NaN marks a cell that is not a number."""
    stripped = cells.str.strip()
    valid = pd.to_numeric(stripped, errors="coerce").notna()
    # to_numeric may round 17-digit cells; float parsing reads them back exactly
    values = pd.Series(np.nan, index=cells.index, dtype=np.float64)
    values[valid] = stripped[valid].astype(np.float64)
    return values


def _is_numeric_column(cells: pd.Series) -> bool:
    filled = cells[cells.str.strip() != ""]
    return bool(len(filled)) and bool(_parse_numeric(filled).notna().all())


def dataset_from_frame(
    frame: pd.DataFrame,
    response_column: str,
    overrides: Optional[Mapping[str, Union[ColumnKind, str]]] = None,
) -> Dataset:
    """
    Builds a Dataset from a frame of raw cells. A column is numeric iff every
    non-empty cell parses as a number; `overrides` force a kind per column.
    """
    overrides = {k: ColumnKind(v) for k, v in (overrides or {}).items()}
    if response_column not in frame.columns:
        raise MissingResponseError(f"missing response column '{response_column}'")
    unknown = set(overrides) - set(frame.columns)
    if unknown:
        raise SchemaMismatchError(f"schema overrides name unknown columns: {sorted(unknown)}")

    cells = frame.astype(str)
    raw_response = cells[response_column]
    if (raw_response.str.strip() == "").any():
        raise MissingValueError(f"missing value in response column '{response_column}'")
    response = _parse_numeric(raw_response)
    if response.isna().any():
        bad = raw_response[response.isna()].iloc[0]
        raise NonNumericResponseError(f"non-numeric response in column '{response_column}': '{bad}'")

    specs = []
    data: Dict[str, pd.Series] = {}
    for name in frame.columns:
        if name == response_column:
            continue
        col = cells[name]
        empty = col.str.strip() == ""
        if empty.any():
            raise MissingValueError(f"missing value in column '{name}' at row {int(np.argmax(empty.to_numpy()))}")
        kind = overrides.get(name) or (ColumnKind.NUMERIC if _is_numeric_column(col) else ColumnKind.CATEGORICAL)
        if kind is ColumnKind.NUMERIC:
            values = _parse_numeric(col)
            if values.isna().any():
                raise SchemaMismatchError(f"column '{name}' is declared numeric but holds non-numeric cells")
            data[name] = values.astype(np.float64)
            specs.append(ColumnSpec(name=name, kind=kind))
        else:
            data[name] = col
            specs.append(ColumnSpec(name=name, kind=kind, categories=tuple(sorted(col.unique()))))

    predictors = pd.DataFrame(data, columns=[s.name for s in specs])
    return Dataset(
        columns=tuple(specs),
        predictors=predictors,
        response=response.to_numpy(dtype=np.float64),
        response_name=response_column,
    )


def _read_cells(path: PathLike) -> pd.DataFrame:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyFileError(f"empty file: {path}")
    except pd.errors.ParserError as e:
        raise RaggedRowError(f"ragged row in {path}: {str(e).strip()}")
    except UnicodeDecodeError as e:
        raise DatasetFormatError(f"{path} is not UTF-8 text: {e.reason} at byte {e.start}")
    # with keep_default_na=False only short rows produce NaN
    if raw.isna().any().any():
        row = int(np.argmax(raw.isna().any(axis=1).to_numpy()))
        raise RaggedRowError(f"ragged row in {path}: data row {row + 1} has too few fields")
    if raw.empty:
        raise DatasetFormatError(f"no data rows in {path}")
    return raw


def load_csv(
    path: PathLike,
    response_column: str,
    overrides: Optional[Mapping[str, Union[ColumnKind, str]]] = None,
) -> Dataset:
    raw = _read_cells(path)
    dataset = dataset_from_frame(raw, response_column, overrides)
    logger.info("Loaded %s: %d rows, %d predictors", path, dataset.n, dataset.p)
    return dataset


def load_predictors(
    path: PathLike,
    feature_names: Sequence[str],
    feature_kinds: Sequence[ColumnKind],
) -> pd.DataFrame:
    """Reads a CSV against a fitted model's schema; any response column is ignored."""
    raw = _read_cells(path)
    missing = [name for name in feature_names if name not in raw.columns]
    if missing:
        raise SchemaMismatchError(f"columns required by the model are missing: {missing}")
    data = {}
    for name, kind in zip(feature_names, feature_kinds):
        col = raw[name]
        if (col.str.strip() == "").any():
            raise MissingValueError(f"missing value in column '{name}'")
        if ColumnKind(kind) is ColumnKind.NUMERIC:
            values = _parse_numeric(col)
            if values.isna().any():
                raise SchemaMismatchError(f"column '{name}' must be numeric for this model")
            data[name] = values.astype(np.float64)
        else:
            data[name] = col
    return pd.DataFrame(data, columns=list(feature_names))


def save_csv(dataset: Dataset, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    dataset.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %d rows to %s", dataset.n, path)
