import logging
from pathlib import Path
from typing import Iterable, Optional, Union

import pandas as pd

from scoretree.core.errors import DatasetFormatError, EmptyFileError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RESULT_COLUMNS = ["replicate", "train_size", "build", "eval", "kappa", "in_sample", "out_sample"]


def provenance_line(config_hash: str, base_seed: int, test_seed: Optional[int]) -> str:
    return f"scoretree config_hash={config_hash[:16]} base_seed={base_seed} test_seed={test_seed}"


def write_table(frame: pd.DataFrame, path: PathLike, header_lines: Iterable[str] = ()) -> None:
    """CSV with '# ' comment lines on top; float formatting is repr-exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        frame.to_csv(fh, index=False, lineterminator="\n")
    logger.info("Wrote %s (%d rows)", path, len(frame))


def read_table(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path, comment="#", float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise EmptyFileError(f"empty file: {path}")
    except pd.errors.ParserError as e:
        raise DatasetFormatError(f"malformed table {path}: {str(e).strip()}")
    except UnicodeDecodeError as e:
        raise DatasetFormatError(f"{path} is not UTF-8 text: {e.reason} at byte {e.start}")


def read_results(path: PathLike) -> pd.DataFrame:
    frame = read_table(path)
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetFormatError(f"{path} is not a results table, missing columns {missing}")
    frame["build"] = frame["build"].astype(str)
    frame["eval"] = frame["eval"].astype(str)
    return frame[RESULT_COLUMNS]
