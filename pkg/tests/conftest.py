from typing import Optional, Sequence

import numpy as np
import pandas as pd
import pytest

from scoretree.db.datasets import Dataset
from scoretree.schemas.dataset import ColumnKind, ColumnSpec
from scoretree.schemas.scoring import ScoringRule

ALL_RULES = [ScoringRule.sse(), ScoringRule.crps(), ScoringRule.dss(), ScoringRule.is1(0.2), ScoringRule.is2(0.2)]


def numeric_dataset(x: Sequence[float], y: Sequence[float], name: str = "x") -> Dataset:
    return Dataset(
        columns=(ColumnSpec(name=name, kind=ColumnKind.NUMERIC),),
        predictors=pd.DataFrame({name: np.asarray(x, dtype=np.float64)}),
        response=np.asarray(y, dtype=np.float64),
    )


def mixed_dataset(x: Sequence[float], colour: Sequence[str], y: Sequence[float]) -> Dataset:
    colour = [str(c) for c in colour]
    return Dataset(
        columns=(
            ColumnSpec(name="x", kind=ColumnKind.NUMERIC),
            ColumnSpec(name="colour", kind=ColumnKind.CATEGORICAL, categories=tuple(sorted(set(colour)))),
        ),
        predictors=pd.DataFrame({"x": np.asarray(x, dtype=np.float64), "colour": colour}),
        response=np.asarray(y, dtype=np.float64),
    )


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240611))


@pytest.fixture
def step_data(rng) -> Dataset:
    """Response mean jumps at x = 0; 400 rows."""
    x = rng.uniform(-1.0, 1.0, size=400)
    y = np.where(x <= 0.0, 0.0, 5.0) + rng.normal(0.0, 1.0, size=400)
    return numeric_dataset(x, y)


@pytest.fixture
def coloured_data(rng) -> Dataset:
    n = 300
    x = rng.uniform(0.0, 1.0, size=n)
    colour = rng.choice(["red", "green", "blue"], size=n)
    y = np.where(colour == "red", 10.0, 0.0) + x + rng.normal(0.0, 0.5, size=n)
    return mixed_dataset(x, colour, y)


def random_samples(rng: np.random.Generator, n: int, ties: Optional[bool] = None) -> np.ndarray:
    """Mixed-distribution samples; with ties, values are rounded onto a coarse grid."""
    family = rng.integers(0, 3)
    if family == 0:
        values = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 3.0), size=n)
    elif family == 1:
        values = rng.lognormal(rng.uniform(-1, 2), rng.uniform(0.1, 1.0), size=n)
    else:
        values = rng.exponential(rng.uniform(0.5, 5.0), size=n)
    if ties if ties is not None else rng.random() < 0.3:
        values = np.round(values, 0)
    return values
