"""
Seeded generators for piecewise synthetic regression data.

All randomness comes from numpy.random.Generator(PCG64(seed)): streams are
stable across platforms and replicate b uses seed base_seed + b.
"""
import logging
import math
from typing import Tuple

import numpy as np
import pandas as pd

from scoretree.core.errors import InvalidParameterError
from scoretree.db.datasets import Dataset
from scoretree.schemas.dataset import ColumnKind, ColumnSpec
from scoretree.schemas.synth import (
    Distribution,
    Exponential,
    Lognormal,
    MomentEstimate,
    Normal,
    PiecewiseSpec,
    RegionSpec,
)

logger = logging.getLogger(__name__)

MIN_MC_DRAWS = 10_000


def _lgn(lower: float, upper: float, meanlog: float, sdlog: float) -> RegionSpec:
    return RegionSpec(lower=lower, upper=upper, dist=Lognormal(meanlog=meanlog, sdlog=sdlog))


EASY = PiecewiseSpec(
    name="easy",
    regions=(
        _lgn(-1.0, -0.5, 2.0, 1 / 2),
        _lgn(-0.5, 0.0, 3.0, 1 / 3),
        _lgn(0.0, 0.5, 4.0, 1 / 4),
        _lgn(0.5, 1.0, 5.0, 1 / 5),
    ),
)

HARD = PiecewiseSpec(
    name="hard",
    regions=(
        _lgn(-1.0, -0.5, 1 / 2, 0.5),
        _lgn(-0.5, 0.0, 1 / 3, 0.6),
        _lgn(0.0, 0.5, 1 / 4, 0.3),
        _lgn(0.5, 1.0, 1 / 5, 0.3),
    ),
)

TOY = PiecewiseSpec(
    name="toy",
    regions=(
        RegionSpec(lower=-1.0, upper=0.0, dist=Normal(mu=1.0, sigma=2.0)),
        RegionSpec(lower=0.0, upper=1.0, dist=Exponential(rate=1.0)),
    ),
)

PRESETS = {"easy": EASY, "hard": HARD, "toy": TOY}


def preset(name: str) -> PiecewiseSpec:
    try:
        return PRESETS[name.strip().lower()]
    except KeyError:
        raise InvalidParameterError(f"unknown preset '{name}' (choose from {', '.join(PRESETS)})")


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def draw(dist: Distribution, size: int, rng: np.random.Generator) -> np.ndarray:
    if isinstance(dist, Lognormal):
        return rng.lognormal(mean=dist.meanlog, sigma=dist.sdlog, size=size)
    if isinstance(dist, Normal):
        return rng.normal(loc=dist.mu, scale=dist.sigma, size=size)
    return rng.exponential(scale=1.0 / dist.rate, size=size)


def region_index(spec: PiecewiseSpec, x: np.ndarray) -> np.ndarray:
    """First region is closed on both ends, the others are (lower, upper]."""
    return np.searchsorted(np.asarray(spec.boundaries), x, side="left")


def generate(spec: PiecewiseSpec, n: int, seed: int) -> Dataset:
    """x ~ Uniform(spec.lower, spec.upper); y drawn from the region holding x."""
    if n < 1:
        raise InvalidParameterError(f"n must be at least 1, got {n}")
    rng = rng_for(seed)
    x = rng.uniform(spec.lower, spec.upper, size=n)
    regions = region_index(spec, x)
    y = np.empty(n, dtype=np.float64)
    for r, region in enumerate(spec.regions):
        mask = regions == r
        y[mask] = draw(region.dist, int(mask.sum()), rng)
    return Dataset(
        columns=(ColumnSpec(name="x", kind=ColumnKind.NUMERIC),),
        predictors=pd.DataFrame({"x": x}),
        response=y,
        response_name="y",
    )


def analytic_moments(dist: Distribution) -> Tuple[float, float, float]:
    """(E[y], E[y^2], E[y^3]) in closed form."""
    if isinstance(dist, Lognormal):
        mu, s = dist.meanlog, dist.sdlog
        return tuple(math.exp(k * mu + k * k * s * s / 2.0) for k in (1, 2, 3))
    if isinstance(dist, Normal):
        mu, s = dist.mu, dist.sigma
        return (mu, mu ** 2 + s ** 2, mu ** 3 + 3 * mu * s ** 2)
    lam = dist.rate
    return tuple(math.factorial(k) / lam ** k for k in (1, 2, 3))


def moment_oracle(spec: PiecewiseSpec, region: int, n_mc: int, seed: int) -> MomentEstimate:
    """Monte Carlo estimates of the first three raw moments of y in one region."""
    if n_mc < MIN_MC_DRAWS:
        raise InvalidParameterError(f"n_mc must be at least {MIN_MC_DRAWS}, got {n_mc}")
    if not 0 <= region < len(spec.regions):
        raise InvalidParameterError(f"region index {region} out of range for spec '{spec.name}'")
    y = draw(spec.regions[region].dist, n_mc, rng_for(seed))
    powers = [y, y ** 2, y ** 3]
    moments = tuple(float(p.mean()) for p in powers)
    errors = tuple(float(p.std(ddof=1) / math.sqrt(n_mc)) for p in powers)
    for k, (est, exact) in enumerate(zip(moments, analytic_moments(spec.regions[region].dist)), start=1):
        logger.debug("%s region %d: E[y^%d] = %.4g (analytic %.4g)", spec.name, region, k, est, exact)
    return MomentEstimate(region=region, n_mc=n_mc, moments=moments, standard_errors=errors)
