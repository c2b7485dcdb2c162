from typing import Annotated, List, Literal, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Lognormal(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: Literal["lognormal"] = "lognormal"
    meanlog: float
    sdlog: float = Field(gt=0.0)


class Normal(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: Literal["normal"] = "normal"
    mu: float
    sigma: float = Field(gt=0.0)


class Exponential(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: Literal["exponential"] = "exponential"
    rate: float = Field(gt=0.0)


Distribution = Annotated[Union[Lognormal, Normal, Exponential], Field(discriminator="family")]


class RegionSpec(BaseModel):
    """
    y ~ dist for x in (lower, upper]; the first region of a spec also
    includes its lower bound.
    """
    model_config = ConfigDict(frozen=True)

    lower: float
    upper: float
    dist: Distribution

    @model_validator(mode="after")
    def _ordered(self) -> "RegionSpec":
        if not self.lower < self.upper:
            raise ValueError(f"region bounds must satisfy lower < upper, got [{self.lower}, {self.upper}]")
        return self


class PiecewiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    regions: Tuple[RegionSpec, ...]

    @model_validator(mode="after")
    def _tiles(self) -> "PiecewiseSpec":
        if not self.regions:
            raise ValueError("a piecewise spec needs at least one region")
        for prev, cur in zip(self.regions, self.regions[1:]):
            if prev.upper != cur.lower:
                raise ValueError(f"regions must tile the interval: {prev.upper} != {cur.lower}")
        return self

    @property
    def lower(self) -> float:
        return self.regions[0].lower

    @property
    def upper(self) -> float:
        return self.regions[-1].upper

    @property
    def boundaries(self) -> List[float]:
        """Interior region boundaries, i.e. the true split points."""
        return [r.upper for r in self.regions[:-1]]


class MomentEstimate(BaseModel):
    region: int
    n_mc: int
    moments: Tuple[float, float, float]
    standard_errors: Tuple[float, float, float]
