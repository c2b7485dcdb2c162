import hashlib
from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from scoretree.schemas.dataset import ColumnKind
from scoretree.schemas.scoring import ScoringRule
from scoretree.schemas.tree import TreeConfig

TEST_SEED_OFFSET = 1_000_003


class SyntheticSource(BaseModel):
    """Fresh training draws per replicate plus one shared test set."""
    model_config = ConfigDict(frozen=True)

    kind: Literal["synthetic"] = "synthetic"
    preset: Literal["easy", "hard", "toy"]
    train_sizes: List[int] = Field(min_length=1)
    test_size: int = Field(default=1000, ge=1)
    test_seed: Optional[int] = None

    @field_validator("train_sizes")
    @classmethod
    def _positive_sizes(cls, sizes: List[int]) -> List[int]:
        if any(n < 1 for n in sizes):
            raise ValueError("train sizes must be positive")
        return sizes


class BootstrapSource(BaseModel):
    """
    Resamples a CSV per replicate. Without train_fraction, the training set is a
    bootstrap resample and the out-of-bag rows form the test set; with it, a
    random train_fraction of rows trains and the rest test.
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["bootstrap"] = "bootstrap"
    path: str
    response: str
    train_fraction: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    overrides: Dict[str, ColumnKind] = Field(default_factory=dict)


DataSource = Annotated[Union[SyntheticSource, BootstrapSource], Field(discriminator="kind")]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    build_scores: List[ScoringRule] = Field(min_length=1)
    eval_scores: List[ScoringRule] = Field(min_length=1)
    kappas: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.3, 0.5, 0.8], min_length=1)
    replicates: int = Field(default=30, ge=1)
    data_source: DataSource
    max_depth: int = Field(default=4, ge=1)
    min_node_size: int = Field(default=50, ge=1)
    quantile_step: float = Field(default=0.05, gt=0.0, le=0.5)
    discrete_unique_cutoff: int = Field(default=10, ge=1)
    base_seed: int = 0
    true_splits: Optional[List[float]] = None
    margin: float = Field(default=0.02, ge=0.0)
    scan_step: float = Field(default=0.01, gt=0.0)

    @field_validator("kappas")
    @classmethod
    def _kappa_grid(cls, kappas: List[float]) -> List[float]:
        if any(not 0.0 <= k <= 1.0 for k in kappas):
            raise ValueError("kappas must lie in [0, 1]")
        return sorted(set(kappas))

    @property
    def test_seed(self) -> int:
        source = self.data_source
        if isinstance(source, SyntheticSource) and source.test_seed is not None:
            return source.test_seed
        return self.base_seed + TEST_SEED_OFFSET

    def tree_config(self, rule: ScoringRule, kappa: float = 0.0) -> TreeConfig:
        return TreeConfig(
            rule=rule,
            max_depth=self.max_depth,
            min_node_size=self.min_node_size,
            quantile_step=self.quantile_step,
            kappa=kappa,
            discrete_unique_cutoff=self.discrete_unique_cutoff,
            seed=self.base_seed,
        )

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


# --- Reports ---

class KappaChoice(BaseModel):
    score: str
    train_size: int
    sample: Literal["out", "in"]
    kappa_star: float
    means: Dict[float, float]


class OptimalComparison(BaseModel):
    eval: str
    build: str
    train_size: int
    kappa_eval: float
    kappa_build: float
    differences: List[float]
    mean: float
    ci_low: float
    ci_high: float
    success_probability: float


class HypothesisTest(BaseModel):
    eval: str
    build: str
    train_size: int
    kappa: float
    r: int
    t_statistic: float
    p_value: float
    degenerate: bool = False


class AuditReport(BaseModel):
    n_trees: int
    margin: float
    true_splits: List[float]
    recovery_rate: Dict[float, float]
    mean_incorrect: float
