from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    DEPTH: int = 4
    MIN_NODE_SIZE: int = 50
    QUANTILE_STEP: float = 0.05
    KAPPA: float = 0.0
    ALPHA: float = 0.2
    DISCRETE_UNIQUE_CUTOFF: int = 10
    THREADS: int = 1
    SEED: int = 0
    MARGIN: float = 0.02
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(env_file=".env", env_prefix="SCORETREE_", extra="ignore")


settings = Settings()
