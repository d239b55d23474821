from pydantic_settings import BaseSettings
from functools import lru_cache
import os

class Settings(BaseSettings):
    APP_ENV: str = "development"
    LOG_LEVEL: str = "INFO"

    # Where cmd_* writes traces, reports and datasets unless the config overrides it
    OUTPUT_DIR: str = "runs"

    # Enumeration guard for the brute-force oracles (K^N)
    ORACLE_MAX_ASSIGNMENTS: int = 10_000_000

    # Engine defaults, used when an experiment config leaves them out
    DEFAULT_MAX_ROUNDS: int = 100_000
    DEFAULT_HEAD_TOL: float = 1e-10
    DEFAULT_STABILITY_WINDOW: int = 10

    # Sweep parallelism (1 = sequential)
    SWEEP_WORKERS: int = 1

    # Record heads every n rounds in the trajectory CSV (0 = off)
    TRAJECTORY_EVERY: int = 1

    class Config:
        env_file = os.path.join(os.path.dirname(__file__), "../.env")
        extra = "ignore"

@lru_cache()
def get_settings():
    return Settings()
