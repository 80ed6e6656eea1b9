from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional

class Settings(BaseSettings):
    # --- Logging ---
    LOG_LEVEL: str = "INFO"

    # --- Local multiplication ---
    STACK_CAP: int = 30000
    DEFAULT_THREADS: int = 1

    # --- Microkernels ---
    # Largest m, n or k still served by the tuned small kernels
    SMALL_KERNEL_MAX_DIM: int = 80
    LARGE_KERNEL_TILE: int = 64
    AUTOTUNE_TRIALS: int = 5
    AUTOTUNE_SEED: int = 1234
    DBMM_TUNE_CACHE: Optional[str] = None

    # --- Algorithms ---
    DENSIFY_THRESHOLD: float = 1.0
    # auto picks tall-skinny when K >= TALLSKINNY_RATIO * max(M, N)
    TALLSKINNY_RATIO: int = 32
    MAX_REPLICATED_RESULT_BYTES: int = 256 * 1024 * 1024

    # --- Virtual transport ---
    TRANSPORT_WAIT_TIMEOUT: float = 120.0

    # --- Benchmarks ---
    VERIFY_RTOL: float = 1e-12
    DEFAULT_REPEATS: int = 4
    REPORT_HISTORY: int = 32

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8")

settings = Settings()
