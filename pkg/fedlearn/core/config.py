import logging
import os


class Settings:
    PROJECT_NAME: str = "fedlearn"
    VERSION: str = "0.1.0"

    LOG_LEVEL: str = os.environ.get("FEDLEARN_LOG", "info")
    TRANSPORT_TIMEOUT_S: float = float(os.environ.get("FEDLEARN_TIMEOUT_S", "300"))
    COORDINATOR_NAME: str = os.environ.get("FEDLEARN_COORDINATOR", "master")

    FRAME_MAGIC: bytes = b"FLA1"
    KEY_MAGIC: bytes = b"FLK1"

    FIXED_POINT_BITS: int = 48
    MAX_TERMS: int = 2 ** 20
    MILLER_RABIN_ROUNDS: int = 40
    SUPPORTED_KEY_BITS: tuple = (64, 1024, 2048)

    # kernel defaults
    KERNEL_FEATURES: int = 256
    KERNEL_GAMMA: float = 1.0
    KERNEL_LAMBDA: float = 1e-3
    KERNEL_T_MAX: int = 50
    KERNEL_TOL: float = 1e-8

    # forest defaults
    FOREST_QUANTILES: int = 32
    FOREST_TREES: int = 10
    FOREST_MAX_DEPTH: int = 6
    FOREST_MIN_LEAF: int = 5
    FOREST_EPSILON: float = 1e-7
    FOREST_SUBSAMPLE: float = 0.8
    FOREST_KEY_BITS: int = 1024

    PIPELINE_MAX_ROUNDS: int = 100_000


class Phase:
    KERNEL_SETUP = 0
    KERNEL_UPDATE = 1
    KERNEL_FINALIZE = 2

    RF_SETUP = 10
    RF_STATS = 11
    RF_SPLIT = 12
    RF_TREE = 13
    RF_SELECT = 14
    RF_FINALIZE = 19

    KERNEL_PREDICT = 20
    RF_STEP = 21

    SHUTDOWN = 90
    EVALUATE = 91
    DESCRIBE = 92


LOG_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def configure_logging(level: str | None = None) -> None:
    name = (level or settings.LOG_LEVEL).lower()
    if name not in LOG_LEVELS:
        raise ValueError(f"FEDLEARN_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(
        level=LOG_LEVELS[name],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


settings = Settings()
