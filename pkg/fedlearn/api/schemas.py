import json
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from fedlearn.core.config import settings


class ConfigError(Exception):
    pass


class KernelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    D: int = Field(settings.KERNEL_FEATURES, ge=1)
    gamma: float = Field(settings.KERNEL_GAMMA, gt=0)
    lam: float = Field(settings.KERNEL_LAMBDA, ge=0, alias="lambda")
    t_max: int = Field(settings.KERNEL_T_MAX, ge=0)
    tol: float = Field(settings.KERNEL_TOL, ge=0)
    seed: int = Field(0, ge=0, le=2 ** 63 - 1)
    normalization: Literal["standard", "paper_literal"] = "standard"


class ForestConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_trees: int = Field(settings.FOREST_TREES, ge=1)
    max_depth: int = Field(settings.FOREST_MAX_DEPTH, ge=0, le=30)
    min_leaf: int = Field(settings.FOREST_MIN_LEAF, ge=1)
    epsilon: float = Field(settings.FOREST_EPSILON, ge=0)
    quantiles: int = Field(settings.FOREST_QUANTILES, ge=1)
    subsample: float = Field(settings.FOREST_SUBSAMPLE, gt=0, le=1)
    key_bits: int = settings.FOREST_KEY_BITS
    allow_insecure_keys: bool = False
    seed: int = Field(0, ge=0, le=2 ** 63 - 1)
    max_features: Literal["sqrt", "all"] = "sqrt"
    max_nodes: Optional[int] = Field(None, ge=1)
    crypto_seed: Optional[int] = Field(None, ge=0, le=2 ** 63 - 1)
    secret_key_path: Optional[Path] = None

    @model_validator(mode="after")
    def check_key_size(self) -> "ForestConfig":
        if self.key_bits not in settings.SUPPORTED_KEY_BITS:
            raise ValueError(f"key_bits must be one of {settings.SUPPORTED_KEY_BITS}, got {self.key_bits}")
        if self.key_bits < 1024 and not self.allow_insecure_keys:
            raise ValueError(f"{self.key_bits}-bit keys are for tests only; set allow_insecure_keys")
        if self.crypto_seed is not None and not self.allow_insecure_keys:
            raise ValueError("crypto_seed makes keys reproducible; set allow_insecure_keys to use it")
        return self

    @property
    def node_budget(self) -> int:
        return self.max_nodes or 2 ** (self.max_depth + 1)


class PartyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    name: str = Field(min_length=1)
    endpoint: Optional[str] = None
    data_path: Path
    is_active: bool = False
    label_path: Optional[Path] = None
    model_dir: Optional[Path] = None
    quantiles: Optional[int] = Field(None, ge=1)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    parties: List[PartyConfig] = Field(min_length=1)
    algorithm: Literal["kernel", "forest"]
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    forest: ForestConfig = Field(default_factory=ForestConfig)
    transport: Literal["tcp", "loopback"] = "loopback"
    output_dir: Path = Path("out")
    timeout_s: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def check_parties(self) -> "RunConfig":
        active = [p.name for p in self.parties if p.is_active]
        if len(active) != 1:
            raise ValueError(f"exactly one party must be active, found {len(active)}")
        names = [p.name for p in self.parties]
        if len(set(names)) != len(names):
            raise ValueError(f"party names must be unique: {names}")
        if settings.COORDINATOR_NAME in names:
            raise ValueError(f"{settings.COORDINATOR_NAME!r} is reserved for the coordinator")
        if self.transport == "tcp":
            for p in self.parties:
                if not p.endpoint or ":" not in p.endpoint or not p.endpoint.rsplit(":", 1)[1].isdigit():
                    raise ValueError(f"party {p.name!r} needs a host:port endpoint for tcp transport")
        return self

    @property
    def party_names(self) -> List[str]:
        return [p.name for p in self.parties]

    @property
    def active_index(self) -> int:
        return next(k for k, p in enumerate(self.parties) if p.is_active)

    def party(self, name: str) -> PartyConfig:
        for p in self.parties:
            if p.name == name:
                return p
        raise ConfigError(f"no party named {name!r} in the config")

    def model_dir_for(self, party: PartyConfig) -> Path:
        return party.model_dir or self.output_dir / party.name


def _format_errors(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{path}: {item['msg']}")
    return "; ".join(lines)


def parse_run_config(data: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """Validate a config document; relative paths resolve against `base_dir`."""
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from None
    if base_dir is not None:
        _resolve_paths(config, Path(base_dir))
    return config


def _resolve(path: Optional[Path], base_dir: Path) -> Optional[Path]:
    if path is None or path.is_absolute():
        return path
    return base_dir / path


def _resolve_paths(config: RunConfig, base_dir: Path) -> None:
    config.output_dir = _resolve(config.output_dir, base_dir)
    config.forest.secret_key_path = _resolve(config.forest.secret_key_path, base_dir)
    for party in config.parties:
        party.data_path = _resolve(party.data_path, base_dir)
        party.label_path = _resolve(party.label_path, base_dir)
        party.model_dir = _resolve(party.model_dir, base_dir)


def check_files(config: RunConfig) -> None:
    missing = []
    for k, party in enumerate(config.parties):
        if not party.data_path.is_file():
            missing.append(f"parties.{k}.data_path: no such file {party.data_path}")
        if party.label_path is not None and not party.label_path.is_file():
            missing.append(f"parties.{k}.label_path: no such file {party.label_path}")
    key_path = config.forest.secret_key_path
    if config.algorithm == "forest" and key_path is not None and not key_path.is_file():
        missing.append(f"forest.secret_key_path: no such file {key_path}")
    if missing:
        raise ConfigError("; ".join(missing))


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    config = parse_run_config(data, base_dir=path.parent)
    check_files(config)
    return config
