"""
Configuration settings for augcl.

Two layers: environment-driven settings (logging, dataset root, output root),
loaded from the process environment or a ``.env`` file, and the experiment
config file (JSON, YAML accepted) that fixes every training hyperparameter.
"""

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from src.augment.params import AugmentationParams
from src.config.curricula import Curriculum, get_curriculum
from src.core.exceptions import ConfigurationError, DataMissingError
from src.core.types import Arch, MtlSampling, TrainMode

DATASETS = ("mnist", "cifar10", "cifar100")
MODES = ("both", "CL", "MTL")
PRECISIONS = ("float32", "float64")


def getenv(name: str, default: Optional[str] = None) -> Optional[str]:
    """Retrieve a configuration value from the environment."""
    value = os.getenv(name)
    if value:
        return value
    return default


def default_output_dir() -> str:
    """Run output root when the config file leaves ``output_dir`` unset."""
    return getenv("AUGCL_OUTPUT_DIR", "runs")


@dataclass
class LoggingConfig:
    """Logging configuration."""

    log_level: str = field(default_factory=lambda: getenv("AUGCL_LOG_LEVEL", "INFO"))
    log_dir: Path = field(default_factory=lambda: Path(getenv("AUGCL_LOG_DIR", "logs")))
    log_to_file: bool = field(
        default_factory=lambda: getenv("AUGCL_LOG_TO_FILE", "false").lower() == "true"
    )
    max_log_size_mb: int = field(
        default_factory=lambda: int(getenv("AUGCL_LOG_MAX_BYTES", "10485760")) // 1048576
    )
    log_retention_count: int = field(default_factory=lambda: int(getenv("AUGCL_LOG_BACKUP_COUNT", "5")))

    def __post_init__(self):
        if self.log_to_file:
            self.log_dir.mkdir(parents=True, exist_ok=True)


@dataclass
class EnvironmentConfig:
    """Paths that may come from the environment instead of the config file."""

    data_dir: Optional[Path] = field(
        default_factory=lambda: Path(getenv("AUGCL_DATA_DIR")) if getenv("AUGCL_DATA_DIR") else None
    )
    output_dir: Path = field(default_factory=lambda: Path(default_output_dir()))
    logging: LoggingConfig = field(default_factory=LoggingConfig)


@dataclass(frozen=True)
class ProbeConfig:
    """Linear-probe training settings."""

    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 256
    # Keep the probe epoch with the best validation accuracy
    select_on_val: bool = False
    seed_offset: int = 7919

    def validate(self) -> List[str]:
        errors = []
        if self.lr <= 0:
            errors.append(f"probe.lr: must be positive, got {self.lr}")
        if self.epochs < 1:
            errors.append(f"probe.epochs: must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            errors.append(f"probe.batch_size: must be >= 1, got {self.batch_size}")
        return errors


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters shared by the CL and MTL loops."""

    dataset: str = "mnist"
    arch: Arch = Arch.CONV_S
    d_proj: int = 128
    batch_size: int = 256
    lr: float = 5e-4
    lambd: float = 0.005
    gamma: float = 0.5
    epochs_per_task: int = 5
    seed: int = 0
    run_count: int = 5
    mode: str = "both"
    curriculum: Curriculum = field(default_factory=lambda: get_curriculum("B1"))
    mtl_sampling: MtlSampling = MtlSampling.PER_BATCH
    persist_predictor: bool = False
    precision: str = "float32"

    @property
    def modes(self) -> Tuple[TrainMode, ...]:
        if self.mode == "both":
            return (TrainMode.CL, TrainMode.MTL)
        return (TrainMode(self.mode),)

    @property
    def dtype(self) -> str:
        return self.precision

    def validate(self) -> List[str]:
        errors = []
        if self.dataset not in DATASETS:
            errors.append(f"dataset: must be one of {list(DATASETS)}, got {self.dataset!r}")
        else:
            errors.extend(self.curriculum.validate_for(self.dataset))
        if self.d_proj < 2:
            errors.append(f"d_proj: must be >= 2, got {self.d_proj}")
        if self.batch_size < 2:
            errors.append(f"batch_size: must be >= 2, got {self.batch_size}")
        if self.lr < 0:
            errors.append(f"lr: must be non-negative, got {self.lr}")
        if self.lambd <= 0:
            errors.append(f"lambda: must be positive, got {self.lambd}")
        if self.gamma < 0:
            errors.append(f"gamma: must be non-negative, got {self.gamma}")
        if self.epochs_per_task < 1:
            errors.append(f"epochs_per_task: must be >= 1, got {self.epochs_per_task}")
        if self.run_count < 1:
            errors.append(f"run_count: must be >= 1, got {self.run_count}")
        if self.seed < 0:
            errors.append(f"seed: must be non-negative, got {self.seed}")
        if self.mode not in MODES:
            errors.append(f"mode: must be one of {list(MODES)}, got {self.mode!r}")
        if self.precision not in PRECISIONS:
            errors.append(f"precision: must be one of {list(PRECISIONS)}, got {self.precision!r}")
        return errors


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: Optional[str] = None
    train_subset: Optional[int] = None
    test_subset: Optional[int] = None
    output_dir: str = field(default_factory=default_output_dir)
    run_name: Optional[str] = None
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    augmentations: AugmentationParams = field(default_factory=AugmentationParams)

    def validate(self) -> List[str]:
        errors = self.train.validate() + self.probe.validate() + self.augmentations.validate()
        for name in ("train_subset", "test_subset"):
            value = getattr(self, name)
            if value is not None and value < 2:
                errors.append(f"{name}: must be >= 2 when set, got {value}")
        return errors

    def with_curriculum(self, curriculum: Curriculum) -> "ExperimentConfig":
        return replace(self, train=replace(self.train, curriculum=curriculum))

    def resolve_data_dir(self, environment: Optional[EnvironmentConfig] = None) -> Path:
        """Dataset root: config value first, then AUGCL_DATA_DIR."""
        if self.data_dir:
            return Path(self.data_dir)
        environment = environment or EnvironmentConfig()
        if environment.data_dir is not None:
            return environment.data_dir
        raise DataMissingError("No dataset directory: set data_dir in the config or AUGCL_DATA_DIR")

    @property
    def run_dir(self) -> Path:
        name = self.run_name or f"{self.train.dataset}_{self.train.curriculum.id}"
        return Path(self.output_dir) / name

    def to_dict(self) -> Dict[str, Any]:
        train = self.train
        return {
            "dataset": train.dataset,
            "data_dir": self.data_dir,
            "arch": train.arch.value,
            "d_proj": train.d_proj,
            "batch_size": train.batch_size,
            "lr": train.lr,
            "lambda": train.lambd,
            "gamma": train.gamma,
            "epochs_per_task": train.epochs_per_task,
            "seed": train.seed,
            "run_count": train.run_count,
            "mode": train.mode,
            "curriculum": train.curriculum.to_config_value(),
            "mtl_sampling": train.mtl_sampling.value,
            "persist_predictor": train.persist_predictor,
            "precision": train.precision,
            "train_subset": self.train_subset,
            "test_subset": self.test_subset,
            "output_dir": self.output_dir,
            "run_name": self.run_name,
            "probe": {
                "lr": self.probe.lr,
                "epochs": self.probe.epochs,
                "batch_size": self.probe.batch_size,
                "select_on_val": self.probe.select_on_val,
                "seed_offset": self.probe.seed_offset,
            },
            "augmentations": self.augmentations.to_dict(),
        }

    def to_json(self) -> str:
        """Canonical, byte-stable serialization."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        """Parse and validate a config mapping, collecting every problem."""
        if not isinstance(data, Mapping):
            raise ConfigurationError("Config must be a mapping", ["<root>: expected an object"])
        errors: List[str] = []
        unknown = sorted(set(data) - _TOP_LEVEL_KEYS)
        errors.extend(f"{key}: unknown key" for key in unknown)
        if "dataset" not in data:
            errors.append("dataset: required")

        reader = _FieldReader(data, errors)
        curriculum: Optional[Curriculum] = None
        raw_curriculum = data.get("curriculum", "B1" if data.get("dataset") == "mnist" else "A1")
        try:
            curriculum = get_curriculum(raw_curriculum)
        except (TypeError, ValueError) as e:
            errors.append(f"curriculum: {e}")

        arch = reader.enum("arch", Arch, Arch.CONV_S)
        sampling = reader.enum("mtl_sampling", MtlSampling, MtlSampling.PER_BATCH)

        probe_data = data.get("probe", {}) or {}
        probe = ProbeConfig()
        if not isinstance(probe_data, Mapping):
            errors.append("probe: expected an object")
        else:
            unknown_probe = sorted(set(probe_data) - _PROBE_KEYS)
            errors.extend(f"probe.{key}: unknown key" for key in unknown_probe)
            probe_reader = _FieldReader(probe_data, errors, prefix="probe.")
            probe = ProbeConfig(
                lr=probe_reader.number("lr", ProbeConfig.lr),
                epochs=probe_reader.integer("epochs", ProbeConfig.epochs),
                batch_size=probe_reader.integer("batch_size", ProbeConfig.batch_size),
                select_on_val=probe_reader.boolean("select_on_val", ProbeConfig.select_on_val),
                seed_offset=probe_reader.integer("seed_offset", ProbeConfig.seed_offset),
            )

        augmentations = AugmentationParams()
        aug_data = data.get("augmentations", {}) or {}
        if not isinstance(aug_data, Mapping):
            errors.append("augmentations: expected an object")
        else:
            try:
                augmentations = AugmentationParams.from_overrides(aug_data)
            except ConfigurationError as e:
                errors.extend(e.errors)

        train = TrainConfig(
            dataset=str(data.get("dataset", "")),
            arch=arch,
            d_proj=reader.integer("d_proj", 128),
            batch_size=reader.integer("batch_size", 256),
            lr=reader.number("lr", 5e-4),
            lambd=reader.number("lambda", 0.005),
            gamma=reader.number("gamma", 0.5),
            epochs_per_task=reader.integer("epochs_per_task", 5),
            seed=reader.integer("seed", 0),
            run_count=reader.integer("run_count", 5),
            mode=str(data.get("mode", "both")),
            curriculum=curriculum or get_curriculum("B1"),
            mtl_sampling=sampling,
            persist_predictor=reader.boolean("persist_predictor", False),
            precision=str(data.get("precision", "float32")),
        )
        config = cls(
            train=train,
            data_dir=reader.optional_string("data_dir"),
            train_subset=reader.optional_integer("train_subset"),
            test_subset=reader.optional_integer("test_subset"),
            output_dir=str(data["output_dir"]) if data.get("output_dir") is not None else default_output_dir(),
            run_name=reader.optional_string("run_name"),
            probe=probe,
            augmentations=augmentations,
        )
        if curriculum is not None:
            errors.extend(config.validate())
        if errors:
            raise ConfigurationError(f"Invalid experiment config ({len(errors)} problem(s))", errors)
        return config


_TOP_LEVEL_KEYS = {
    "dataset", "data_dir", "arch", "d_proj", "batch_size", "lr", "lambda", "gamma",
    "epochs_per_task", "seed", "run_count", "mode", "curriculum", "mtl_sampling",
    "persist_predictor", "precision", "train_subset", "test_subset", "output_dir",
    "run_name", "probe", "augmentations",
}
_PROBE_KEYS = {"lr", "epochs", "batch_size", "select_on_val", "seed_offset"}


class _FieldReader:
    """Typed accessors that record problems instead of raising."""

    def __init__(self, data: Mapping[str, Any], errors: List[str], prefix: str = ""):
        self.data = data
        self.errors = errors
        self.prefix = prefix

    def number(self, key: str, default: float) -> float:
        value = self.data.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.errors.append(f"{self.prefix}{key}: expected a number, got {value!r}")
            return default
        return float(value)

    def integer(self, key: str, default: int) -> int:
        value = self.data.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            self.errors.append(f"{self.prefix}{key}: expected an integer, got {value!r}")
            return default
        return value

    def boolean(self, key: str, default: bool) -> bool:
        value = self.data.get(key, default)
        if not isinstance(value, bool):
            self.errors.append(f"{self.prefix}{key}: expected a boolean, got {value!r}")
            return default
        return value

    def optional_integer(self, key: str) -> Optional[int]:
        if self.data.get(key) is None:
            return None
        return self.integer(key, 0)

    def optional_string(self, key: str) -> Optional[str]:
        value = self.data.get(key)
        return None if value is None else str(value)

    def enum(self, key: str, enum_type, default):
        if key not in self.data:
            return default
        try:
            return enum_type(self.data[key])
        except ValueError:
            allowed = [member.value for member in enum_type]
            self.errors.append(f"{self.prefix}{key}: must be one of {allowed}, got {self.data[key]!r}")
            return default


def load_experiment_config(file_path: Union[str, Path]) -> ExperimentConfig:
    """
    Load an experiment config from a JSON or YAML file.

    Raises:
        ConfigurationError: If the file is missing, unparsable or invalid
    """
    path = Path(file_path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {file_path}", [f"{file_path}: not found"])

    try:
        with open(path, encoding="utf-8") as f:
            if path.suffix.lower() in (".yaml", ".yml"):
                data = yaml.safe_load(f)
            elif path.suffix.lower() == ".json":
                data = json.load(f)
            else:
                raise ConfigurationError(
                    f"Unsupported config format: {path.suffix}", [f"{file_path}: use .json or .yaml"]
                )
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Cannot parse {file_path}", [f"{file_path}: {e}"])

    return ExperimentConfig.from_dict(data or {})


# Example environment template
ENV_TEMPLATE = """# Dataset root holding mnist/, cifar-10-batches-bin/, cifar-100-binary/
AUGCL_DATA_DIR=data

# Default output root for run directories
AUGCL_OUTPUT_DIR=runs

# Logging
AUGCL_LOG_LEVEL=INFO  # DEBUG, INFO, WARNING, ERROR
AUGCL_LOG_DIR=logs
AUGCL_LOG_TO_FILE=false
AUGCL_LOG_MAX_BYTES=10485760  # 10MB
AUGCL_LOG_BACKUP_COUNT=5
""".strip()
