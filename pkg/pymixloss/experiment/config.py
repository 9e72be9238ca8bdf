"""Experiment configuration files.

A grid configuration is one JSON object; every key is optional and
:meth:`ExperimentConfig.to_dict` returns the fully defaulted form (printed
by ``pymixloss grid --show-defaults``)::

    {
      "datasets": [{"name": "iris", "path": "iris.csv"},
                   {"name": "blobs", "blobs": {"classes": 3, ...}}],
      "architectures": ["linear", "mlp1"],
      "methods": {"CE": {"loss": {"name": "ce"}},
                  "F=0-0.5": {"schedule": {"protocol": "f0..05"}}},
      "trainer": {"epochs": 50, "batch_size": 8, ...},
      "seeds": [0, 1],
      "lrs": [0.01, 0.005, 0.001],
      "baseline": "CE",
      "output_dir": "results",
      "workers": null
    }
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from ..core import RandomSource
from ..data import Splits, SplitSpec, load_csv, make_blobs, split
from ..data import write_csv, zscore_normalize
from ..escape import NoiseMode
from ..exceptions import ConfigError, PyMixLossException
from ..losses import MixWeights
from ..model import Architecture
from ..trainer import (
    DEFAULT_LRS,
    LossConfig,
    TrainConfig,
    loss_config_from_dict,
    loss_config_to_dict,
    volume_matched_ce_lr,
)
from ..util import config_hash

LOG = logging.getLogger(__name__)

BASELINE_METHOD = "CE"

# The four regimes compared throughout, by display name.
DEFAULT_METHODS: Dict[str, Dict[str, Any]] = {
    "CE": {"loss": {"name": "ce"}},
    "F=0": {"schedule": {"protocol": "f0"}},
    "F=[0,0.5]": {"schedule": {"protocol": "f0-05"}},
    "F=0-0.5": {"schedule": {"protocol": "f0..05"}},
}

# Optional comparison methods.
EXTRA_METHODS: Dict[str, Dict[str, Any]] = {
    "EL": {"loss": {"name": "el"}},
    "focal": {"loss": {"name": "focal"}},
    "CE-volume": {
        "loss": {"name": "ce"},
        "volume_match": {"alpha": 1.0, "beta": 1.0},
    },
}


def _reject_unknown(kind: str, data: Mapping, known) -> None:
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown {kind} keys: {sorted(unknown)}")


@dataclass(frozen=True)
class MethodSpec:
    """A named loss or schedule, optionally with a volume-matched lr."""

    name: str
    loss: LossConfig
    volume_match: Optional[MixWeights] = None

    @classmethod
    def from_dict(cls, name: str, data: Mapping) -> "MethodSpec":
        """Create a method from its config mapping."""
        _reject_unknown("method", data, ("loss", "schedule", "volume_match"))
        try:
            loss = loss_config_from_dict(data)
            match = data.get("volume_match")
            weights = None if match is None else MixWeights(**match)
        except (PyMixLossException, TypeError) as exc:
            raise ConfigError(f"method {name!r}: {exc}") from exc
        return cls(name, loss, weights)

    def to_dict(self) -> Dict[str, Any]:
        """Return the config mapping."""
        data = loss_config_to_dict(self.loss)
        if self.volume_match is not None:
            data["volume_match"] = {
                "alpha": self.volume_match.alpha,
                "beta": self.volume_match.beta,
            }
        return data

    @property
    def lr_scale(self) -> float:
        """Factor applied to every swept learning rate."""
        if self.volume_match is None:
            return 1.0
        return volume_matched_ce_lr(1.0, self.volume_match)


@dataclass(frozen=True)
class BlobSpec:
    """Parameters of a synthetic blob dataset."""

    classes: int = 3
    per_class: int = 50
    input_dim: int = 4
    separation: float = 2.0
    seed: int = 0


@dataclass(frozen=True)
class DatasetSpec:
    """Where a dataset comes from and how it is split."""

    name: str
    path: Optional[str] = None
    label_column: int = -1
    delimiter: str = ","
    header: bool = False
    blobs: Optional[BlobSpec] = None
    split: SplitSpec = field(default_factory=SplitSpec)
    normalize: bool = True

    def __post_init__(self):
        """Validate that exactly one source is given."""
        if (self.path is None) == (self.blobs is None):
            raise ConfigError(
                f"dataset {self.name!r} needs exactly one of 'path', 'blobs'"
            )

    @classmethod
    def from_dict(cls, data: Mapping) -> "DatasetSpec":
        """Create a dataset spec from its config mapping."""
        data = dict(data)
        try:
            if data.get("blobs") is not None:
                data["blobs"] = BlobSpec(**data["blobs"])
            if "split" in data:
                data["split"] = SplitSpec(**data["split"])
            return cls(**data)
        except (PyMixLossException, TypeError) as exc:
            raise ConfigError(f"invalid dataset {data}: {exc}") from exc

    def to_dict(self) -> Dict[str, Any]:
        """Return the config mapping."""
        split_spec = self.split
        return {
            "name": self.name,
            "path": self.path,
            "label_column": self.label_column,
            "delimiter": self.delimiter,
            "header": self.header,
            "blobs": None if self.blobs is None else vars(self.blobs).copy(),
            "split": {
                "train": split_spec.train,
                "val": split_spec.val,
                "test": split_spec.test,
                "stratified": split_spec.stratified,
                "seed": split_spec.seed,
            },
            "normalize": self.normalize,
        }

    def load(self, base_dir: str = ".") -> Splits:
        """Load, split and normalize the dataset."""
        if self.blobs is not None:
            blobs = self.blobs
            dataset = make_blobs(
                blobs.classes,
                blobs.per_class,
                blobs.input_dim,
                blobs.separation,
                blobs.seed,
                name=self.name,
            )
        else:
            dataset = load_csv(
                os.path.join(base_dir, self.path),
                label_column=self.label_column,
                delimiter=self.delimiter,
                header=self.header,
                name=self.name,
            )
        parts = split(dataset, self.split)
        if self.normalize:
            normalized, _ = zscore_normalize(*parts)
            parts = Splits(*normalized)
        return parts


def _load_json(path: Union[str, os.PathLike]) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as stream:
            data = json.load(stream)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


@dataclass(frozen=True)
class ExperimentConfig:
    """A grid of datasets x architectures x methods x seeds."""

    datasets: Tuple[DatasetSpec, ...]
    architectures: Tuple[Architecture, ...] = (Architecture.LINEAR,)
    methods: Tuple[MethodSpec, ...] = ()
    trainer: TrainConfig = field(default_factory=TrainConfig)
    seeds: Tuple[int, ...] = (0, 1)
    lrs: Tuple[float, ...] = DEFAULT_LRS
    baseline: str = BASELINE_METHOD
    output_dir: str = "results"
    workers: Optional[int] = None
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        """Validate the grid."""
        if not self.datasets:
            raise ConfigError("at least one dataset is required")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.architectures:
            raise ConfigError("at least one architecture is required")
        if not self.lrs:
            raise ConfigError("at least one learning rate is required")
        for kind, names in (
            ("method", [m.name for m in self.methods]),
            ("dataset", [d.name for d in self.datasets]),
        ):
            if len(set(names)) != len(names):
                raise ConfigError(f"duplicate {kind} names: {names}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers must be >= 1: {self.workers}")

    @classmethod
    def from_dict(
        cls, data: Mapping, base_dir: str = "."
    ) -> "ExperimentConfig":
        """Create a config, filling every missing key with its default."""
        _reject_unknown(
            "experiment",
            data,
            (
                "datasets",
                "architectures",
                "methods",
                "trainer",
                "seeds",
                "lrs",
                "baseline",
                "output_dir",
                "workers",
            ),
        )
        methods = data.get("methods", DEFAULT_METHODS)
        try:
            architectures = tuple(
                Architecture(a) for a in data.get("architectures", ["linear"])
            )
            trainer = TrainConfig.from_dict(data.get("trainer", {}))
        except (PyMixLossException, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(
            datasets=tuple(
                DatasetSpec.from_dict(d) for d in data.get("datasets", [])
            ),
            architectures=architectures,
            methods=tuple(
                MethodSpec.from_dict(name, spec)
                for name, spec in methods.items()
            ),
            trainer=trainer,
            seeds=tuple(int(s) for s in data.get("seeds", [0, 1])),
            lrs=tuple(float(lr) for lr in data.get("lrs", DEFAULT_LRS)),
            baseline=data.get("baseline", BASELINE_METHOD),
            output_dir=data.get("output_dir", "results"),
            workers=data.get("workers"),
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "ExperimentConfig":
        """Read a JSON config; relative dataset paths follow the file."""
        base_dir = os.path.dirname(os.path.abspath(path))
        return cls.from_dict(_load_json(path), base_dir=base_dir)

    def to_dict(self) -> Dict[str, Any]:
        """Return the fully defaulted config mapping."""
        trainer = self.trainer.to_dict()
        for key in ("schedule", "loss", "lr", "seed"):
            trainer.pop(key, None)
        return {
            "datasets": [d.to_dict() for d in self.datasets],
            "architectures": [a.value for a in self.architectures],
            "methods": {m.name: m.to_dict() for m in self.methods},
            "trainer": trainer,
            "seeds": list(self.seeds),
            "lrs": list(self.lrs),
            "baseline": self.baseline,
            "output_dir": self.output_dir,
            "workers": self.workers,
        }

    def config_hash(self) -> str:
        """Hash of the defaulted configuration."""
        return config_hash(self.to_dict())

    def run_id(
        self,
        dataset: DatasetSpec,
        architecture: Architecture,
        method: MethodSpec,
        seed: int,
    ) -> str:
        """Hash of everything that influences one grid cell."""
        trainer = self.to_dict()["trainer"]
        return config_hash(
            {
                "dataset": dataset.to_dict(),
                "architecture": architecture.value,
                "method": method.to_dict(),
                "seed": seed,
                "trainer": trainer,
                "lrs": list(self.lrs),
            }
        )

    def output_path(self, *parts: str) -> str:
        """Return a path inside the output directory."""
        return os.path.join(self.base_dir, self.output_dir, *parts)


def default_experiment_dict() -> Dict[str, Any]:
    """Defaulted config around a single example blob dataset."""
    example = {"name": "blobs", "blobs": vars(BlobSpec()).copy()}
    return ExperimentConfig.from_dict({"datasets": [example]}).to_dict()


@dataclass(frozen=True)
class EscapeConfig:
    """Settings of the escaping-efficiency comparison."""

    dataset: BlobSpec = field(
        default_factory=lambda: BlobSpec(
            classes=2, per_class=20, input_dim=2, separation=1.0
        )
    )
    architecture: Architecture = Architecture.LINEAR
    epochs: int = 300
    lr: float = 0.5
    weight_decay: float = 1e-3
    betas: Tuple[float, ...] = (1.0, 2.5, 5.0)
    batch_size: int = 8
    sde_lr: float = 0.1
    dt: float = 0.01
    total_time: float = 0.5
    trajectories: int = 200
    noise_mode: NoiseMode = NoiseMode.FULL_COVARIANCE
    include_learning_rate: bool = True
    seed: int = 0
    landscapes: Tuple[Tuple[Tuple[str, Any], ...], ...] = (
        (("diagonal", (1.0, 2.0)), ("kind", "quadratic")),
        (("kind", "double_well"), ("sharpness_ratio", 4.0)),
    )
    output_dir: str = "escape"

    def __post_init__(self):
        """Validate the settings."""
        object.__setattr__(
            self, "architecture", Architecture(self.architecture)
        )
        object.__setattr__(self, "noise_mode", NoiseMode(self.noise_mode))
        if any(beta < 0 for beta in self.betas):
            raise ConfigError(f"betas must be >= 0: {self.betas}")
        if self.epochs < 1 or self.batch_size < 1 or self.trajectories < 1:
            raise ConfigError("epochs, batch_size, trajectories must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping) -> "EscapeConfig":
        """Create a config from its mapping."""
        data = dict(data)
        try:
            if "dataset" in data:
                data["dataset"] = BlobSpec(**data["dataset"])
            if "betas" in data:
                data["betas"] = tuple(float(b) for b in data["betas"])
            if "landscapes" in data:
                data["landscapes"] = tuple(
                    tuple(sorted(_freeze(item).items()))
                    for item in data["landscapes"]
                )
            return cls(**data)
        except (PyMixLossException, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid escape config: {exc}") from exc

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "EscapeConfig":
        """Read a JSON escape config."""
        return cls.from_dict(_load_json(path))

    def to_dict(self) -> Dict[str, Any]:
        """Return the fully defaulted config mapping."""
        return {
            "dataset": vars(self.dataset).copy(),
            "architecture": self.architecture.value,
            "epochs": self.epochs,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "batch_size": self.batch_size,
            "sde_lr": self.sde_lr,
            "dt": self.dt,
            "total_time": self.total_time,
            "trajectories": self.trajectories,
            "noise_mode": self.noise_mode.value,
            "include_learning_rate": self.include_learning_rate,
            "seed": self.seed,
            "landscapes": [
                {k: list(v) if isinstance(v, tuple) else v for k, v in item}
                for item in self.landscapes
            ],
            "output_dir": self.output_dir,
        }


def _freeze(item: Mapping) -> Dict[str, Any]:
    return {
        k: tuple(v) if isinstance(v, list) else v for k, v in item.items()
    }


def write_blob_suite(
    directory: Union[str, os.PathLike],
    count: int = 10,
    seed: int = 0,
    per_class: int = 30,
) -> str:
    """Write ``count`` synthetic blob datasets and a grid config using them.

    Class count, dimension and separation vary between datasets. Returns
    the path of the written ``grid.json``.
    """
    if count < 1:
        raise ConfigError(f"need at least one dataset: {count}")
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    draws = RandomSource(seed)
    datasets = []
    for index in range(count):
        shape = draws.spawn(index)
        classes = int(shape.integers(2, 5))
        input_dim = int(shape.integers(2, 9))
        separation = round(float(shape.uniform(0.5, 2.5)), 3)
        name = f"blobs{index:02d}"
        dataset = make_blobs(
            classes, per_class, input_dim, separation, seed + index, name
        )
        write_csv(dataset, os.path.join(directory, f"{name}.csv"))
        datasets.append({"name": name, "path": f"{name}.csv"})
    methods = dict(DEFAULT_METHODS)
    methods["EL"] = EXTRA_METHODS["EL"]
    methods["focal"] = EXTRA_METHODS["focal"]
    config = ExperimentConfig.from_dict(
        {
            "datasets": datasets,
            "methods": methods,
            "trainer": {"epochs": 30},
            "seeds": [0, 1],
        },
        base_dir=directory,
    )
    path = os.path.join(directory, "grid.json")
    with open(path, "w", encoding="utf-8") as stream:
        json.dump(config.to_dict(), stream, indent=2)
    LOG.info("Wrote %d datasets and %s", count, path)
    return path
