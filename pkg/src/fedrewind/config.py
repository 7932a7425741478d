"""Experiment configuration: schema, defaults, validation, parsing.

A config is a flat JSON object whose keys match ExperimentConfig's
fields. parse_config also accepts a previously emitted run.json (the
nested "config" object is unwrapped), so any recorded run can be
replayed verbatim.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional

TOPOLOGIES = ("cyclic", "random", "star")
REWIND_MODES = ("none", "source", "random_peer")
PEER_KINDS = ("ring", "random")
DATASETS = ("blobs", "mnist")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on; validated before any work starts."""

    dataset: str = "blobs"
    mnist_dir: Optional[str] = None
    subset: Optional[int] = None
    nodes: int = 10
    rounds: int = 15
    epochs: int = 5
    rewind_fraction: float = 0.2
    alpha: float = 0.25
    topology: str = "cyclic"
    rewind: str = "source"
    centralized_peer: str = "ring"
    learning_rate: float = 0.001
    batch_size: int = 32
    test_fraction: float = 0.2
    eval_interval: int = 5
    hidden_dim: int = 64
    seed: int = 0
    num_tasks: int = 1
    rounds_per_task: int = 5
    max_offset: int = 0
    blob_classes: int = 10
    blob_dims: int = 2
    blob_samples: int = 120
    blob_spread: float = 0.05
    output_dir: str = "runs"

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")
        if self.rewind not in REWIND_MODES:
            raise ValueError(f"rewind must be one of {REWIND_MODES}")
        if self.centralized_peer not in PEER_KINDS:
            raise ValueError(f"centralized_peer must be one of {PEER_KINDS}")
        if self.nodes < 1:
            raise ValueError("nodes must be at least 1")
        if self.topology != "star" and self.nodes < 2:
            raise ValueError(f"{self.topology} topology needs at least 2 nodes")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0.0 <= self.rewind_fraction <= 0.5:
            raise ValueError(
                "rewind_fraction must lie in [0, 0.5]: the head phase "
                "cannot have a negative budget"
            )
        if self.rewind != "none":
            if self.rewind_fraction <= 0.0:
                raise ValueError(
                    f"rewind mode {self.rewind!r} needs rewind_fraction > 0"
                )
            if self.epochs < 3:
                raise ValueError(
                    "rewind needs epochs >= 3 (one epoch per phase minimum)"
                )
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be at least 1")
        if self.hidden_dim < 0:
            raise ValueError("hidden_dim must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be at least 1")
        if self.rounds_per_task < 1:
            raise ValueError("rounds_per_task must be at least 1")
        if self.max_offset < 0:
            raise ValueError("max_offset must be non-negative")
        if self.subset is not None and self.subset < 1:
            raise ValueError("subset must be positive")
        if self.blob_classes < 2:
            raise ValueError("blob_classes must be at least 2")
        if self.blob_dims < 1 or self.blob_samples < 1:
            raise ValueError("blob_dims and blob_samples must be positive")
        if self.blob_spread < 0:
            raise ValueError("blob_spread must be non-negative")
        if self.num_tasks > 1 and self.dataset == "blobs":
            if self.blob_classes % self.num_tasks != 0:
                raise ValueError(
                    "blob_classes must be divisible by num_tasks"
                )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def config_from_dict(values: Mapping[str, Any]) -> ExperimentConfig:
    """Build a config from a flat mapping; unknown keys are rejected."""
    unknown = sorted(set(values) - _FIELDS)
    if unknown:
        raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
    return ExperimentConfig(**values)


def parse_config(
    path: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Load a config file (if given) and apply flag overrides on top.

    Accepts either a plain config object or a run.json (whose "config"
    sub-object is used). Override values that are None are ignored.
    """
    values: dict[str, Any] = {}
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError(f"config file {path} must hold a JSON object")
        if "config" in doc and isinstance(doc["config"], dict):
            doc = doc["config"]
        values.update(doc)
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                values[key] = value
    return config_from_dict(values)


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def write_json(payload: Mapping[str, Any], path) -> None:
    """Atomic JSON write (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    tmp.replace(path)
