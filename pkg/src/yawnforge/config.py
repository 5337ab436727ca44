"""Layered pipeline configuration: defaults < YAML file < explicit overrides.

Unknown keys fail loudly with their dotted path instead of being silently
ignored, since a typoed threshold that falls back to a default is the kind
of mistake that only shows up weeks later in label quality.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Optional

import yaml

from .backends import DetectorConfig
from .errors import ConfigError
from .training import AugmentationConfig, SplitConfig, TrainConfig

DEFAULTS: dict[str, Any] = {
    "paths": {
        "store": None,
        "model": None,
    },
    "corpus": {
        "root": None,
        "view_mapping": [],
    },
    "ingest": {
        "stride": 1,
        "image_format": "png",
    },
    "detector": {
        "backend": "synthetic",
        "confidence_threshold": 0.5,
        "nms_iou_threshold": 0.45,
        "options": {},
    },
    "mesh": {
        "backend": "none",
        "options": {},
    },
    "mouth": {
        "margin_px": 10,
    },
    "train": {
        "epochs": 8,
        "batch_size": 32,
        "learning_rate": 1e-3,
        "seed": 7,
        "test_fraction": 0.2,
        "split_seed": 13,
        "augmentation_multiplier": 1,
    },
    "review": {
        "host": "127.0.0.1",
        "port": 8700,
        "reviewers": None,
        "lease_ttl_s": 1800,
        "batch_size": 64,
        "ordering": "by_video",
    },
    "export": {
        "include": "verified_only",
        "train_fraction": 0.8,
        "seed": 17,
    },
}

# Subtrees whose contents are backend- or corpus-specific and not validated here.
_FREEFORM = {"corpus.view_mapping", "detector.options", "mesh.options"}


def _merge(base: dict, override: dict, path: str = "") -> None:
    for key, value in override.items():
        dotted = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key {dotted!r}")
        if dotted in _FREEFORM:
            base[key] = copy.deepcopy(value)
        elif isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{dotted!r} must be a mapping, got {type(value).__name__}")
            _merge(base[key], value, dotted)
        else:
            base[key] = value


class PipelineConfig:
    def __init__(self, data: dict):
        self.data = data

    @classmethod
    def load(
        cls,
        path: str | Path | None = None,
        overrides: dict[str, Any] | None = None,
    ) -> "PipelineConfig":
        """``overrides`` maps dotted keys (e.g. "ingest.stride") to values
        and wins over the file, which wins over defaults."""
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            doc = yaml.safe_load(path.read_text(encoding="utf-8"))
            if doc is None:
                doc = {}
            if not isinstance(doc, dict):
                raise ConfigError(f"config file must hold a mapping, got {type(doc).__name__}")
            _merge(data, doc)
        for dotted, value in (overrides or {}).items():
            node = data
            parts = dotted.split(".")
            for part in parts[:-1]:
                if not isinstance(node, dict) or part not in node:
                    raise ConfigError(f"unknown configuration key {dotted!r}")
                node = node[part]
            if not isinstance(node, dict) or parts[-1] not in node:
                raise ConfigError(f"unknown configuration key {dotted!r}")
            node[parts[-1]] = value
        return cls(data)

    def get(self, dotted: str) -> Any:
        node: Any = self.data
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown configuration key {dotted!r}")
            node = node[part]
        return node

    def section(self, name: str) -> dict:
        value = self.get(name)
        if not isinstance(value, dict):
            raise ConfigError(f"{name!r} is not a configuration section")
        return value

    def hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, default=str).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    def detector_config(self) -> DetectorConfig:
        d = self.section("detector")
        return DetectorConfig(
            confidence_threshold=float(d["confidence_threshold"]),
            nms_iou_threshold=float(d["nms_iou_threshold"]),
            backend_id=d["backend"],
            options=dict(d["options"]),
        )

    def train_config(self) -> TrainConfig:
        t = self.section("train")
        return TrainConfig(
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            learning_rate=float(t["learning_rate"]),
            seed=int(t["seed"]),
            augmentation=AugmentationConfig(multiplier=int(t["augmentation_multiplier"])),
            split=SplitConfig(
                test_fraction=float(t["test_fraction"]), seed=int(t["split_seed"])
            ),
        )
