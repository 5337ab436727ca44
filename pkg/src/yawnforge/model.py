"""Runtime model: crop preprocessing, network construction, artifact format.

A trained classifier ships as a single ``.yfz`` file: a zip holding the
architecture description, preprocessing parameters, weights as raw .npy
members, training metrics, and free-form metadata. Artifacts written from
the same inputs are byte-identical (zip timestamps are pinned).
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import netspec
from .backends import LABELS, Prediction, prediction_from_scores, softmax_pair
from .errors import ConfigError, InputImageError

DEFAULT_PREPROCESSING = {
    "input_size": [64, 64],
    "color_order": "rgb",
    "scale": 1.0 / 255.0,
    "resize": "area",
}

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def preprocess_crop(image: np.ndarray, preprocessing: dict | None = None) -> np.ndarray:
    """uint8 crop (BGR, or single channel) -> float32 CHW network input."""
    import cv2

    pre = preprocessing or DEFAULT_PREPROCESSING
    if image is None or image.size == 0:
        raise InputImageError("cannot preprocess an empty crop")
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    elif arr.ndim == 3 and arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    elif arr.ndim != 3 or arr.shape[2] != 3:
        raise InputImageError(f"unsupported crop shape {arr.shape}")
    if pre.get("color_order", "rgb") == "rgb":
        arr = arr[:, :, ::-1]
    w, h = pre["input_size"]
    interp = cv2.INTER_AREA if pre.get("resize", "area") == "area" else cv2.INTER_LINEAR
    arr = cv2.resize(arr.astype(np.uint8), (int(w), int(h)), interpolation=interp)
    arr = arr.astype(np.float32) * float(pre.get("scale", 1.0 / 255.0))
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def build_torch_module(spec: netspec.NetworkSpec):
    """nn.Sequential mirroring the layer list, ReLU after each conv and
    after every linear except the output head."""
    import torch.nn as nn

    last_linear = None
    for i, layer in enumerate(spec.layers):
        if layer.kind == netspec.LINEAR:
            last_linear = i

    modules: list = []
    for i, layer in enumerate(spec.layers):
        if layer.kind == netspec.CONV:
            modules.append(nn.Conv2d(
                layer.in_channels, layer.out_channels,
                kernel_size=layer.kernel, stride=layer.stride, padding=layer.padding,
            ))
            modules.append(nn.ReLU(inplace=True))
        elif layer.kind == netspec.MAXPOOL:
            modules.append(nn.MaxPool2d(kernel_size=layer.kernel, stride=layer.stride))
        elif layer.kind == netspec.ADAPTIVE_AVGPOOL:
            modules.append(nn.AdaptiveAvgPool2d(layer.output_size))
        elif layer.kind == netspec.FLATTEN:
            modules.append(nn.Flatten())
        elif layer.kind == netspec.LINEAR:
            modules.append(nn.Linear(layer.in_features, layer.out_features))
            if i != last_linear:
                modules.append(nn.ReLU(inplace=True))
        elif layer.kind == netspec.DROPOUT:
            modules.append(nn.Dropout(p=layer.dropout_p))
        else:
            raise ConfigError(f"cannot build a module for layer kind {layer.kind!r}")
    return nn.Sequential(*modules)


def _weights_from_module(module) -> dict[str, np.ndarray]:
    return {
        name: tensor.detach().cpu().numpy().copy()
        for name, tensor in module.state_dict().items()
    }


class ModelArtifact:
    """A self-contained trained classifier."""

    def __init__(
        self,
        spec: netspec.NetworkSpec,
        weights: dict[str, np.ndarray],
        preprocessing: dict | None = None,
        metrics: dict | None = None,
        meta: dict | None = None,
    ):
        self.spec = spec
        self.weights = weights
        self.preprocessing = dict(preprocessing or DEFAULT_PREPROCESSING)
        self.metrics = dict(metrics or {})
        self.meta = dict(meta or {})
        self._module = None

    @classmethod
    def from_module(cls, module, spec, preprocessing=None, metrics=None, meta=None):
        return cls(spec, _weights_from_module(module), preprocessing, metrics, meta)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)

        def _add(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload)

        def _doc(obj) -> bytes:
            return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()

        with zipfile.ZipFile(path, "w") as zf:
            _add(zf, "spec.json", _doc(self.spec.to_dict()))
            _add(zf, "preprocessing.json", _doc(self.preprocessing))
            _add(zf, "metrics.json", _doc(self.metrics))
            _add(zf, "meta.json", _doc(self.meta))
            for name in sorted(self.weights):
                buf = io.BytesIO()
                np.save(buf, self.weights[name], allow_pickle=False)
                _add(zf, f"weights/{name}.npy", buf.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "ModelArtifact":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"model artifact not found: {path}")
        with zipfile.ZipFile(path, "r") as zf:
            spec = netspec.NetworkSpec.from_dict(
                json.loads(zf.read("spec.json").decode())
            )
            preprocessing = json.loads(zf.read("preprocessing.json").decode())
            metrics = json.loads(zf.read("metrics.json").decode())
            meta = json.loads(zf.read("meta.json").decode())
            weights = {}
            for name in zf.namelist():
                if name.startswith("weights/") and name.endswith(".npy"):
                    key = name[len("weights/"): -len(".npy")]
                    weights[key] = np.load(
                        io.BytesIO(zf.read(name)), allow_pickle=False
                    )
        return cls(spec, weights, preprocessing, metrics, meta)

    def module(self):
        """Torch module with the stored weights, built once and cached."""
        if self._module is None:
            import torch

            module = build_torch_module(self.spec)
            state = {k: torch.from_numpy(v) for k, v in self.weights.items()}
            module.load_state_dict(state)
            module.eval()
            self._module = module
        return self._module

    def predict_scores(self, crops: Sequence[np.ndarray]) -> np.ndarray:
        """(N, 2) softmax scores in label order yawn, no_yawn."""
        import torch

        if len(crops) == 0:
            return np.zeros((0, len(LABELS)), dtype=np.float64)
        batch = np.stack([preprocess_crop(c, self.preprocessing) for c in crops])
        with torch.no_grad():
            logits = self.module()(torch.from_numpy(batch)).numpy()
        return np.stack([softmax_pair(row) for row in logits.astype(np.float64)])

    def predict(self, crops: Sequence[np.ndarray]) -> list[Prediction]:
        return [prediction_from_scores(tuple(row)) for row in self.predict_scores(crops)]

    def predict_one(self, crop: np.ndarray) -> Prediction:
        return self.predict([crop])[0]


class ArtifactClassifier:
    """Adapts a ModelArtifact to the mouth classifier interface."""

    def __init__(self, artifact: ModelArtifact | str | Path):
        if not isinstance(artifact, ModelArtifact):
            artifact = ModelArtifact.load(artifact)
        self.artifact = artifact

    def classify(self, crop: np.ndarray) -> Prediction:
        return self.artifact.predict_one(crop)


def load_classifier(path: str | Path) -> ArtifactClassifier:
    return ArtifactClassifier(path)
