"""Mouth-state CNN architecture description and analytic parameter accounting.

The description is pure data: layer hyperparameters only, no tensor framework.
Parameter counts are computed analytically from the hyperparameters so that
the architecture contract can be audited without instantiating any runtime
network (the torch instantiation in :mod:`yawnforge.model` must agree with
these counts, and the tests cross-check both routes).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ConfigError

CONV = "conv2d"
MAXPOOL = "maxpool2d"
ADAPTIVE_AVGPOOL = "adaptive_avgpool2d"
FLATTEN = "flatten"
LINEAR = "linear"
DROPOUT = "dropout"

_KINDS = (CONV, MAXPOOL, ADAPTIVE_AVGPOOL, FLATTEN, LINEAR, DROPOUT)

_DEFAULTS = {
    "conv_channels": [32, 64, 128, 256],
    "head_units": 128,
    "input_channels": 3,
    "num_classes": 2,
    "dropout_p": 0.5,
    "conv_kernel": 3,
    "pool_kernel": 2,
    "input_size": [64, 64],
}


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the stack. Unused fields stay None for the given kind."""

    kind: str
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    kernel: Optional[int] = None
    stride: Optional[int] = None
    padding: Optional[int] = None
    in_features: Optional[int] = None
    out_features: Optional[int] = None
    output_size: Optional[int] = None
    dropout_p: Optional[float] = None

    def param_count(self) -> Optional[int]:
        """Trainable parameter count, or None for parameter-free layers."""
        if self.kind == CONV:
            return self.out_channels * (self.in_channels * self.kernel * self.kernel + 1)
        if self.kind == LINEAR:
            return self.out_features * (self.in_features + 1)
        return None

    def label(self) -> str:
        return {
            CONV: "Conv2D",
            MAXPOOL: "MaxPool2D",
            ADAPTIVE_AVGPOOL: "AdaptiveAvgPool2D",
            FLATTEN: "Flatten",
            LINEAR: "Linear",
            DROPOUT: f"Dropout (p={self.dropout_p})",
        }[self.kind]

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for k in ("in_channels", "out_channels", "kernel", "stride", "padding",
                  "in_features", "out_features", "output_size", "dropout_p"):
            v = getattr(self, k)
            if v is not None:
                d[k] = v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer stack plus the preprocessing-facing input contract."""

    layers: tuple[LayerSpec, ...]
    input_channels: int = 3
    num_classes: int = 2
    input_size: tuple[int, int] = (64, 64)

    def to_dict(self) -> dict:
        return {
            "layers": [l.to_dict() for l in self.layers],
            "input_channels": self.input_channels,
            "num_classes": self.num_classes,
            "input_size": list(self.input_size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
            input_channels=d["input_channels"],
            num_classes=d["num_classes"],
            input_size=tuple(d["input_size"]),
        )


@dataclass
class ParameterAudit:
    """Per-layer parameter accounting: one row per layer, None = no parameters."""

    rows: list[tuple[LayerSpec, Optional[int]]] = field(default_factory=list)

    @property
    def trainable_counts(self) -> list[int]:
        return [c for _, c in self.rows if c is not None]

    @property
    def total(self) -> int:
        return sum(self.trainable_counts)


def _require_positive_int(name: str, value: Any) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return value


def build_network(spec_overrides: dict | None = None) -> NetworkSpec:
    """Build the default mouth-state CNN description, optionally overridden.

    The default stack is four 3x3 conv blocks (32/64/128/256 filters, each
    followed by a 2x2 stride-2 max pool), global average pooling to 1x1,
    and a 256 -> 128 -> 2 linear head with dropout 0.5 between the two
    linear layers.
    """
    cfg = dict(_DEFAULTS)
    if spec_overrides:
        unknown = set(spec_overrides) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown network overrides: {sorted(unknown)}")
        cfg.update(spec_overrides)

    channels = list(cfg["conv_channels"])
    if not channels:
        raise ConfigError("conv_channels must not be empty")
    for c in channels:
        _require_positive_int("conv channel count", c)
    head_units = _require_positive_int("head_units", cfg["head_units"])
    in_ch = _require_positive_int("input_channels", cfg["input_channels"])
    num_classes = _require_positive_int("num_classes", cfg["num_classes"])
    conv_k = _require_positive_int("conv_kernel", cfg["conv_kernel"])
    pool_k = _require_positive_int("pool_kernel", cfg["pool_kernel"])
    dropout_p = cfg["dropout_p"]
    if not isinstance(dropout_p, (int, float)) or not (0.0 <= dropout_p < 1.0):
        raise ConfigError(f"dropout_p must be in [0, 1), got {dropout_p!r}")
    input_size = tuple(cfg["input_size"])
    if len(input_size) != 2:
        raise ConfigError("input_size must be [height, width]")
    for s in input_size:
        _require_positive_int("input_size entry", s)

    layers: list[LayerSpec] = []
    prev = in_ch
    for c in channels:
        layers.append(LayerSpec(CONV, in_channels=prev, out_channels=c,
                                kernel=conv_k, stride=1, padding=conv_k // 2))
        layers.append(LayerSpec(MAXPOOL, kernel=pool_k, stride=pool_k, padding=0))
        prev = c
    layers.append(LayerSpec(ADAPTIVE_AVGPOOL, output_size=1))
    layers.append(LayerSpec(FLATTEN))
    # Global pooling to 1x1 makes the flattened width equal the last conv's
    # channel count regardless of input resolution.
    layers.append(LayerSpec(LINEAR, in_features=prev, out_features=head_units))
    layers.append(LayerSpec(DROPOUT, dropout_p=float(dropout_p)))
    layers.append(LayerSpec(LINEAR, in_features=head_units, out_features=num_classes))

    return NetworkSpec(layers=tuple(layers), input_channels=in_ch,
                       num_classes=num_classes, input_size=input_size)


def count_parameters(spec: NetworkSpec) -> ParameterAudit:
    """Analytic per-layer parameter counts, independent of any runtime framework."""
    for layer in spec.layers:
        if layer.kind not in _KINDS:
            raise ConfigError(f"unknown layer kind {layer.kind!r}")
    return ParameterAudit(rows=[(layer, layer.param_count()) for layer in spec.layers])


def format_parameter_table(spec: NetworkSpec) -> str:
    """Render the layer stack as a fixed-width audit table."""
    audit = count_parameters(spec)
    header = f"{'Layer Type':<22}{'Kernel':>8}{'Stride':>8}{'Padding':>9}{'Params':>10}"
    lines = [header, "-" * len(header)]
    for layer, count in audit.rows:
        kernel = f"{layer.kernel}x{layer.kernel}" if layer.kernel else "N/A"
        stride = str(layer.stride) if layer.stride is not None else "N/A"
        padding = str(layer.padding) if layer.padding is not None else "N/A"
        params = f"{count}" if count is not None else "N/A"
        lines.append(f"{layer.label():<22}{kernel:>8}{stride:>8}{padding:>9}{params:>10}")
    lines.append("-" * len(header))
    lines.append(f"{'Total':<22}{'':>8}{'':>8}{'':>9}{audit.total:>10}")
    return "\n".join(lines)
