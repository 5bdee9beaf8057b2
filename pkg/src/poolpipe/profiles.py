"""Per-layer and per-block latency profiles.

Latency tables are keyed by ``(gpu_class, denominator, batch)`` where the
denominator ``v`` selects a ``1/v`` virtual-GPU slice. Latencies are in
milliseconds, feature-map sizes in bytes at batch size 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_BATCHES = (1, 2, 4, 8, 16, 32)
DEFAULT_FRACTIONS = (1, 2, 3, 4)

LatencyKey = tuple[str, int, int]


class ProfileError(ValueError):
    """Malformed or invalid profile data."""


def format_key(key: LatencyKey) -> str:
    return f"{key[0]}/{key[1]}/{key[2]}"


def parse_key(text: str) -> LatencyKey:
    parts = text.split("/")
    if len(parts) != 3:
        raise ProfileError(f"latency key {text!r} is not 'class/denominator/batch'")
    cls, denom, batch = parts
    try:
        v, b = int(denom), int(batch)
    except ValueError:
        raise ProfileError(f"latency key {text!r} has non-integer fields") from None
    if v not in DEFAULT_FRACTIONS:
        raise ProfileError(f"latency key {text!r}: denominator must be one of 1..4")
    if b < 1:
        raise ProfileError(f"latency key {text!r}: batch must be >= 1")
    return cls, v, b


@dataclass
class LayerProfile:
    layer_index: int
    latency_ms: dict[LatencyKey, float]
    out_feature_bytes: int


@dataclass
class BlockProfile:
    start: int
    end: int
    latency_ms: dict[LatencyKey, float]
    out_feature_bytes: int

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.end


@dataclass
class ModelProfile:
    model_name: str
    layers: list[LayerProfile]
    slo_ms: float | None = None

    @property
    def keys(self) -> set[LatencyKey]:
        return set(self.layers[0].latency_ms) if self.layers else set()

    @property
    def classes(self) -> list[str]:
        return sorted({k[0] for k in self.keys})

    def total_latency(self, gpu_class: str, denom: int = 1, batch: int = 1) -> float:
        return math.fsum(layer.latency_ms[(gpu_class, denom, batch)] for layer in self.layers)

    def fastest_class(self) -> str:
        return min(self.classes, key=lambda c: (self.total_latency(c), c))

    def slo(self, slo_scale: float = 5.0) -> float:
        """Explicit SLO if set, else ``slo_scale`` x batch-1 latency on the fastest class."""
        if self.slo_ms is not None:
            return self.slo_ms
        return slo_scale * self.total_latency(self.fastest_class())

    def as_blocks(self) -> list[BlockProfile]:
        """One block per layer; used when no pre-partitioning is wanted."""
        return [BlockProfile(l.layer_index, l.layer_index + 1, dict(l.latency_ms),
                             l.out_feature_bytes) for l in self.layers]


def validate_model(model: ModelProfile) -> None:
    if not model.layers:
        raise ProfileError(f"model {model.model_name!r}: no layers")
    if model.slo_ms is not None and model.slo_ms <= 0:
        raise ProfileError(f"model {model.model_name!r}: slo_ms must be positive")
    all_keys: set[LatencyKey] = set()
    for layer in model.layers:
        all_keys |= set(layer.latency_ms)
    classes = sorted({k[0] for k in all_keys})
    denoms = sorted({k[1] for k in all_keys})
    batches = sorted({k[2] for k in all_keys})
    grid = [(c, v, b) for c in classes for v in denoms for b in batches]
    for pos, layer in enumerate(model.layers):
        where = f"model {model.model_name!r} layer {pos}"
        if layer.layer_index != pos:
            raise ProfileError(f"{where}: layer_index {layer.layer_index} is not contiguous")
        if layer.out_feature_bytes < 0:
            raise ProfileError(f"{where}: negative out_feature_bytes")
        for key in grid:
            if key not in layer.latency_ms:
                raise ProfileError(f"{where}: missing latency entry {format_key(key)!r}")
            value = layer.latency_ms[key]
            if not (value > 0 and math.isfinite(value)):
                raise ProfileError(
                    f"{where}: latency entry {format_key(key)!r} must be positive, got {value}")
        for c in classes:
            for v in denoms:
                prev = 0.0
                for b in batches:
                    cur = layer.latency_ms[(c, v, b)]
                    if cur < prev:
                        raise ProfileError(
                            f"{where}: latency decreases with batch at {format_key((c, v, b))!r}")
                    prev = cur


def model_from_dict(data: dict) -> ModelProfile:
    try:
        name = data["name"]
        layers = []
        for i, raw in enumerate(data["layers"]):
            table = {parse_key(k): float(v) for k, v in raw["latency_ms"].items()}
            layers.append(LayerProfile(i, table, int(raw["out_feature_bytes"])))
        slo = data.get("slo_ms")
    except (KeyError, TypeError) as exc:
        raise ProfileError(f"malformed profile entry: missing or bad field {exc}") from exc
    model = ModelProfile(name, layers, None if slo is None else float(slo))
    validate_model(model)
    return model


def model_to_dict(model: ModelProfile) -> dict:
    out: dict = {"name": model.model_name}
    if model.slo_ms is not None:
        out["slo_ms"] = model.slo_ms
    out["layers"] = [
        {"out_feature_bytes": layer.out_feature_bytes,
         "latency_ms": {format_key(k): layer.latency_ms[k] for k in sorted(layer.latency_ms)}}
        for layer in model.layers
    ]
    return out


def load_profiles(path: str | Path) -> list[ModelProfile]:
    """Read a profile file (``{"models": [...]}``) and validate every model."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: parse error: {exc}") from exc
    if not isinstance(data, dict) or "models" not in data:
        raise ProfileError(f"{path}: expected an object with a 'models' list")
    return [model_from_dict(m) for m in data["models"]]


def save_profiles(models: Iterable[ModelProfile], path: str | Path) -> None:
    payload = {"models": [model_to_dict(m) for m in models]}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


# -- synthesis -------------------------------------------------------------

@dataclass
class SynthSpec:
    """Parameters of a synthetic model profile.

    ``ratio_curves`` maps each non-base class to breakpoints ``(position,
    ratio)`` over normalized layer position in [0, 1); a layer's batch-1
    latency on that class is its base-class latency times the curve value at
    the layer's midpoint.
    """

    name: str
    n_layers: int
    base_class: str
    base_total_ms: float
    ratio_curves: dict[str, list[tuple[float, float]]]
    interpolation: str = "step"
    batch_exponent: dict[str, float] = field(default_factory=dict)
    feature_bytes: tuple[int, int] = (500_000, 4_000_000)
    weight_sigma: float = 0.4
    interference: float = 1.1
    vgpu_model: str = "batch_equivalent"
    batches: Sequence[int] = DEFAULT_BATCHES
    fractions: Sequence[int] = DEFAULT_FRACTIONS
    slo_ms: float | None = None
    seed: int = 0


def _curve_value(curve: list[tuple[float, float]], pos: float, interpolation: str) -> float:
    pts = sorted(curve)
    if interpolation == "linear":
        xs, ys = zip(*pts)
        return float(np.interp(pos, xs, ys))
    value = pts[0][1]
    for x, y in pts:
        if pos >= x:
            value = y
    return value


def batch_factor(denom: int, batch: int, exponent: float, interference: float,
                 vgpu_model: str) -> float:
    """Latency multiplier relative to a batch-1 run on a whole GPU."""
    if denom == 1:
        return float(batch) ** exponent
    if vgpu_model == "time_slice":
        return denom * interference * float(batch) ** exponent
    # v co-resident slices each at batch b behave like one batch of v*b
    return interference * float(denom * batch) ** exponent


def synth_profile(spec: SynthSpec) -> ModelProfile:
    if spec.n_layers < 1:
        raise ProfileError("synthetic spec needs at least one layer")
    if not spec.base_total_ms > 0:
        raise ProfileError("synthetic spec: base_total_ms must be positive")
    if spec.interpolation not in ("step", "linear"):
        raise ProfileError(f"unknown interpolation {spec.interpolation!r}")
    if spec.vgpu_model not in ("batch_equivalent", "time_slice"):
        raise ProfileError(f"unknown vgpu_model {spec.vgpu_model!r}")
    for cls, curve in spec.ratio_curves.items():
        if not curve:
            raise ProfileError(f"synthetic spec: empty ratio curve for class {cls!r}")
        if any(r <= 0 for _, r in curve):
            raise ProfileError(f"synthetic spec: non-positive ratio for class {cls!r}")
    lo, hi = spec.feature_bytes
    if lo < 0 or hi < lo:
        raise ProfileError("synthetic spec: invalid feature_bytes bounds")

    rng = np.random.default_rng(spec.seed)
    weights = rng.lognormal(0.0, spec.weight_sigma, spec.n_layers)
    base = weights / weights.sum() * spec.base_total_ms
    if hi > lo:
        feats = np.exp(rng.uniform(math.log(max(lo, 1)), math.log(hi), spec.n_layers))
    else:
        feats = np.full(spec.n_layers, float(lo))

    classes = [spec.base_class] + [c for c in spec.ratio_curves if c != spec.base_class]
    layers = []
    for i in range(spec.n_layers):
        pos = (i + 0.5) / spec.n_layers
        table: dict[LatencyKey, float] = {}
        for cls in classes:
            ratio = 1.0 if cls == spec.base_class else _curve_value(
                spec.ratio_curves[cls], pos, spec.interpolation)
            b1 = float(base[i]) * ratio
            alpha = spec.batch_exponent.get(cls, 0.7)
            for v in spec.fractions:
                for b in spec.batches:
                    table[(cls, v, b)] = b1 * batch_factor(v, b, alpha, spec.interference,
                                                           spec.vgpu_model)
        layers.append(LayerProfile(i, table, int(round(feats[i]))))
    model = ModelProfile(spec.name, layers, spec.slo_ms)
    validate_model(model)
    return model


# -- partition quantities ----------------------------------------------------

def partition_latency(blocks: Sequence[BlockProfile], block_range: tuple[int, int],
                      gpu_class: str, denom: int, batch: int) -> float:
    i, j = block_range
    if not 0 <= i < j <= len(blocks):
        raise ProfileError(f"invalid block range [{i}, {j}) for {len(blocks)} blocks")
    key = (gpu_class, denom, batch)
    try:
        return math.fsum(blocks[k].latency_ms[key] for k in range(i, j))
    except KeyError:
        raise ProfileError(f"missing profile entry {format_key(key)!r}") from None


def partition_throughput(batch: int, vgpus: int, latency_ms: float) -> float:
    """Requests/s served by ``vgpus`` workers each running ``batch`` per ``latency_ms``."""
    if batch < 1 or vgpus < 1 or not latency_ms > 0:
        raise ValueError("partition_throughput needs batch >= 1, vgpus >= 1, latency > 0")
    return batch * vgpus * 1000.0 / latency_ms


def transfer_latency(bytes_at_b1: int, batch: int, link_gbps: float, bw_scale: float = 1.0,
                     quantize_half: bool = False) -> float:
    """Milliseconds to ship a batch's feature map over one link."""
    if bytes_at_b1 <= 0 or batch < 1 or link_gbps <= 0 or not 0 < bw_scale <= 1:
        raise ValueError("transfer_latency needs positive sizes/rates and bw_scale in (0, 1]")
    size = bytes_at_b1 * batch * (0.5 if quantize_half else 1.0)
    return size * 8.0 / (link_gbps * bw_scale * 1e9) * 1000.0
