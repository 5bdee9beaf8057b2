from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..profiles import DEFAULT_BATCHES, DEFAULT_FRACTIONS, BlockProfile


@dataclass
class PlannerConfig:
    slo_scale: float = 5.0
    margin: float = 0.40
    max_partitions: int = 3
    batches: tuple[int, ...] = DEFAULT_BATCHES
    fractions: tuple[int, ...] = DEFAULT_FRACTIONS
    bw_scale: float = 0.2
    quantize: bool = False
    # model name -> share of the offered load; equal shares when empty
    workload_shares: dict[str, float] = field(default_factory=dict)
    # model name -> explicit SLO in ms, overriding slo_scale
    slo_ms: dict[str, float] = field(default_factory=dict)
    mip_gap: float = 1e-4
    node_limit: int | None = None
    time_limit_s: float = 120.0

    def __post_init__(self):
        self.batches = tuple(sorted(int(b) for b in self.batches))
        self.fractions = tuple(sorted(int(v) for v in self.fractions))
        if not 0 <= self.margin < 1:
            raise ValueError("margin must be in [0, 1)")
        if not 0 < self.bw_scale <= 1:
            raise ValueError("bw_scale must be in (0, 1]")
        if self.max_partitions < 1:
            raise ValueError("max_partitions must be >= 1")
        if any(v not in DEFAULT_FRACTIONS for v in self.fractions):
            raise ValueError("fractions must be drawn from 1..4")

    def model_slo(self, name: str, blocks: list[BlockProfile]) -> float:
        """Raw SLO for a model: explicit override, else scale x fastest batch-1 latency."""
        if name in self.slo_ms:
            return float(self.slo_ms[name])
        classes = sorted({k[0] for k in blocks[0].latency_ms})
        fastest = min(sum(b.latency_ms[(c, 1, 1)] for b in blocks) for c in classes)
        return self.slo_scale * fastest

    def effective_slo(self, name: str, blocks: list[BlockProfile]) -> float:
        return self.model_slo(name, blocks) * (1.0 - self.margin)

    def shares(self, models: list[str]) -> dict[str, float]:
        if not self.workload_shares:
            return {m: 1.0 / len(models) for m in models}
        missing = [m for m in models if m not in self.workload_shares]
        if missing:
            raise ValueError(f"workload_shares missing models {missing}")
        total = sum(self.workload_shares[m] for m in models)
        return {m: self.workload_shares[m] / total for m in models}

    def replace(self, **changes) -> "PlannerConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return PlannerConfig(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["batches"] = list(self.batches)
        out["fractions"] = list(self.fractions)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PlannerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown planner config keys {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "PlannerConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
