"""Plan data types and their JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class PartitionSpec:
    block_range: tuple[int, int]
    gpu_class: str
    denom: int
    batch: int
    vgpu_count: int
    latency_ms: float
    throughput_rps: float
    out_transfer_ms: float = 0.0

    @property
    def physical_gpus(self) -> float:
        return self.vgpu_count / self.denom

    def to_dict(self) -> dict:
        return {
            "block_range": list(self.block_range),
            "class": self.gpu_class,
            "denom": self.denom,
            "batch": self.batch,
            "vgpu_count": self.vgpu_count,
            "latency_ms": self.latency_ms,
            "throughput_rps": self.throughput_rps,
            "out_transfer_ms": self.out_transfer_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionSpec":
        return cls(tuple(d["block_range"]), d["class"], int(d["denom"]), int(d["batch"]),
                   int(d["vgpu_count"]), float(d["latency_ms"]), float(d["throughput_rps"]),
                   float(d.get("out_transfer_ms", 0.0)))


@dataclass
class PipelinePlan:
    partitions: list[PartitionSpec]
    unified_batch: int
    throughput_rps: float
    e2e_latency_ms: float

    @property
    def template(self) -> tuple[str, ...]:
        return tuple(p.gpu_class for p in self.partitions)

    def to_dict(self) -> dict:
        return {
            "template": list(self.template),
            "unified_batch": self.unified_batch,
            "throughput_rps": self.throughput_rps,
            "e2e_latency_ms": self.e2e_latency_ms,
            "partitions": [p.to_dict() for p in self.partitions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelinePlan":
        return cls([PartitionSpec.from_dict(p) for p in d["partitions"]], int(d["unified_batch"]),
                   float(d["throughput_rps"]), float(d["e2e_latency_ms"]))


@dataclass
class ClusterPlan:
    per_model: dict[str, list[PipelinePlan]]
    objective_value: float
    mode: str = "pooled"
    # solver bookkeeping: runtime, node count, gap, status
    stats: dict = field(default_factory=dict)

    def model_throughput(self, model: str) -> float:
        return sum(p.throughput_rps for p in self.per_model.get(model, []))

    def gpus_used(self) -> dict[str, float]:
        used: dict[str, float] = {}
        for pipes in self.per_model.values():
            for pipe in pipes:
                for part in pipe.partitions:
                    used[part.gpu_class] = used.get(part.gpu_class, 0.0) + part.physical_gpus
        return used

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "objective_value": self.objective_value,
            "models": {m: [p.to_dict() for p in pipes] for m, pipes in self.per_model.items()},
            "stats": self.stats,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterPlan":
        per_model = {m: [PipelinePlan.from_dict(p) for p in pipes]
                     for m, pipes in d["models"].items()}
        return cls(per_model, float(d["objective_value"]), d.get("mode", "pooled"),
                   dict(d.get("stats", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ClusterPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))
