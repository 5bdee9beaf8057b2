"""Cluster description: GPU classes, node layout and NIC bandwidth."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path


class ClusterError(ValueError):
    pass


@dataclass(frozen=True)
class GpuClass:
    name: str
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ClusterError(f"GPU class {self.name!r}: negative count {self.count}")


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    gpu_class: str
    gpus: int
    uplink_gbps: float
    downlink_gbps: float

    def __post_init__(self):
        if self.gpus < 1:
            raise ClusterError(f"node {self.node_id!r} must host at least one GPU")
        if self.uplink_gbps <= 0 or self.downlink_gbps <= 0:
            raise ClusterError(f"node {self.node_id!r}: link rates must be positive")


@dataclass(frozen=True)
class ClusterSpec:
    """GPU classes plus the physical nodes that host them.

    Class counts always equal the number of GPUs summed over that class's
    nodes; :meth:`build` derives the node list from per-class counts.
    """

    classes: tuple[GpuClass, ...]
    nodes: tuple[NodeSpec, ...] = field(default=())

    def __post_init__(self):
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ClusterError(f"duplicate GPU class names: {names}")
        if self.nodes:
            for c in self.classes:
                hosted = sum(n.gpus for n in self.nodes if n.gpu_class == c.name)
                if hosted != c.count:
                    raise ClusterError(
                        f"class {c.name!r}: count {c.count} but nodes host {hosted}")
            unknown = {n.gpu_class for n in self.nodes} - set(names)
            if unknown:
                raise ClusterError(f"nodes reference unknown classes {sorted(unknown)}")

    @classmethod
    def build(cls, counts: dict[str, int], gpus_per_node: int | dict[str, int] = 1,
              nic_gbps: float | dict[str, float] = 50.0) -> "ClusterSpec":
        classes = tuple(GpuClass(name, int(n)) for name, n in counts.items())
        nodes = []
        for c in classes:
            per = gpus_per_node[c.name] if isinstance(gpus_per_node, dict) else gpus_per_node
            bw = nic_gbps[c.name] if isinstance(nic_gbps, dict) else nic_gbps
            remaining = c.count
            for i in range(math.ceil(c.count / per)):
                g = min(per, remaining)
                remaining -= g
                nodes.append(NodeSpec(f"{c.name}-{i}", c.name, g, float(bw), float(bw)))
        return cls(classes, tuple(nodes))

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def count(self, name: str) -> int:
        for c in self.classes:
            if c.name == name:
                return c.count
        raise KeyError(name)

    def nodes_of(self, name: str) -> list[NodeSpec]:
        return [n for n in self.nodes if n.gpu_class == name]

    @cached_property
    def _link_rates(self) -> dict[str, float]:
        rates: dict[str, float] = {}
        for n in self.nodes:
            r = min(n.uplink_gbps, n.downlink_gbps)
            rates[n.gpu_class] = min(r, rates.get(n.gpu_class, r))
        return rates

    def link_gbps(self, name: str) -> float:
        """Slowest NIC rate among nodes of a class (nominal, before scaling)."""
        if name not in self._link_rates:
            raise ClusterError(f"class {name!r} has no nodes")
        return self._link_rates[name]

    def scaled(self, factor: int) -> "ClusterSpec":
        """Replicate every node ``factor`` times."""
        classes = tuple(GpuClass(c.name, c.count * factor) for c in self.classes)
        nodes = tuple(NodeSpec(f"{n.node_id}.{r}", n.gpu_class, n.gpus, n.uplink_gbps,
                               n.downlink_gbps)
                      for r in range(factor) for n in self.nodes)
        return ClusterSpec(classes, nodes)

    def to_dict(self) -> dict:
        return {
            "classes": [{"name": c.name, "count": c.count} for c in self.classes],
            "nodes": [{"id": n.node_id, "class": n.gpu_class, "gpus": n.gpus,
                       "uplink_gbps": n.uplink_gbps, "downlink_gbps": n.downlink_gbps}
                      for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterSpec":
        try:
            if "nodes" in data:
                classes = tuple(GpuClass(c["name"], int(c["count"])) for c in data["classes"])
                nodes = tuple(
                    NodeSpec(n["id"], n["class"], int(n["gpus"]),
                             float(n.get("uplink_gbps", n.get("nic_gbps", 0))),
                             float(n.get("downlink_gbps", n.get("nic_gbps", 0))))
                    for n in data["nodes"])
                return cls(classes, nodes)
            counts = {c["name"]: int(c["count"]) for c in data["classes"]}
            per = {c["name"]: int(c.get("gpus_per_node", 1)) for c in data["classes"]}
            bw = {c["name"]: float(c.get("nic_gbps", 50.0)) for c in data["classes"]}
            return cls.build(counts, per, bw)
        except (KeyError, TypeError) as exc:
            raise ClusterError(f"malformed cluster description: {exc!r}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ClusterSpec":
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ClusterError(f"{path}: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
