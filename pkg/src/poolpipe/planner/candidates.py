"""Enumerate SLO-feasible pipeline configurations and prune dominated ones.

A configuration fixes, for one template, the cut points, the per-stage vGPU
fraction and the unified batch. Only its end-to-end latency (checked against
the SLO here) and its per-stage throughput matter afterwards, so the
allocation step works on the surviving configurations alone.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

from ..cluster import ClusterSpec
from ..profiles import BlockProfile, ProfileError, partition_latency, transfer_latency
from .config import PlannerConfig
from .templates import Template, enumerate_templates


@dataclass(frozen=True)
class StageConfig:
    gpu_class: str
    start: int
    end: int
    denom: int
    latency_ms: float
    vgpu_rps: float
    out_transfer_ms: float

    @property
    def gpu_rps(self) -> float:
        """Throughput per physical GPU when the GPU is split into ``denom`` slices."""
        return self.vgpu_rps * self.denom


@dataclass(frozen=True)
class Candidate:
    model: str
    template: Template
    template_index: int
    batch: int
    stages: tuple[StageConfig, ...]

    @property
    def e2e_latency_ms(self) -> float:
        return sum(s.latency_ms for s in self.stages) + sum(s.out_transfer_ms for s in self.stages)

    @property
    def cuts(self) -> tuple[int, ...]:
        return tuple(s.end for s in self.stages[:-1])

    @property
    def denoms(self) -> tuple[int, ...]:
        return tuple(s.denom for s in self.stages)

    def sort_key(self) -> tuple:
        return (self.template_index, self.cuts, self.batch, self.denoms)


def boundary_transfer_ms(blocks: Sequence[BlockProfile], end: int, src: str, dst: str,
                         batch: int, cluster: ClusterSpec, config: PlannerConfig) -> float:
    """Transfer time of the feature map leaving block ``end - 1`` between two classes."""
    size = blocks[end - 1].out_feature_bytes
    if size == 0:
        return 0.0
    link = min(cluster.link_gbps(src), cluster.link_gbps(dst))
    return transfer_latency(size, batch, link, config.bw_scale, config.quantize)


def usable_classes(blocks: Sequence[BlockProfile], cluster: ClusterSpec) -> list[str]:
    profiled = {k[0] for k in blocks[0].latency_ms}
    return [c.name for c in cluster.classes if c.count > 0 and c.name in profiled]


def enumerate_candidates(model: str, blocks: Sequence[BlockProfile], cluster: ClusterSpec,
                         config: PlannerConfig, templates: list[Template] | None = None,
                         prune: bool = True) -> list[Candidate]:
    classes = usable_classes(blocks, cluster)
    if templates is None:
        templates = enumerate_templates(classes, config.max_partitions)
    t_eff = config.effective_slo(model, list(blocks))
    n = len(blocks)

    lat_cache: dict[tuple, float] = {}

    def lat(cls: str, v: int, b: int, i: int, j: int) -> float:
        key = (cls, v, b, i, j)
        if key not in lat_cache:
            lat_cache[key] = partition_latency(blocks, (i, j), cls, v, b)
        return lat_cache[key]

    for cls in classes:
        for v in config.fractions:
            for b in config.batches:
                if (cls, v, b) not in blocks[0].latency_ms:
                    raise ProfileError(f"model {model!r}: no profile for {cls}/{v}/{b}")

    out: list[Candidate] = []
    for t_index, template in enumerate(templates):
        if any(c not in classes for c in template):
            continue
        depth = len(template)
        if depth > n:
            continue
        found: list[Candidate] = []
        for inner in itertools.combinations(range(1, n), depth - 1):
            bounds = (0,) + inner + (n,)
            for b in config.batches:
                transfers = [
                    boundary_transfer_ms(blocks, bounds[d + 1], template[d], template[d + 1],
                                         b, cluster, config) if d < depth - 1 else 0.0
                    for d in range(depth)]
                fixed = sum(transfers)
                if fixed > t_eff:
                    continue
                options = []
                for d, cls in enumerate(template):
                    opts = []
                    for v in config.fractions:
                        c = lat(cls, v, b, bounds[d], bounds[d + 1])
                        if c + fixed <= t_eff:
                            opts.append((v, c))
                    options.append(opts)
                if any(not o for o in options):
                    continue
                for combo in itertools.product(*options):
                    if fixed + sum(c for _, c in combo) > t_eff:
                        continue
                    stages = tuple(
                        StageConfig(template[d], bounds[d], bounds[d + 1], v, c,
                                    b * 1000.0 / c, transfers[d])
                        for d, (v, c) in enumerate(combo))
                    found.append(Candidate(model, template, t_index, b, stages))
        out.extend(prune_dominated(found) if prune else found)
    out.sort(key=Candidate.sort_key)
    return out


def _divides(p: tuple[int, ...], q: tuple[int, ...]) -> bool:
    return all(b % a == 0 for a, b in zip(p, q))


def _covers(a: tuple[float, ...], b: tuple[float, ...]) -> bool:
    return all(x >= y for x, y in zip(a, b))


def prune_dominated(cands: list[Candidate]) -> list[Candidate]:
    """Drop configurations of one template that another makes redundant.

    ``a`` makes ``b`` redundant when every stage denominator of ``b`` divides
    the matching one of ``a`` and ``a`` delivers at least as much throughput
    per physical GPU on every stage: any allocation of ``b`` can then be
    re-expressed as an allocation of ``a`` on the same physical GPUs.
    Among exact ties the lowest-latency configuration is kept.
    """
    groups: dict[tuple[int, ...], list[Candidate]] = {}
    for c in cands:
        groups.setdefault(c.denoms, []).append(c)

    fronts: dict[tuple[int, ...], list[tuple[tuple[float, ...], Candidate]]] = {}
    for pattern, members in groups.items():
        members.sort(key=lambda c: (-sum(s.gpu_rps for s in c.stages), c.e2e_latency_ms,
                                    c.sort_key()))
        kept: list[tuple[tuple[float, ...], Candidate]] = []
        for c in members:
            rates = tuple(s.gpu_rps for s in c.stages)
            if not any(_covers(r, rates) for r, _ in kept):
                kept.append((rates, c))
        fronts[pattern] = kept

    survivors = []
    for pattern, kept in fronts.items():
        finer = [p for p in fronts if p != pattern and _divides(pattern, p)]
        for rates, c in kept:
            if any(_covers(r, rates) for p in finer for r, _ in fronts[p]):
                continue
            survivors.append(c)
    return survivors
