from __future__ import annotations

import logging
import time
from typing import Mapping, Sequence

from ..cluster import ClusterSpec
from ..profiles import BlockProfile
from .allocate import Allocator
from .candidates import Candidate, StageConfig, boundary_transfer_ms, enumerate_candidates
from .config import PlannerConfig
from .plan import ClusterPlan, PartitionSpec, PipelinePlan
from .templates import enumerate_templates

log = logging.getLogger(__name__)

Blocks = Mapping[str, Sequence[BlockProfile]]


class InfeasibleError(ValueError):
    """No configuration of some model meets its SLO (or fits the cluster)."""

    def __init__(self, reasons: dict[str, str]):
        self.reasons = reasons
        super().__init__("; ".join(f"{m}: {r}" for m, r in reasons.items()))


def _pipeline(cand: Candidate, counts: tuple[int, ...]) -> PipelinePlan:
    parts = [PartitionSpec((s.start, s.end), s.gpu_class, s.denom, cand.batch, g, s.latency_ms,
                           s.vgpu_rps * g, s.out_transfer_ms)
             for s, g in zip(cand.stages, counts)]
    return PipelinePlan(parts, cand.batch, min(p.throughput_rps for p in parts),
                        cand.e2e_latency_ms)


def _capacity(cluster: ClusterSpec) -> dict[str, int]:
    return {c.name: c.count for c in cluster.classes}


def _objective(per_model: dict[str, list[PipelinePlan]], shares: dict[str, float]) -> float:
    tput = {m: sum(p.throughput_rps for p in pipes) for m, pipes in per_model.items()}
    if len(tput) == 1:
        return next(iter(tput.values()))
    return min(tput[m] / shares[m] for m in tput)


def _solve_templates(blocks: Blocks, cluster: ClusterSpec, config: PlannerConfig,
                     max_partitions: int, mode: str) -> ClusterPlan:
    t0 = time.perf_counter()
    models = list(blocks)
    all_cands: list[Candidate] = []
    reasons = {}
    for m in models:
        classes = [c.name for c in cluster.classes if c.count > 0]
        templates = enumerate_templates(classes, max_partitions)
        cands = enumerate_candidates(m, blocks[m], cluster, config, templates)
        if not cands:
            reasons[m] = ("no configuration meets the effective SLO of "
                          f"{config.effective_slo(m, list(blocks[m])):.3f} ms")
        all_cands.extend(cands)
    if reasons:
        raise InfeasibleError(reasons)
    t_enum = time.perf_counter() - t0
    shares = config.shares(models)
    alloc = Allocator(all_cands, _capacity(cluster), shares)
    res = alloc.solve(config.mip_gap, config.node_limit, config.time_limit_s)
    if res.objective <= 0:
        raise InfeasibleError({m: "no configuration fits the cluster" for m in models})
    if res.status != "optimal":
        log.warning("allocation stopped with status %s (objective %.6g, bound %.6g)",
                    res.status, res.objective, res.bound)
    per_model: dict[str, list[PipelinePlan]] = {m: [] for m in models}
    for j in sorted(res.counts, key=lambda j: all_cands[j].sort_key()):
        per_model[all_cands[j].model].append(_pipeline(all_cands[j], res.counts[j]))
    stats = {"status": res.status, "bound": res.bound, "lp_bound": res.lp_bound,
             "mip_gap": res.mip_gap,
             "candidates": len(all_cands), "enumerate_s": t_enum,
             "runtime_s": time.perf_counter() - t0}
    return ClusterPlan(per_model, _objective(per_model, shares), mode, stats)


def solve(blocks: Blocks, cluster: ClusterSpec, config: PlannerConfig | None = None) -> ClusterPlan:
    """Optimal pooled-pipeline plan for every model in ``blocks``."""
    config = config or PlannerConfig()
    return _solve_templates(blocks, cluster, config, config.max_partitions, "pooled")


def solve_np(blocks: Blocks, cluster: ClusterSpec,
             config: PlannerConfig | None = None) -> ClusterPlan:
    """Same optimizer restricted to whole-model (single-stage) pipelines."""
    config = config or PlannerConfig()
    return _solve_templates(blocks, cluster, config, 1, "np")


# -- DART-r ------------------------------------------------------------------

def best_chain(model: str, blocks: Sequence[BlockProfile], cluster: ClusterSpec,
               config: PlannerConfig, low: str, high: str) -> Candidate | None:
    """Best two-stage, whole-GPU chain over one low- and one high-class GPU.

    Both stage orders, every cut and every batch are tried; the chain with the
    highest throughput wins, ties going to lower latency.
    """
    t_eff = config.effective_slo(model, list(blocks))
    n = len(blocks)
    best = None
    best_key = None
    for order in ((low, high), (high, low)):
        for cut in range(1, n):
            for b in config.batches:
                y = boundary_transfer_ms(blocks, cut, order[0], order[1], b, cluster, config)
                c1 = sum(blk.latency_ms[(order[0], 1, b)] for blk in blocks[:cut])
                c2 = sum(blk.latency_ms[(order[1], 1, b)] for blk in blocks[cut:])
                if c1 + y + c2 > t_eff:
                    continue
                stages = (StageConfig(order[0], 0, cut, 1, c1, b * 1000.0 / c1, y),
                          StageConfig(order[1], cut, n, 1, c2, b * 1000.0 / c2, 0.0))
                tput = min(s.vgpu_rps for s in stages)
                key = (-tput, c1 + y + c2, order != (low, high), cut, b)
                if best_key is None or key < best_key:
                    best_key = key
                    best = Candidate(model, order, -1, b, stages)
    return best


def _leftover_plan(blocks: Blocks, cluster: ClusterSpec, config: PlannerConfig,
                   counts: dict[str, int]) -> dict[str, list[PipelinePlan]]:
    if not any(counts.values()):
        return {m: [] for m in blocks}
    sub = ClusterSpec.build(counts, nic_gbps={c: cluster.link_gbps(c) for c in counts})
    try:
        return solve_np(blocks, sub, config).per_model
    except InfeasibleError:
        return {m: [] for m in blocks}


def solve_dart_r(blocks: Blocks, cluster: ClusterSpec,
                 config: PlannerConfig | None = None) -> ClusterPlan:
    """Replicated two-GPU chains plus whole-model leftovers.

    Each chain pairs one physical GPU of each class and is emitted as its own
    pipeline, so requests cannot hop between chains. With several models,
    chains go one at a time to the model with the lowest share-normalized
    throughput.
    """
    config = config or PlannerConfig()
    t0 = time.perf_counter()
    names = cluster.class_names
    if len(names) != 2:
        raise ValueError("DART-r needs exactly two GPU classes")
    models = list(blocks)
    shares = config.shares(models)
    ref = {m: min(names, key=lambda c: (sum(b.latency_ms[(c, 1, 1)] for b in blocks[m]), c))
           for m in models}
    chains = {}
    for m in models:
        high = ref[m]
        low = names[1] if high == names[0] else names[0]
        chains[m] = best_chain(m, blocks[m], cluster, config, low, high)
    n_chains = min(cluster.count(c) for c in names)
    per_model: dict[str, list[PipelinePlan]] = {m: [] for m in models}
    usable = [m for m in models if chains[m] is not None]
    placed = 0
    if usable:
        for _ in range(n_chains):
            m = min(usable, key=lambda m: (sum(p.throughput_rps for p in per_model[m])
                                           / shares[m], models.index(m)))
            per_model[m].append(_pipeline(chains[m], (1, 1)))
            placed += 1
    left = {c: cluster.count(c) - placed for c in names}
    for m, pipes in _leftover_plan(blocks, cluster, config, left).items():
        per_model[m].extend(pipes)
    missing = {m: "no chain or whole-model configuration meets the SLO"
               for m in models if not per_model[m]}
    if missing:
        raise InfeasibleError(missing)
    stats = {"status": "heuristic", "chains": placed, "leftover": left,
             "runtime_s": time.perf_counter() - t0}
    return ClusterPlan(per_model, _objective(per_model, shares), "dart_r", stats)


SOLVERS = {"pooled": solve, "ppipe": solve, "np": solve_np, "dart_r": solve_dart_r}
