"""Independent constraint checks for a ClusterPlan."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from ..cluster import ClusterSpec
from ..profiles import ProfileError, partition_latency
from .candidates import boundary_transfer_ms
from .config import PlannerConfig
from .plan import ClusterPlan
from .solve import Blocks

REL_TOL = 1e-9


@dataclass(frozen=True)
class Violation:
    check: str
    model: str | None
    pipeline: int | None
    detail: str

    def __str__(self) -> str:
        where = "" if self.model is None else f" {self.model}"
        if self.pipeline is not None:
            where += f"[{self.pipeline}]"
        return f"{self.check}{where}: {self.detail}"


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-9)


def validate(plan: ClusterPlan, blocks: Blocks, cluster: ClusterSpec,
             config: PlannerConfig | None = None) -> list[Violation]:
    config = config or PlannerConfig()
    out: list[Violation] = []
    known = set(cluster.class_names)
    used = {k: Fraction(0) for k in known}
    for model, pipes in plan.per_model.items():
        if model not in blocks:
            out.append(Violation("unknown model", model, None, "model has no block profile"))
            continue
        blk = list(blocks[model])
        n = len(blk)
        t_eff = config.effective_slo(model, blk)

        def bad(check, idx, detail):
            out.append(Violation(check, model, idx, detail))

        for idx, pipe in enumerate(pipes):
            parts = pipe.partitions
            if not parts:
                bad("non-empty pipeline", idx, "pipeline has no partitions")
                continue
            if len(parts) > config.max_partitions:
                bad("template length", idx, f"{len(parts)} partitions > {config.max_partitions}")
            if parts[0].block_range[0] != 0 or parts[-1].block_range[1] != n:
                bad("partition coverage", idx,
                    f"covers [{parts[0].block_range[0]}, {parts[-1].block_range[1]}) of {n}")
            for d, p in enumerate(parts):
                i, j = p.block_range
                if not i < j:
                    bad("non-empty partition", idx, f"partition {d} has range [{i}, {j})")
                if d + 1 < len(parts) and parts[d + 1].block_range[0] != j:
                    bad("partition adjacency", idx,
                        f"partition {d} ends at {j}, next starts at {parts[d + 1].block_range[0]}")
                if p.batch != pipe.unified_batch:
                    bad("unified batch", idx, f"partition {d} batch {p.batch} != {pipe.unified_batch}")
                if p.vgpu_count < 1:
                    bad("indicator", idx, f"partition {d} has vgpu_count {p.vgpu_count}")
                if p.gpu_class not in known:
                    bad("unknown class", idx, f"partition {d} uses class {p.gpu_class!r}")
                    continue
                if p.denom not in config.fractions or p.batch not in config.batches:
                    bad("configuration domain", idx, f"partition {d} uses 1/{p.denom}, batch {p.batch}")
                used[p.gpu_class] += Fraction(max(p.vgpu_count, 0), p.denom)
            if any(not a.block_range[0] < a.block_range[1] for a in parts):
                continue
            total = 0.0
            tputs = []
            for d, p in enumerate(parts):
                if p.gpu_class not in known:
                    break
                try:
                    lat = partition_latency(blk, p.block_range, p.gpu_class, p.denom, p.batch)
                except ProfileError as exc:
                    bad("profile coverage", idx, str(exc))
                    break
                if not _close(lat, p.latency_ms):
                    bad("partition latency", idx, f"partition {d}: {p.latency_ms} != profile {lat}")
                expect_y = 0.0
                if d + 1 < len(parts) and p.block_range[1] <= n:
                    expect_y = boundary_transfer_ms(blk, p.block_range[1], p.gpu_class,
                                                    parts[d + 1].gpu_class, p.batch, cluster, config)
                if not _close(expect_y, p.out_transfer_ms):
                    bad("transfer latency", idx,
                        f"partition {d}: {p.out_transfer_ms} != expected {expect_y}")
                total += lat + expect_y
                if p.vgpu_count >= 1:
                    x = p.batch * p.vgpu_count * 1000.0 / lat
                    if not _close(x, p.throughput_rps):
                        bad("partition throughput", idx, f"partition {d}: {p.throughput_rps} != {x}")
                    tputs.append(x)
            else:
                if total > t_eff * (1 + REL_TOL):
                    bad("latency SLO", idx, f"{total:.6f} ms > effective SLO {t_eff:.6f} ms")
                if not _close(total, pipe.e2e_latency_ms):
                    bad("pipeline latency", idx, f"{pipe.e2e_latency_ms} != recomputed {total}")
                if tputs and len(tputs) == len(parts) and not _close(min(tputs), pipe.throughput_rps):
                    bad("pipeline throughput", idx, f"{pipe.throughput_rps} != min {min(tputs)}")
    for k in cluster.class_names:
        if used[k] > cluster.count(k):
            out.append(Violation("capacity", None, None,
                                 f"class {k!r} uses {float(used[k]):.4f} of {cluster.count(k)} GPUs"))
    return out
