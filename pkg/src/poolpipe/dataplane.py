"""Runtime schedulers that turn queued requests into reserved batch executions.

``ReservationScheduler`` is the adaptive batcher: it probes every pooled
pipeline for the earliest end-to-end completion given the reservation
timelines, shrinks the batch until the oldest request's deadline holds, and
either drops, waits or dispatches. ``ReactiveScheduler`` is the ablation
baseline that batches per pool without looking ahead.
"""

from __future__ import annotations

import bisect
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Sequence

from .cluster import ClusterSpec
from .planner.plan import ClusterPlan, PipelinePlan
from .profiles import BlockProfile
from .reservation import ReservationEntry, ResourceId, ResourceTimeline

LCM = 12


@dataclass
class Request:
    rid: int
    model: str
    arrival_ms: float
    deadline_ms: float

    def __post_init__(self):
        if not self.deadline_ms > self.arrival_ms:
            raise ValueError(f"request {self.rid}: deadline must follow arrival")


@dataclass(frozen=True)
class VGpu:
    gpu: ResourceId
    node: str


@dataclass
class LinkTable:
    """Per-node NIC rates plus the scaling applied to every transfer."""

    rates: dict[str, tuple[float, float]]  # node -> (uplink, downlink) Gbps
    bw_scale: float = 0.2
    quantize: bool = False

    @classmethod
    def from_cluster(cls, cluster: ClusterSpec, bw_scale: float = 0.2,
                     quantize: bool = False) -> "LinkTable":
        return cls({n.node_id: (n.uplink_gbps, n.downlink_gbps) for n in cluster.nodes},
                   bw_scale, quantize)

    def effective_gbps(self, src: str, dst: str) -> float:
        return min(self.rates[src][0], self.rates[dst][1]) * self.bw_scale

    def link_ms(self, nbytes: float, gbps: float) -> float:
        size = nbytes * (0.5 if self.quantize else 1.0)
        return size * 8.0 / (gbps * self.bw_scale * 1e9) * 1000.0

    def transfer_ms(self, nbytes: float, src: str, dst: str) -> float:
        """Transfer time between nodes; same-node hand-offs are free."""
        if nbytes <= 0 or src == dst:
            return 0.0
        return self.link_ms(nbytes, min(self.rates[src][0], self.rates[dst][1]))


@dataclass
class PipelineRuntime:
    pid: int
    model: str
    plan: PipelinePlan
    stage_vgpus: list[list[VGpu]]
    unified_batch: int
    inf_ms: list[list[float]]     # [stage][bs], bs from 1..unified_batch (index 0 unused)
    out_bytes: list[int]          # bytes per request leaving each stage; 0 after the last
    links: LinkTable
    stage_nodes: list[set[str]] = field(default_factory=list)
    stage_down: list[float] = field(default_factory=list)  # fastest downlink per pool

    def __post_init__(self):
        self.stage_nodes = [{v.node for v in pool} for pool in self.stage_vgpus]
        self.stage_down = [max(self.links.rates[n][1] for n in nodes) for nodes in self.stage_nodes]

    @property
    def depth(self) -> int:
        return len(self.stage_vgpus)

    def transfer_ms(self, d: int, bs: int, src: str, dst: str) -> float:
        return self.links.transfer_ms(self.out_bytes[d] * bs, src, dst)

    def min_transfer_ms(self, d: int, bs: int, src: str) -> float:
        """Fastest possible cross-node transfer from ``src`` into pool ``d + 1``."""
        nbytes = self.out_bytes[d] * bs
        if nbytes <= 0:
            return 0.0
        return self.links.link_ms(nbytes, min(self.links.rates[src][0], self.stage_down[d + 1]))


def _interp_latency(table: dict[int, float], bs: int) -> float:
    if bs in table:
        return table[bs]
    keys = sorted(table)
    if bs < keys[0]:
        return table[keys[0]] * bs / keys[0]
    hi = next(k for k in keys if k > bs)
    lo = max(k for k in keys if k < bs)
    w = (bs - lo) / (hi - lo)
    return table[lo] * (1 - w) + table[hi] * w


def stage_latency_table(blocks: Sequence[BlockProfile], start: int, end: int, cls: str,
                        denom: int, max_bs: int) -> list[float]:
    """Stage inference latency for every batch size 1..max_bs.

    Batch sizes missing from the profile are interpolated linearly between
    the nearest profiled sizes.
    """
    profiled = sorted({k[2] for k in blocks[0].latency_ms if k[0] == cls and k[1] == denom})
    table = {b: math.fsum(blk.latency_ms[(cls, denom, b)] for blk in blocks[start:end])
             for b in profiled}
    if max_bs > profiled[-1]:
        raise ValueError(f"unified batch {max_bs} exceeds profiled batches for {cls}/{denom}")
    return [0.0] + [_interp_latency(table, bs) for bs in range(1, max_bs + 1)]


def place_vgpus(plan: ClusterPlan, cluster: ClusterSpec) -> dict[tuple[str, int, int], list[VGpu]]:
    """Assign concrete vGPUs to every (model, pipeline, stage).

    Each class's physical GPUs are laid out node by node on one line and the
    plan's slices are packed along it in plan order; a slice lives on the
    node where it starts.
    """
    lines: dict[str, list[tuple[int, str]]] = {}
    for c in cluster.classes:
        offset = 0
        spans = []
        for node in cluster.nodes_of(c.name):
            offset += node.gpus * LCM
            spans.append((offset, node.node_id))
        lines[c.name] = spans
    cursor = {c.name: 0 for c in cluster.classes}
    per_node: dict[str, int] = {}
    out = {}
    for model, pipes in plan.per_model.items():
        for pi, pipe in enumerate(pipes):
            for d, part in enumerate(pipe.partitions):
                pool = []
                step = LCM // part.denom
                for _ in range(part.vgpu_count):
                    pos = cursor[part.gpu_class]
                    spans = lines[part.gpu_class]
                    k = bisect.bisect_right([s for s, _ in spans], pos)
                    if k >= len(spans):
                        raise ValueError(f"plan overcommits class {part.gpu_class!r}")
                    node = spans[k][1]
                    idx = per_node.get(node, 0)
                    per_node[node] = idx + 1
                    pool.append(VGpu(ResourceId("gpu", node, idx), node))
                    cursor[part.gpu_class] = pos + step
                out[(model, pi, d)] = pool
    return out


def build_runtimes(plan: ClusterPlan, blocks: dict[str, Sequence[BlockProfile]],
                   cluster: ClusterSpec, bw_scale: float = 0.2,
                   quantize: bool = False) -> dict[str, list[PipelineRuntime]]:
    links = LinkTable.from_cluster(cluster, bw_scale, quantize)
    placed = place_vgpus(plan, cluster)
    out: dict[str, list[PipelineRuntime]] = {}
    pid = 0
    for model, pipes in plan.per_model.items():
        blk = blocks[model]
        runtimes = []
        for pi, pipe in enumerate(pipes):
            inf = []
            out_bytes = []
            for d, part in enumerate(pipe.partitions):
                i, j = part.block_range
                inf.append(stage_latency_table(blk, i, j, part.gpu_class, part.denom,
                                               pipe.unified_batch))
                last = d == len(pipe.partitions) - 1
                out_bytes.append(0 if last else blk[j - 1].out_feature_bytes)
            pools = [placed[(model, pi, d)] for d in range(len(pipe.partitions))]
            runtimes.append(PipelineRuntime(pid, model, pipe, pools, pipe.unified_batch, inf,
                                            out_bytes, links))
            pid += 1
        out[model] = runtimes
    return out


# -- probe / reserve ---------------------------------------------------------

@dataclass
class Step:
    """One timed piece of a batch execution."""

    kind: str          # "xfer" or "gpu"
    stage: int
    start_ms: float
    dur_ms: float
    resources: tuple[ResourceId, ...]

    @property
    def end_ms(self) -> float:
        return self.start_ms + self.dur_ms


@dataclass
class ProbeResult:
    pipeline: int
    bs: int
    path: list[VGpu]
    steps: list[Step]
    finish_ms: float
    wait_ms: float

    def entries(self, batch: Hashable) -> list[ReservationEntry]:
        return [ReservationEntry(r, s.start_ms, s.dur_ms, batch)
                for s in self.steps for r in s.resources]


def uplink(node: str) -> ResourceId:
    return ResourceId("uplink", node)


def downlink(node: str) -> ResourceId:
    return ResourceId("downlink", node)


def probe(p: PipelineRuntime, bs: int, now: float, timelines: ResourceTimeline) -> ProbeResult:
    """Greedy earliest-completion path through the pools for a batch of ``bs``.

    Stage by stage, every vGPU of the pool is tried: the feature map is sent
    in the first slot where the previous node's uplink and the candidate's
    downlink are both free, then inference takes the first free GPU slot
    after arrival. The candidate finishing first wins (first one on ties).
    Read-only.
    """
    if not 1 <= bs <= p.unified_batch:
        raise ValueError(f"batch {bs} outside 1..{p.unified_batch}")
    ready = now
    prev: VGpu | None = None
    path: list[VGpu] = []
    steps: list[Step] = []
    wait = 0.0
    for d, pool in enumerate(p.stage_vgpus):
        inf = p.inf_ms[d][bs]
        # no candidate can finish before this; reaching it ends the scan early
        if prev is None or prev.node in p.stage_nodes[d]:
            floor = ready + inf
        else:
            floor = ready + inf + p.min_transfer_ms(d - 1, bs, prev.node)
        best = None
        for vg in pool:
            xs = None
            xdur = 0.0
            arrive = ready
            if prev is not None and prev.node != vg.node:
                xdur = p.transfer_ms(d - 1, bs, prev.node, vg.node)
                if xdur > 0:
                    xs = timelines.earliest_slot((uplink(prev.node), downlink(vg.node)), ready, xdur)
                    arrive = xs + xdur
            gs = timelines.gpu_free_at(vg.gpu, arrive, inf)
            fin = gs + inf
            if best is None or fin < best[0]:
                best = (fin, vg, xs, xdur, arrive, gs)
                if fin <= floor:
                    break
        fin, vg, xs, xdur, arrive, gs = best
        if xs is not None:
            steps.append(Step("xfer", d, xs, xdur, (uplink(prev.node), downlink(vg.node))))
            wait += xs - ready
        steps.append(Step("gpu", d, gs, inf, (vg.gpu,)))
        wait += gs - arrive
        path.append(vg)
        ready = fin
        prev = vg
    return ProbeResult(p.pid, bs, path, steps, ready, wait)


def reserve(result: ProbeResult, timelines: ResourceTimeline, batch: Hashable) -> None:
    """Commit every interval of ``result``; step ``k`` is keyed ``(batch, k)``."""
    timelines.mark_reserved(ReservationEntry(r, s.start_ms, s.dur_ms, (batch, k))
                            for k, s in enumerate(result.steps) for r in s.resources)


# -- jobs handed to the simulator --------------------------------------------

@dataclass
class JobStep:
    kind: str
    stage: int
    start_ms: float
    dur_ms: float
    resources: tuple[ResourceId, ...]
    key: Hashable                 # reservation batch key on every resource of the step
    preds: tuple[int, ...] = ()   # indexes of steps that must finish first


@dataclass
class Job:
    jid: Hashable
    model: str
    pipeline: int
    requests: list[Request]
    steps: list[JobStep]
    final: bool                   # completing the job completes its requests
    stage: int = 0                # first stage covered by the job
    node: str = ""                # node of the vGPU running the job's last inference


def job_from_probe(jid: Hashable, model: str, requests: list[Request],
                   result: ProbeResult) -> Job:
    steps = [JobStep(s.kind, s.stage, s.start_ms, s.dur_ms, s.resources, (jid, k),
                     (k - 1,) if k else ())
             for k, s in enumerate(result.steps)]
    return Job(jid, model, result.pipeline, requests, steps, True, 0, result.path[-1].node)


@dataclass
class SchedOutput:
    jobs: list[Job] = field(default_factory=list)
    drops: list[Request] = field(default_factory=list)

    def extend(self, other: "SchedOutput") -> None:
        self.jobs.extend(other.jobs)
        self.drops.extend(other.drops)


@dataclass
class SchedulerStats:
    probes: int = 0            # every probe call
    dispatch_probes: int = 0   # probe calls made in steps that ended in a dispatch
    dispatches: int = 0
    drops: int = 0
    waits: int = 0

    @property
    def probes_per_dispatch(self) -> float:
        return self.dispatch_probes / self.dispatches if self.dispatches else 0.0

    def merge(self, other: "SchedulerStats") -> None:
        for f in ("probes", "dispatch_probes", "dispatches", "drops", "waits"):
            setattr(self, f, getattr(self, f) + getattr(other, f))


# -- adaptive batching step ---------------------------------------------------

@dataclass
class Drop:
    request: Request


@dataclass
class Wait:
    until_ms: float
    pipeline: int
    bs: int


@dataclass
class Dispatch:
    requests: list[Request]
    pipeline: PipelineRuntime
    result: ProbeResult
    job: Job | None = None   # set by the reactive scheduler, which builds per-stage jobs


Action = Drop | Wait | Dispatch

TIME_EPS = 1e-9
WAIT_BISECT = 12


def _latest_start(p: PipelineRuntime, n: int, now: float, deadline: float,
                  timelines: ResourceTimeline, count) -> tuple[float, ProbeResult | None]:
    """Latest verified start time at which a batch of ``n`` still meets ``deadline``.

    Finish time is non-decreasing in the start time, so the feasible starts
    form an interval beginning at ``now``; its right end is bracketed and
    bisected a bounded number of times. Returns ``(now, None)`` when even an
    immediate start misses the deadline.
    """
    first = count(p, n, now)
    if first.finish_ms > deadline:
        return now, None
    # no path runs faster than the idle chain along the pools
    idle = sum(p.inf_ms[d][n] for d in range(p.depth))
    hi = deadline - idle
    if hi <= now:
        return now, first
    r = count(p, n, hi)
    if r.finish_ms <= deadline:
        return hi, r
    lo, best = now, first
    guess = now + (deadline - first.finish_ms)
    if now < guess < hi:
        r = count(p, n, guess)
        if r.finish_ms <= deadline:
            lo, best = guess, r
        else:
            hi = guess
    for _ in range(WAIT_BISECT):
        if hi - lo <= 1e-6:
            break
        mid = 0.5 * (lo + hi)
        r = count(p, n, mid)
        if r.finish_ms <= deadline:
            lo, best = mid, r
        else:
            hi = mid
    return lo, best


def schedule_step(q: Sequence[Request], pipelines: Sequence[PipelineRuntime], now: float,
                  timelines: ResourceTimeline, stats: SchedulerStats | None = None,
                  batch_id: Hashable | None = None) -> Action:
    """One pass of the adaptive batching loop for a single model's queue.

    Picks the pipeline with the least waiting at its unified batch, then the
    largest batch whose probed finish meets the oldest deadline; drops the
    oldest request if none does, waits if too few requests are queued, and
    otherwise dispatches and commits the reservation (keyed ``batch_id``,
    default the oldest request's id).
    """
    if not q:
        raise ValueError("schedule_step needs a non-empty queue")
    stats = stats if stats is not None else SchedulerStats()
    calls = 0

    def count(p, bs, t):
        nonlocal calls
        calls += 1
        return probe(p, bs, t, timelines)

    first = [count(p, p.unified_batch, now) for p in pipelines]
    k = min(range(len(pipelines)), key=lambda i: (first[i].wait_ms, i))
    p = pipelines[k]
    head = q[0]
    chosen = None
    for bs in range(p.unified_batch, 0, -1):
        r = first[k] if bs == p.unified_batch else count(p, bs, now)
        if r.finish_ms <= head.deadline_ms:
            chosen = r
            break
    action: Action
    if chosen is None:
        action = Drop(head)
        stats.drops += 1
    elif len(q) < chosen.bs:
        until, r = _latest_start(p, len(q), now, head.deadline_ms, timelines, count)
        if r is None:
            # a smaller batch would miss; re-check when the oldest deadline passes
            action = Wait(head.deadline_ms, p.pid, chosen.bs)
            stats.waits += 1
        elif until - now <= TIME_EPS:
            action = Dispatch(list(q), p, r)
        else:
            action = Wait(until, p.pid, chosen.bs)
            stats.waits += 1
    else:
        action = Dispatch(list(itertools.islice(q, chosen.bs)), p, chosen)
    stats.probes += calls
    if isinstance(action, Dispatch):
        reserve(action.result, timelines, head.rid if batch_id is None else batch_id)
        stats.dispatch_probes += calls
        stats.dispatches += 1
    return action


class ReservationScheduler:
    """Per-model queue driving :func:`schedule_step` on simulator events."""

    name = "reservation"

    def __init__(self, model: str, pipelines: list[PipelineRuntime],
                 timelines: ResourceTimeline, debug: bool = False):
        if not pipelines:
            raise ValueError(f"model {model!r} has no pipelines")
        self.model = model
        self.pipelines = pipelines
        self.timelines = timelines
        self.queue: deque[Request] = deque()
        self.stats = SchedulerStats()
        self.next_wake: float | None = None
        self.log: list[dict] | None = [] if debug else None

    def _record(self, now: float, action: Action) -> None:
        if self.log is None:
            return
        rec = {"time_ms": now, "model": self.model, "action": type(action).__name__.lower()}
        if isinstance(action, Dispatch):
            r = action.result
            rec.update(pipeline=r.pipeline, bs=r.bs, path=[str(v.gpu) for v in r.path],
                       wait_ms=r.wait_ms, finish_ms=r.finish_ms,
                       requests=[q.rid for q in action.requests])
        elif isinstance(action, Wait):
            rec.update(pipeline=action.pipeline, bs=action.bs, until_ms=action.until_ms,
                       queued=len(self.queue))
        else:
            rec.update(request=action.request.rid)
        self.log.append(rec)

    def _run(self, now: float) -> SchedOutput:
        out = SchedOutput()
        self.next_wake = None
        while self.queue:
            action = schedule_step(self.queue, self.pipelines, now, self.timelines, self.stats)
            self._record(now, action)
            if isinstance(action, Drop):
                out.drops.append(self.queue.popleft())
            elif isinstance(action, Wait):
                self.next_wake = action.until_ms
                break
            else:
                for _ in action.requests:
                    self.queue.popleft()
                jid = action.requests[0].rid
                out.jobs.append(job_from_probe(jid, self.model, action.requests, action.result))
        return out

    def on_arrival(self, req: Request, now: float) -> SchedOutput:
        self.queue.append(req)
        return self._run(now)

    def on_wake(self, now: float) -> SchedOutput:
        return self._run(now) if self.queue else SchedOutput()

    def on_job_done(self, job: Job, now: float) -> SchedOutput:
        return self._run(now) if self.queue else SchedOutput()


# -- reactive baseline -------------------------------------------------------

@dataclass
class StageItem:
    request: Request
    budget_ms: float   # finish-by time for the current stage
    node: str          # where its feature map currently lives ("" before stage 0)


class _SmoothRR:
    """Smooth weighted round-robin over pipelines, weighted by planned throughput."""

    def __init__(self, weights: Sequence[float]):
        self.weights = list(weights)
        self.current = [0.0] * len(weights)
        self.total = sum(weights)

    def next(self) -> int:
        for i, w in enumerate(self.weights):
            self.current[i] += w
        k = max(range(len(self.current)), key=lambda i: (self.current[i], -i))
        self.current[k] -= self.total
        return k


class ReactiveScheduler:
    """Pool-local greedy batching without cross-stage reservation.

    Requests are spread over a model's pipelines by smooth weighted
    round-robin. Each pool keeps its own deadline-ordered queue; whenever a
    vGPU of the pool is idle it takes the largest batch that fits the head
    item's stage budget, a slice of the SLO proportional to the plan's
    transfer-plus-inference time up to that stage. Feature-map transfers
    are booked on the links at dispatch, so contention shows up as delay
    the budget check never saw.
    """

    name = "reactive"

    def __init__(self, model: str, pipelines: list[PipelineRuntime],
                 timelines: ResourceTimeline, slo_ms: float, debug: bool = False):
        if not pipelines:
            raise ValueError(f"model {model!r} has no pipelines")
        self.model = model
        self.pipelines = pipelines
        self.timelines = timelines
        self.slo_ms = slo_ms
        self.rr = _SmoothRR([p.plan.throughput_rps for p in pipelines])
        self.queues = [[[] for _ in range(p.depth)] for p in pipelines]
        self.busy: set[ResourceId] = set()
        self.stats = SchedulerStats()
        self.next_wake: float | None = None
        self.log: list[dict] | None = [] if debug else None
        self.fractions = []
        for p in pipelines:
            parts = p.plan.partitions
            shares = [parts[d].latency_ms + (parts[d - 1].out_transfer_ms if d else 0.0)
                      for d in range(len(parts))]
            total = sum(shares)
            acc, fr = 0.0, []
            for s in shares:
                acc += s
                fr.append(acc / total)
            fr[-1] = 1.0
            self.fractions.append(fr)

    def _budget(self, k: int, d: int, req: Request) -> float:
        if d == len(self.fractions[k]) - 1:
            return req.deadline_ms
        return req.arrival_ms + self.slo_ms * self.fractions[k][d]

    def _est_in(self, k: int, d: int, bs: int) -> float:
        if d == 0:
            return 0.0
        part = self.pipelines[k].plan.partitions[d - 1]
        return part.out_transfer_ms * bs / part.batch

    def _enqueue(self, k: int, d: int, item: StageItem) -> None:
        q = self.queues[k][d]
        keys = [(it.budget_ms, it.request.rid) for it in q]
        q.insert(bisect.bisect_right(keys, (item.budget_ms, item.request.rid)), item)

    def reactive_schedule_step(self, k: int, d: int, now: float) -> Action | None:
        """One decision for pool ``d`` of pipeline ``k``; ``None`` when nothing to do."""
        p = self.pipelines[k]
        q = self.queues[k][d]
        free = next((v for v in p.stage_vgpus[d] if v.gpu not in self.busy), None)
        if not q or free is None:
            return None
        head = q[0]
        for bs in range(min(p.unified_batch, len(q)), 0, -1):
            if now + self._est_in(k, d, bs) + p.inf_ms[d][bs] <= head.budget_ms:
                return self._dispatch(k, d, bs, free, now)
        return Drop(head.request)

    def _dispatch(self, k: int, d: int, bs: int, vg: VGpu, now: float) -> Dispatch:
        p = self.pipelines[k]
        items = self.queues[k][d][:bs]
        del self.queues[k][d][:bs]
        jid = (items[0].request.rid, d)
        steps: list[JobStep] = []
        ready = now
        groups: dict[str, int] = {}
        for it in items:
            if it.node and it.node != vg.node:
                groups[it.node] = groups.get(it.node, 0) + 1
        for src, n in groups.items():
            dur = p.transfer_ms(d - 1, n, src, vg.node)
            if dur <= 0:
                continue
            res = (uplink(src), downlink(vg.node))
            s = self.timelines.earliest_slot(res, now, dur)
            steps.append(JobStep("xfer", d, s, dur, res, (jid, len(steps))))
            # later groups share the downlink, so each booking must see the previous one
            self._book(steps[-1])
            ready = max(ready, s + dur)
        inf = p.inf_ms[d][bs]
        gs = self.timelines.gpu_free_at(vg.gpu, ready, inf)
        steps.append(JobStep("gpu", d, gs, inf, (vg.gpu,), (jid, len(steps)),
                             tuple(range(len(steps)))))
        self._book(steps[-1])
        self.busy.add(vg.gpu)
        self.stats.dispatches += 1
        job = Job(jid, self.model, p.pid, [it.request for it in items], steps,
                  d == p.depth - 1, d, vg.node)
        result = ProbeResult(p.pid, bs, [vg],
                             [Step(s.kind, s.stage, s.start_ms, s.dur_ms, s.resources)
                              for s in steps], gs + inf, 0.0)
        return Dispatch(job.requests, p, result, job)

    def _book(self, step: JobStep) -> None:
        self.timelines.mark_reserved(ReservationEntry(r, step.start_ms, step.dur_ms, step.key)
                                     for r in step.resources)

    def _drain(self, k: int, d: int, now: float, out: SchedOutput) -> None:
        while True:
            action = self.reactive_schedule_step(k, d, now)
            if action is None:
                return
            if self.log is not None:
                self.log.append({"time_ms": now, "model": self.model, "pipeline": k,
                                 "stage": d, "action": type(action).__name__.lower(),
                                 "bs": len(action.requests) if isinstance(action, Dispatch) else 0})
            if isinstance(action, Drop):
                self.queues[k][d].pop(0)
                out.drops.append(action.request)
                self.stats.drops += 1
            else:
                out.jobs.append(action.job)

    def on_arrival(self, req: Request, now: float) -> SchedOutput:
        k = self.rr.next()
        self._enqueue(k, 0, StageItem(req, self._budget(k, 0, req), ""))
        out = SchedOutput()
        self._drain(k, 0, now, out)
        return out

    def on_wake(self, now: float) -> SchedOutput:
        return SchedOutput()

    def on_job_done(self, job: Job, now: float) -> SchedOutput:
        k = next(i for i, p in enumerate(self.pipelines) if p.pid == job.pipeline)
        d = job.stage
        gpu = job.steps[-1].resources[0]
        self.busy.discard(gpu)
        out = SchedOutput()
        if not job.final:
            for req in job.requests:
                self._enqueue(k, d + 1, StageItem(req, self._budget(k, d + 1, req), job.node))
            self._drain(k, d + 1, now, out)
        self._drain(k, d, now, out)
        return out
