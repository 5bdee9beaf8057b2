"""Deterministic discrete-event execution of request traces through a plan.

Every dispatched batch arrives as a :class:`~poolpipe.dataplane.Job` whose
steps are already reserved on the shared timelines. A step starts once its
predecessors are done, it heads the reservation order of each of its
resources, and its (possibly corrected) reserved start has come. Actual
durations are the reserved ones times an optional noise draw, and each
finished step reports its observed interval back to the timelines.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cluster import ClusterSpec
from .dataplane import (Job, ReactiveScheduler, Request, ReservationScheduler, SchedOutput,
                        SchedulerStats, build_runtimes)
from .planner.config import PlannerConfig
from .planner.plan import ClusterPlan
from .profiles import BlockProfile
from .reservation import ResourceId, ResourceTimeline
from .workload import Trace

EVENT_KINDS = ("arrival", "wake", "start", "transfer_done", "inference_done", "usage_report")
SCHEDULERS = ("reservation", "reactive")
PRUNE_EVERY_MS = 100.0


class SimulationError(RuntimeError):
    pass


@dataclass
class SimConfig:
    seed: int = 0
    bw_scale: float = 0.2
    quantize: bool = False
    latency_noise: float = 0.0        # lognormal sigma of the duration multiplier; 0 is off
    duration_ms: float = 30_000.0
    scheduler: str = "reservation"
    debug: bool = False
    # stop as soon as attainment after warm-up can no longer reach this value
    stop_below: float | None = None
    warmup: float = 0.10

    def __post_init__(self):
        if not 0 < self.bw_scale <= 1:
            raise ValueError("bw_scale must be in (0, 1]")
        if self.latency_noise < 0:
            raise ValueError("latency_noise must be >= 0")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}; expected one of {SCHEDULERS}")


def link_model(cluster: ClusterSpec, node: str, direction: str, bw_scale: float = 0.2) -> float:
    """Effective Gbps of one direction of a node's NIC.

    Links are used by one transfer at a time at the full scaled rate; queued
    transfers wait for their reserved slot instead of sharing bandwidth.
    """
    for n in cluster.nodes:
        if n.node_id == node:
            rate = {"uplink": n.uplink_gbps, "downlink": n.downlink_gbps}.get(direction)
            if rate is None:
                raise ValueError(f"direction must be 'uplink' or 'downlink', got {direction!r}")
            return rate * bw_scale
    raise ValueError(f"unknown node {node!r}")


@dataclass
class RequestRecord:
    rid: int
    model: str
    arrival_ms: float
    deadline_ms: float
    completion_ms: float | None = None
    dropped: bool = False
    pipeline: int = -1
    bs: int = 0
    queue_ms: float = 0.0      # arrival to first inference start
    transfer_ms: float = 0.0   # time spent in feature-map transfers

    @property
    def on_time(self) -> bool:
        return self.completion_ms is not None and self.completion_ms <= self.deadline_ms


@dataclass
class UsageRecord:
    resource: str
    kind: str
    start_ms: float
    end_ms: float
    key: str


@dataclass
class RunReport:
    records: list[RequestRecord]
    usage: list[UsageRecord]
    horizon_ms: float
    vgpus: dict[str, list[tuple[str, int]]]   # class -> [(gpu resource, fraction denominator)]
    stats: dict
    decisions: list[dict] = field(default_factory=list)
    timelines: dict | None = None     # final timeline dump, kept in debug runs

    @property
    def attainment(self) -> float:
        from .metrics import slo_attainment
        return slo_attainment(self)

    def write_requests(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["rid", "model", "arrival_ms", "deadline_ms", "completion_ms", "dropped",
                        "pipeline", "bs"])
            for r in self.records:
                w.writerow([r.rid, r.model, repr(r.arrival_ms), repr(r.deadline_ms),
                            "" if r.completion_ms is None else repr(r.completion_ms),
                            int(r.dropped), r.pipeline, r.bs])

    def write_usage(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["resource", "kind", "start_ms", "end_ms", "key"])
            for u in self.usage:
                w.writerow([u.resource, u.kind, repr(u.start_ms), repr(u.end_ms), u.key])

    def summary(self) -> dict:
        from .metrics import summarize
        return summarize(self)

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.write_requests(out / "requests.csv")
        self.write_usage(out / "usage.csv")
        body = {"summary": self.summary(), "stats": self.stats, "horizon_ms": self.horizon_ms}
        (out / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        if self.timelines is not None:
            (out / "timelines.json").write_text(json.dumps(self.timelines, indent=1) + "\n")
        if self.decisions:
            (out / "decisions.jsonl").write_text(
                "".join(json.dumps(d, sort_keys=True) + "\n" for d in self.decisions))


class _Step:
    __slots__ = ("job", "idx", "kind", "resources", "key", "dur", "preds_left", "succs",
                 "started", "actual_start", "actual_end", "wake_at")

    def __init__(self, job, idx, spec):
        self.job = job
        self.idx = idx
        self.kind = spec.kind
        self.resources = spec.resources
        self.key = spec.key
        self.dur = spec.dur_ms
        self.preds_left = len(spec.preds)
        self.succs: list[_Step] = []
        self.started = False
        self.actual_start = math.nan
        self.actual_end = math.nan
        self.wake_at = math.nan


class _JobState:
    __slots__ = ("job", "steps", "left")

    def __init__(self, job: Job):
        self.job = job
        self.steps = [_Step(self, i, s) for i, s in enumerate(job.steps)]
        for i, s in enumerate(job.steps):
            for p in s.preds:
                self.steps[p].succs.append(self.steps[i])
        self.left = len(self.steps)


class Simulator:
    def __init__(self, plan: ClusterPlan, cluster: ClusterSpec,
                 blocks: Mapping[str, Sequence[BlockProfile]], config: SimConfig,
                 slo_ms: Mapping[str, float]):
        self.plan = plan
        self.cluster = cluster
        self.config = config
        self.timelines = ResourceTimeline()
        self.runtimes = build_runtimes(plan, dict(blocks), cluster, config.bw_scale,
                                       config.quantize)
        self.slo_ms = dict(slo_ms)
        self.schedulers = {}
        for model, pipes in self.runtimes.items():
            if config.scheduler == "reservation":
                self.schedulers[model] = ReservationScheduler(model, pipes, self.timelines,
                                                              config.debug)
            else:
                self.schedulers[model] = ReactiveScheduler(model, pipes, self.timelines,
                                                           self.slo_ms[model], config.debug)
        self.rng = np.random.default_rng(config.seed)
        self.heap: list = []
        self.seq = itertools.count()
        self.now = 0.0
        self.busy: dict[ResourceId, _Step] = {}
        self.by_key: dict = {}
        self.wake_token: dict[str, int] = {}
        self.records: dict[int, RequestRecord] = {}
        self.usage: list[UsageRecord] = []
        self.feedback_calls = 0
        self.shifted = 0
        self.events = 0
        self.last_prune = 0.0
        self.warm_cut = 0.0
        self.failures = 0
        self.fail_limit = math.inf
        self.aborted = False

    def _fail(self, rec: RequestRecord) -> None:
        if rec.arrival_ms >= self.warm_cut:
            self.failures += 1

    # -- event plumbing --
    def push(self, t: float, kind: str, payload) -> None:
        if t < self.now:
            raise SimulationError(f"event {kind} at {t} precedes current time {self.now}")
        heapq.heappush(self.heap, (t, next(self.seq), kind, payload))

    def _noise(self) -> float:
        s = self.config.latency_noise
        if s <= 0:
            return 1.0
        return float(self.rng.lognormal(-0.5 * s * s, s))

    def _apply(self, model: str, out: SchedOutput) -> None:
        for req in out.drops:
            self.records[req.rid].dropped = True
            self._fail(self.records[req.rid])
        for job in out.jobs:
            state = _JobState(job)
            for st in state.steps:
                self.by_key[st.key] = st
            for req in job.requests:
                rec = self.records[req.rid]
                rec.pipeline = job.pipeline
                rec.bs = max(rec.bs, len(job.requests))
            for st in state.steps:
                if st.preds_left == 0:
                    self._try_start(st)
        sched = self.schedulers[model]
        wake = sched.next_wake
        token = self.wake_token.get(model, 0) + 1
        self.wake_token[model] = token
        if wake is not None:
            self.push(max(wake, self.now), "wake", (model, token))

    # -- step execution --
    def _try_start(self, st: _Step) -> None:
        if st.started or st.preds_left:
            return
        not_before = self.now
        for r in st.resources:
            if r in self.busy or self.timelines.first_open(r) != st.key:
                return
            not_before = max(not_before, self.timelines.reserved(r, st.key)[0])
        if not_before > self.now:
            if st.wake_at != not_before:
                st.wake_at = not_before
                self.push(not_before, "start", st)
            return
        st.started = True
        st.actual_start = self.now
        dur = st.dur * self._noise()
        st.actual_end = self.now + dur
        for r in st.resources:
            self.busy[r] = st
        self.push(st.actual_end, "transfer_done" if st.kind == "xfer" else "inference_done", st)

    def _finish(self, st: _Step) -> None:
        job = st.job.job
        for r in st.resources:
            del self.busy[r]
            shifted = self.timelines.feedback_correct(r, st.key, st.actual_start,
                                                      st.actual_end - st.actual_start)
            self.feedback_calls += 1
            self.shifted += len(shifted)
            self.usage.append(UsageRecord(str(r), st.kind, st.actual_start, st.actual_end,
                                          str(st.key)))
        if st.kind == "xfer":
            for req in job.requests:
                self.records[req.rid].transfer_ms += st.actual_end - st.actual_start
        elif job.stage == 0 and st.idx == next(i for i, s in enumerate(job.steps)
                                                if s.kind == "gpu"):
            for req in job.requests:
                self.records[req.rid].queue_ms = st.actual_start - req.arrival_ms
        del self.by_key[st.key]
        for nxt in st.succs:
            nxt.preds_left -= 1
            self._try_start(nxt)
        for r in st.resources:
            key = self.timelines.first_open(r)
            if key is not None and key in self.by_key:
                self._try_start(self.by_key[key])
        st.job.left -= 1
        if st.job.left == 0:
            if job.final:
                for req in job.requests:
                    rec = self.records[req.rid]
                    rec.completion_ms = self.now
                    if not rec.on_time:
                        self._fail(rec)
            sched = self.schedulers[job.model]
            self._apply(job.model, sched.on_job_done(job, self.now))

    # -- main loop --
    def run(self, trace: Trace) -> RunReport:
        arrivals = trace.entries
        for (a, b) in zip(arrivals, arrivals[1:]):
            if b[0] < a[0]:
                raise SimulationError("trace must be sorted by arrival time")
        for rid, (t, model) in enumerate(arrivals):
            if model not in self.schedulers:
                raise SimulationError(f"trace model {model!r} is not in the plan")
            req = Request(rid, model, t, t + self.slo_ms[model])
            self.records[rid] = RequestRecord(rid, model, t, req.deadline_ms)
            self.push(t, "arrival", req)
        self.warm_cut = trace.horizon_ms * self.config.warmup
        if self.config.stop_below is not None:
            n = sum(1 for t, _ in arrivals if t >= self.warm_cut)
            self.fail_limit = n * (1.0 - self.config.stop_below)
        while self.heap:
            if self.failures > self.fail_limit:
                self.aborted = True
                break
            t, _, kind, payload = heapq.heappop(self.heap)
            self.now = t
            self.events += 1
            if t - self.last_prune >= PRUNE_EVERY_MS:
                self.timelines.advance(t)
                self.last_prune = t
            if kind == "arrival":
                sched = self.schedulers[payload.model]
                self._apply(payload.model, sched.on_arrival(payload, t))
            elif kind == "wake":
                model, token = payload
                if token == self.wake_token.get(model):
                    self._apply(model, self.schedulers[model].on_wake(t))
            elif kind == "start":
                self._try_start(payload)
            elif kind in ("transfer_done", "inference_done"):
                self.push(t, "usage_report", payload)
            elif kind == "usage_report":
                self._finish(payload)
        if self.by_key and not self.aborted:
            raise SimulationError(f"{len(self.by_key)} reserved steps never ran")
        return self._report(trace)

    def _report(self, trace: Trace) -> RunReport:
        total = SchedulerStats()
        per_model = {}
        decisions = []
        for m, s in self.schedulers.items():
            total.merge(s.stats)
            per_model[m] = vars(s.stats).copy()
            if s.log:
                decisions.extend(s.log)
        vgpus: dict[str, list[tuple[str, int]]] = {}
        for model, pipes in self.runtimes.items():
            for p in pipes:
                for part, pool in zip(p.plan.partitions, p.stage_vgpus):
                    vgpus.setdefault(part.gpu_class, []).extend(
                        (str(v.gpu), part.denom) for v in pool)
        stats = {"scheduler": self.config.scheduler, "probes": total.probes,
                 "dispatch_probes": total.dispatch_probes, "dispatches": total.dispatches,
                 "probes_per_dispatch": total.probes_per_dispatch,
                 "pipelines": {m: len(p) for m, p in self.runtimes.items()},
                 "max_unified_batch": max(p.unified_batch for ps in self.runtimes.values()
                                          for p in ps),
                 "feedback_calls": self.feedback_calls, "shifted": self.shifted,
                 "events": self.events, "aborted": self.aborted, "per_model": per_model}
        decisions.sort(key=lambda d: d["time_ms"])
        records = [self.records[i] for i in sorted(self.records)]
        dump = self.timelines.dump() if self.config.debug else None
        return RunReport(records, self.usage, trace.horizon_ms, vgpus, stats, decisions, dump)


def model_slos(blocks: Mapping[str, Sequence[BlockProfile]],
               config: PlannerConfig) -> dict[str, float]:
    return {m: config.model_slo(m, list(b)) for m, b in blocks.items()}


def run(plan: ClusterPlan, cluster: ClusterSpec, trace: Trace, config: SimConfig,
        blocks: Mapping[str, Sequence[BlockProfile]],
        planner_config: PlannerConfig | None = None) -> RunReport:
    """Simulate ``trace`` through ``plan``; deterministic for fixed inputs and seed.

    Request deadlines use the full per-model SLO from ``planner_config``; the
    planner's margin only shrinks what the plan was allowed to use.
    """
    pc = planner_config or PlannerConfig()
    missing = set(plan.per_model) - set(blocks)
    if missing:
        raise SimulationError(f"no block profiles for {sorted(missing)}")
    for model in plan.per_model:
        for pipe in plan.per_model[model]:
            for part in pipe.partitions:
                if part.gpu_class not in cluster.class_names:
                    raise SimulationError(f"plan uses class {part.gpu_class!r} absent from cluster")
    sim = Simulator(plan, cluster, blocks, config, model_slos(blocks, pc))
    return sim.run(trace)
