"""Glue for plan -> trace -> simulation -> metrics runs and load-factor sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .cluster import ClusterSpec
from .metrics import GRID, SweepResult, max_load_factor as _max_load_factor
from .planner import SOLVERS, ClusterPlan, PlannerConfig
from .prepartition import prepartition
from .profiles import BlockProfile, ModelProfile
from .simulator import RunReport, SimConfig, run
from .workload import (Trace, bursty_workload, gen_lockstep, merge, poisson_workload,
                       read_trace)

WORKLOADS = ("poisson", "bursty", "lockstep")
Blocks = Mapping[str, Sequence[BlockProfile]]


@dataclass
class WorkloadSpec:
    kind: str = "poisson"
    seed: int = 0
    raw_trace: str | None = None      # arrival file for "bursty"; bundled fixture if None
    raw_span_ms: float | None = None

    def __post_init__(self):
        if self.kind not in WORKLOADS:
            raise ValueError(f"unknown workload {self.kind!r}; expected one of {WORKLOADS}")


def load_blocks(profiles: Mapping[str, ModelProfile], models: Sequence[str],
                n_blocks: int = 10) -> dict[str, list[BlockProfile]]:
    missing = [m for m in models if m not in profiles]
    if missing:
        raise KeyError(f"profiles missing for {missing}")
    return {m: prepartition(profiles[m], n_blocks) for m in models}


def build_plan(mode: str, blocks: Blocks, cluster: ClusterSpec,
               config: PlannerConfig) -> ClusterPlan:
    if mode not in SOLVERS:
        raise ValueError(f"unknown mode {mode!r}; expected one of {sorted(SOLVERS)}")
    return SOLVERS[mode](blocks, cluster, config)


def _raw_arrivals(spec: WorkloadSpec) -> tuple[list[float], float | None]:
    if spec.raw_trace is None:
        from .fixtures import data_path
        trace = read_trace(data_path("trace_bursty.csv"))
    else:
        trace = read_trace(spec.raw_trace)
    return trace.times(), spec.raw_span_ms or trace.horizon_ms


def make_trace(spec: WorkloadSpec, plan: ClusterPlan, ref_objective: float,
               load_factor: float, shares: Mapping[str, float], horizon_ms: float) -> Trace:
    """Trace offering ``load_factor`` times ``ref_objective`` (split by share)."""
    if spec.kind == "poisson":
        return poisson_workload(ref_objective, load_factor, shares, horizon_ms, spec.seed)
    if spec.kind == "bursty":
        raw, span = _raw_arrivals(spec)
        return bursty_workload(raw, ref_objective, load_factor, shares, horizon_ms, spec.seed,
                               span)
    # lockstep: every pipeline gets whole batches at its planned rate, scaled by the factor
    traces = []
    for model, pipes in plan.per_model.items():
        groups = [(p.unified_batch, 1000.0 * p.unified_batch / (p.throughput_rps * load_factor))
                  for p in pipes]
        traces.append(gen_lockstep(groups, horizon_ms, model))
    return merge(traces, horizon_ms)


@dataclass
class Experiment:
    blocks: Blocks
    cluster: ClusterSpec
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)

    @property
    def shares(self) -> dict[str, float]:
        return self.planner.shares(list(self.blocks))

    def simulate(self, plan: ClusterPlan, load_factor: float, ref_objective: float | None = None,
                 **sim_overrides) -> RunReport:
        ref = plan.objective_value if ref_objective is None else ref_objective
        sim = replace(self.sim, **sim_overrides) if sim_overrides else self.sim
        trace = make_trace(self.workload, plan, ref, load_factor, self.shares, sim.duration_ms)
        return run(plan, self.cluster, trace, sim, self.blocks, self.planner)

    def sweep(self, plan: ClusterPlan, ref_objective: float | None = None, target: float = 0.99,
              grid: Sequence[float] = GRID, full: bool = False, scheduler: str | None = None
              ) -> SweepResult:
        """Max load factor of ``plan``; load factors are relative to ``ref_objective``."""
        overrides = {"warmup": self.sim.warmup}
        if scheduler is not None:
            overrides["scheduler"] = scheduler
        if not full:
            overrides["stop_below"] = target
        return _max_load_factor(lambda lf: self.simulate(plan, lf, ref_objective, **overrides),
                                target, grid, full, self.sim.warmup)


def max_load_factor(plan: ClusterPlan, cluster: ClusterSpec, blocks: Blocks,
                    workload: WorkloadSpec, sim: SimConfig | None = None,
                    planner: PlannerConfig | None = None, target: float = 0.99,
                    ref_objective: float | None = None, full: bool = False) -> SweepResult:
    exp = Experiment(blocks, cluster, planner or PlannerConfig(), sim or SimConfig(), workload)
    return exp.sweep(plan, ref_objective, target, full=full)


def resolve(base: Path, path: str | None) -> str | None:
    if path is None:
        return None
    p = Path(path)
    return str(p if p.is_absolute() else base / p)
