"""Command-line entry point: prepartition, plan, validate, simulate, sweep, compare."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import fixtures
from .cluster import ClusterSpec
from .experiments import WORKLOADS, Experiment, WorkloadSpec, build_plan, load_blocks, resolve
from .metrics import sweep_rows, write_csv
from .planner import ClusterPlan, InfeasibleError, PlannerConfig, export_milp, validate
from .prepartition import prepartition
from .profiles import format_key, load_profiles
from .simulator import SCHEDULERS, SimConfig

log = logging.getLogger("poolpipe")

EXIT_INVALID = 1
EXIT_INPUT = 2
MODES = ("ppipe", "pooled", "np", "dart_r")


@dataclass
class RunConfig:
    """Top-level config file. Relative paths resolve against the file's directory."""

    profiles: str | None = None   # default: bundled main profiles
    cluster: str | None = None    # default: bundled main cluster
    models: list[str] = field(default_factory=lambda: [fixtures.MAIN_MODEL])
    n_blocks: int = 10
    planner: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    workload: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        p = Path(path)
        data = json.loads(p.read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg = cls(**data)
        cfg.profiles = resolve(p.parent, cfg.profiles)
        cfg.cluster = resolve(p.parent, cfg.cluster)
        if cfg.workload.get("raw_trace"):
            cfg.workload["raw_trace"] = resolve(p.parent, cfg.workload["raw_trace"])
        return cfg


class InputError(ValueError):
    pass


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_inputs(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--config", help="top-level JSON config (paths, planner, sim, workload)")
    g.add_argument("--profiles", help="model profile JSON (default: bundled main fixture)")
    g.add_argument("--cluster", help="cluster JSON (default: bundled 25 high + 75 low)")
    g.add_argument("--models", type=_csv_list, help="comma-separated model names")
    g.add_argument("--blocks", type=int, help="pre-partition block count (default 10)")
    g = p.add_argument_group("planner")
    g.add_argument("--planner-config", help="PlannerConfig JSON")
    g.add_argument("--slo-scale", type=float)
    g.add_argument("--margin", type=float)
    g.add_argument("--max-partitions", type=int)
    g.add_argument("--bw-scale", type=float, help="effective share of nominal link rate (0.2)")
    g.add_argument("--quantize", action="store_true", default=None)


def _add_sim(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("simulation")
    g.add_argument("--scheduler", choices=SCHEDULERS)
    g.add_argument("--workload", choices=WORKLOADS)
    g.add_argument("--raw-trace", help="arrival file upscaled by the bursty workload")
    g.add_argument("--seed", type=int)
    g.add_argument("--duration-ms", type=float)
    g.add_argument("--noise", type=float, metavar="SIGMA",
                   help="lognormal sigma of latency noise (default off)")
    g.add_argument("--debug", action="store_true", help="emit decision log and timeline dump")


@dataclass
class Context:
    blocks: dict
    cluster: ClusterSpec
    planner: PlannerConfig
    sim: SimConfig
    workload: WorkloadSpec
    sweep: dict

    def experiment(self) -> Experiment:
        return Experiment(self.blocks, self.cluster, self.planner, self.sim, self.workload)


def _context(args) -> Context:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    prof_path = args.profiles or cfg.profiles or fixtures.data_path("profiles_main.json")
    cluster_path = args.cluster or cfg.cluster or fixtures.data_path("cluster_main.json")
    try:
        profiles = {m.model_name: m for m in load_profiles(prof_path)}
        cluster = ClusterSpec.load(cluster_path)
    except (OSError, ValueError) as e:
        raise InputError(str(e)) from e
    models = args.models or cfg.models
    n_blocks = args.blocks or cfg.n_blocks
    try:
        blocks = load_blocks(profiles, models, n_blocks)
    except KeyError as e:
        raise InputError(str(e)) from e
    planner = (PlannerConfig.load(args.planner_config) if args.planner_config
               else PlannerConfig.from_dict(cfg.planner))
    overrides = {k: v for k, v in {"slo_scale": args.slo_scale, "margin": args.margin,
                                   "max_partitions": args.max_partitions,
                                   "bw_scale": args.bw_scale, "quantize": args.quantize}.items()
                 if v is not None}
    planner = planner.replace(**overrides) if overrides else planner
    sim_d = dict(cfg.sim)
    sim_d.setdefault("bw_scale", planner.bw_scale)
    sim_d.setdefault("quantize", planner.quantize)
    for attr, key in (("seed", "seed"), ("duration_ms", "duration_ms"), ("noise", "latency_noise"),
                      ("scheduler", "scheduler")):
        v = getattr(args, attr, None)
        if v is not None:
            sim_d[key] = v
    if getattr(args, "debug", False):
        sim_d["debug"] = True
    sim = SimConfig(**sim_d)
    wl = dict(cfg.workload)
    if getattr(args, "workload", None):
        wl["kind"] = args.workload
    if getattr(args, "raw_trace", None):
        wl["raw_trace"] = args.raw_trace
    wl.setdefault("seed", sim.seed)
    return Context(blocks, cluster, planner, sim, WorkloadSpec(**wl), dict(cfg.sweep))


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _plan_summary(plan: ClusterPlan) -> dict:
    return {"mode": plan.mode, "objective": plan.objective_value,
            "runtime_s": plan.stats.get("runtime_s"), "status": plan.stats.get("status"),
            "pipelines": {m: [{"template": list(p.template), "batch": p.unified_batch,
                               "throughput_rps": p.throughput_rps,
                               "latency_ms": p.e2e_latency_ms,
                               "vgpus": [q.vgpu_count for q in p.partitions],
                               "fractions": [f"1/{q.denom}" for q in p.partitions],
                               "blocks": [list(q.block_range) for q in p.partitions]}
                              for p in pipes]
                          for m, pipes in plan.per_model.items()}}


# -- subcommands -------------------------------------------------------------

def cmd_prepartition(args) -> int:
    ctx_prof = args.profiles or fixtures.data_path("profiles_main.json")
    profiles = {m.model_name: m for m in load_profiles(ctx_prof)}
    names = args.models or list(profiles)
    out = {}
    for name in names:
        if name not in profiles:
            raise InputError(f"no profile for model {name!r}")
        blocks = prepartition(profiles[name], args.blocks or 10, args.gpu_class)
        out[name] = [{"start": b.start, "end": b.end,
                      "latency_ms": {format_key(k): v for k, v in sorted(b.latency_ms.items())},
                      "out_feature_bytes": b.out_feature_bytes} for b in blocks]
    _emit(out, args.out)
    return 0


def _make_plan(ctx: Context, mode: str) -> ClusterPlan:
    return build_plan(mode, ctx.blocks, ctx.cluster, ctx.planner)


def cmd_plan(args) -> int:
    ctx = _context(args)
    if args.export_milp:
        counts = export_milp(ctx.blocks, ctx.cluster, ctx.planner, args.export_milp)
        log.info("wrote %s (%s)", args.export_milp, counts)
    plan = _make_plan(ctx, args.mode)
    plan.save(args.out)
    violations = validate(plan, ctx.blocks, ctx.cluster, ctx.planner)
    summary = _plan_summary(plan)
    summary["plan_file"] = str(args.out)
    summary["violations"] = [str(v) for v in violations]
    if args.export_milp:
        summary["milp_file"] = str(args.export_milp)
    _emit(summary, args.report)
    return EXIT_INVALID if violations else 0


def cmd_validate(args) -> int:
    ctx = _context(args)
    plan = ClusterPlan.load(args.plan)
    violations = validate(plan, ctx.blocks, ctx.cluster, ctx.planner)
    _emit({"plan_file": args.plan, "violations": [str(v) for v in violations]}, None)
    return EXIT_INVALID if violations else 0


def _plan_for(ctx: Context, args) -> ClusterPlan:
    if args.plan:
        plan = ClusterPlan.load(args.plan)
        violations = validate(plan, ctx.blocks, ctx.cluster, ctx.planner)
        if violations:
            raise InputError("plan fails validation: " + "; ".join(map(str, violations)))
        return plan
    return _make_plan(ctx, args.mode)


def cmd_simulate(args) -> int:
    ctx = _context(args)
    plan = _plan_for(ctx, args)
    report = ctx.experiment().simulate(plan, args.load_factor, args.ref_objective)
    out = Path(args.out)
    report.save(out)
    summary = report.summary()
    summary.update({k: report.stats[k] for k in ("scheduler", "dispatches", "probes_per_dispatch",
                                                 "feedback_calls", "shifted")})
    summary["load_factor"] = args.load_factor
    summary["out_dir"] = str(out)
    _emit(summary, None)
    return 0


@dataclass
class SweepTask:
    mode: str
    scheduler: str
    seed: int
    plan: ClusterPlan
    ref_objective: float
    ctx: Context
    target: float
    full: bool


def _run_task(task: SweepTask):
    ctx = task.ctx
    exp = Experiment(ctx.blocks, ctx.cluster, ctx.planner,
                     replace(ctx.sim, seed=task.seed, scheduler=task.scheduler),
                     replace(ctx.workload, seed=task.seed))
    res = exp.sweep(task.plan, task.ref_objective, task.target, full=task.full)
    return task, res


def _sweep(ctx: Context, modes: list[str], schedulers: list[str], seeds: list[int],
           target: float, full: bool, jobs: int) -> tuple[list[dict], list[dict]]:
    plans: dict[str, ClusterPlan] = {}
    for mode in dict.fromkeys(["ppipe"] + modes):
        key = "ppipe" if mode == "pooled" else mode
        if key not in plans:
            plans[key] = _make_plan(ctx, key)
            log.info("planned %s: objective %.3f", key, plans[key].objective_value)
    ref = plans["ppipe"].objective_value
    tasks = [SweepTask(m, s, seed, plans["ppipe" if m == "pooled" else m], ref, ctx, target,
                       full)
             for m in modes for s in schedulers for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    rows, summary = [], []
    classes = ctx.cluster.class_names
    for task, res in results:
        for r in sweep_rows(task.mode, task.scheduler, res, list(ctx.blocks), classes):
            r["seed"] = task.seed
            r["objective"] = task.plan.objective_value
            r["ref_objective"] = ref
            rows.append(r)
        summary.append({"mode": task.mode, "scheduler": task.scheduler, "seed": task.seed,
                        "max_load_factor": res.max_load_factor, "dips": res.dips,
                        "objective": task.plan.objective_value,
                        "probes_per_dispatch": max((p.stats.get("probes_per_dispatch", 0.0)
                                                    for p in res.points), default=0.0)})
    return rows, summary


def _write_outputs(rows, summary, out: str, plot: bool, target: float) -> dict:
    write_csv(rows, out)
    files = {"csv": out}
    if plot:
        from .plots import plot_max_load, plot_sweep
        stem = Path(out).with_suffix("")
        files["attainment_png"] = str(plot_sweep(rows, f"{stem}_attainment.png", target))
        files["max_load_png"] = str(plot_max_load(summary, f"{stem}_max_load.png"))
    return files


def cmd_sweep(args) -> int:
    ctx = _context(args)
    sw = ctx.sweep
    modes = args.modes or sw.get("modes", ["ppipe", "np", "dart_r"])
    schedulers = args.schedulers or sw.get("schedulers", [ctx.sim.scheduler])
    seeds = args.seeds or sw.get("seeds", [ctx.sim.seed])
    target = args.target if args.target is not None else sw.get("target", 0.99)
    full = args.full or sw.get("full", False)
    for m in modes:
        if m not in MODES:
            raise InputError(f"unknown mode {m!r}")
    if args.load_factors:
        grid = [float(x) for x in args.load_factors]
        return _sweep_points(ctx, modes, schedulers, seeds, grid, args)
    rows, summary = _sweep(ctx, modes, schedulers, seeds, target, full, args.jobs)
    files = _write_outputs(rows, summary, args.out, args.plot, target)
    _emit({"results": summary, "files": files}, None)
    return 0


def _sweep_points(ctx, modes, schedulers, seeds, grid, args) -> int:
    """Fixed load factors only, every point run to completion."""
    from .metrics import SweepPoint, SweepResult, slo_attainment, summarize
    target = args.target if args.target is not None else ctx.sweep.get("target", 0.99)
    ref = _make_plan(ctx, "ppipe").objective_value
    rows, summary = [], []
    for mode in modes:
        plan = _make_plan(ctx, "ppipe" if mode == "pooled" else mode)
        for s in schedulers:
            for seed in seeds:
                exp = Experiment(ctx.blocks, ctx.cluster, ctx.planner,
                                 replace(ctx.sim, seed=seed, scheduler=s),
                                 replace(ctx.workload, seed=seed))
                pts = []
                for lf in grid:
                    rep = exp.simulate(plan, lf, ref)
                    pts.append(SweepPoint(lf, slo_attainment(rep, ctx.sim.warmup),
                                          summarize(rep, ctx.sim.warmup), rep.stats))
                best = max([p.load_factor for p in pts if p.attainment >= target] or [0.0])
                res = SweepResult(best, pts, [])
                for r in sweep_rows(mode, s, res, list(ctx.blocks), ctx.cluster.class_names):
                    r["seed"] = seed
                    rows.append(r)
                summary.append({"mode": mode, "scheduler": s, "seed": seed,
                                "max_load_factor": best,
                                "points": {p.load_factor: p.attainment for p in pts}})
    files = _write_outputs(rows, summary, args.out, args.plot, target)
    _emit({"results": summary, "files": files}, None)
    return 0


def cmd_compare(args) -> int:
    ctx = _context(args)
    target = args.target if args.target is not None else 0.99
    seeds = args.seeds or [ctx.sim.seed]
    rows, summary = _sweep(ctx, ["ppipe", "np", "dart_r"], ["reservation"], seeds, target,
                           args.full, args.jobs)
    r2, s2 = _sweep(ctx, ["ppipe"], ["reactive"], seeds, target, args.full, args.jobs)
    rows += r2
    summary += s2
    files = _write_outputs(rows, summary, args.out, args.plot, target)

    def best(mode, sched):
        vals = [s["max_load_factor"] for s in summary if s["mode"] == mode
                and s["scheduler"] == sched]
        return sum(vals) / len(vals)

    pp, npl, dart, rea = (best("ppipe", "reservation"), best("np", "reservation"),
                          best("dart_r", "reservation"), best("ppipe", "reactive"))
    gains = {"ppipe": pp, "np": npl, "dart_r": dart, "reactive": rea,
             "ppipe_over_np": (pp / npl - 1.0) if npl > 0 else None,
             "ppipe_over_dart_r": (pp / dart - 1.0) if dart > 0 else None,
             "reservation_minus_reactive": pp - rea}
    _emit({"max_load_factor": gains, "results": summary, "files": files}, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poolpipe", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepartition", help="split models into balanced blocks")
    p.add_argument("--profiles")
    p.add_argument("--models", type=_csv_list)
    p.add_argument("--blocks", type=int, help="block count (default 10)")
    p.add_argument("--gpu-class", help="class whose latencies balance the cut (default fastest)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_prepartition)

    p = sub.add_parser("plan", help="solve for a cluster plan")
    _add_inputs(p)
    p.add_argument("--mode", choices=MODES, default="ppipe")
    p.add_argument("--out", default="plan.json")
    p.add_argument("--report", help="write the summary JSON here instead of stdout")
    p.add_argument("--export-milp", metavar="FILE", help="also write the block-level MILP (LP format)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("validate", help="check a plan against every planner constraint")
    _add_inputs(p)
    p.add_argument("--plan", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run one trace through a plan")
    _add_inputs(p)
    _add_sim(p)
    p.add_argument("--plan", help="plan file (default: plan with --mode)")
    p.add_argument("--mode", choices=MODES, default="ppipe")
    p.add_argument("--load-factor", type=float, default=1.0)
    p.add_argument("--ref-objective", type=float,
                   help="throughput meaning load factor 1 (default: the plan's objective)")
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_simulate)

    for name, helptext in (("sweep", "max load factor per mode and scheduler"),
                           ("compare", "ppipe vs np vs dart_r, and reservation vs reactive")):
        p = sub.add_parser(name, help=helptext)
        _add_inputs(p)
        _add_sim(p)
        if name == "sweep":
            p.add_argument("--modes", type=_csv_list)
            p.add_argument("--schedulers", type=_csv_list)
            p.add_argument("--load-factors", type=_csv_list,
                           help="run only these load factors, each to completion")
        p.add_argument("--seeds", type=lambda s: [int(x) for x in _csv_list(s)])
        p.add_argument("--target", type=float, help="attainment target (default 0.99)")
        p.add_argument("--full", action="store_true",
                       help="run every grid point instead of stopping at the first pass")
        p.add_argument("--jobs", type=int, default=1, help="parallel sweep processes")
        p.add_argument("--out", default=f"{name}.csv")
        p.add_argument("--plot", action="store_true", help="also render PNG charts")
        p.set_defaults(func=cmd_sweep if name == "sweep" else cmd_compare)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleError as e:
        _emit({"error": "infeasible", "models": e.reasons}, None)
        return EXIT_INPUT
    except (InputError, ValueError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
