"""Attainment, load-factor sweeps, utilization and scheduler statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

WARMUP = 0.10
GRID = tuple(round(0.05 * i, 2) for i in range(1, 21))


class MetricsError(ValueError):
    pass


def _window(report, warmup: float) -> float:
    return report.horizon_ms * warmup


def measured(report, warmup: float = WARMUP, model: str | None = None) -> list:
    """Requests arriving after the warm-up window, optionally for one model."""
    cut = _window(report, warmup)
    return [r for r in report.records
            if r.arrival_ms >= cut and (model is None or r.model == model)]


def slo_attainment(report, warmup: float = WARMUP, model: str | None = None) -> float:
    """On-time completions over all measured arrivals; drops and late ones both count against."""
    recs = measured(report, warmup, model)
    if not recs:
        raise MetricsError("no requests after warm-up")
    return sum(r.on_time for r in recs) / len(recs)


def outcome_counts(report, warmup: float = 0.0) -> dict[str, int]:
    recs = measured(report, warmup)
    done = sum(r.completion_ms is not None for r in recs)
    dropped = sum(r.dropped for r in recs)
    late = sum(r.completion_ms is not None and not r.on_time for r in recs)
    return {"arrived": len(recs), "completed": done, "dropped": dropped, "late": late,
            "in_flight": len(recs) - done - dropped}


def gpu_utilization(report, warmup: float = WARMUP) -> dict[str, float]:
    """Busy vGPU time over (measured window x vGPU count), per class."""
    lo = _window(report, warmup)
    hi = report.horizon_ms
    span = hi - lo
    owner = {gpu: cls for cls, gpus in report.vgpus.items() for gpu, _ in gpus}
    busy = dict.fromkeys(report.vgpus, 0.0)
    for u in report.usage:
        cls = owner.get(u.resource)
        if cls is None:
            continue
        busy[cls] += max(0.0, min(u.end_ms, hi) - max(u.start_ms, lo))
    return {c: (busy[c] / (span * len(report.vgpus[c])) if span > 0 and report.vgpus[c] else 0.0)
            for c in report.vgpus}


def _mean_p99(xs: list[float]) -> tuple[float, float]:
    if not xs:
        return 0.0, 0.0
    a = np.asarray(xs)
    return float(a.mean()), float(np.percentile(a, 99))


def summarize(report, warmup: float = WARMUP) -> dict:
    recs = measured(report, warmup)
    done = [r for r in recs if r.completion_ms is not None]
    q_mean, q_p99 = _mean_p99([r.queue_ms for r in done])
    x_mean, x_p99 = _mean_p99([r.transfer_ms for r in done])
    out = {"attainment": slo_attainment(report, warmup) if recs else 0.0,
           "utilization": gpu_utilization(report, warmup),
           "probes_per_dispatch": report.stats.get("probes_per_dispatch", 0.0),
           "queue_ms_mean": q_mean, "queue_ms_p99": q_p99,
           "transfer_ms_mean": x_mean, "transfer_ms_p99": x_p99}
    out.update(outcome_counts(report, warmup))
    return out


@dataclass
class SweepPoint:
    load_factor: float
    attainment: float
    report_summary: dict
    stats: dict


@dataclass
class SweepResult:
    max_load_factor: float
    points: list[SweepPoint] = field(default_factory=list)
    dips: list[float] = field(default_factory=list)   # grid points below target under the max


def max_load_factor(run_at: Callable[[float], object], target: float = 0.99,
                    grid: Iterable[float] = GRID, full: bool = False,
                    warmup: float = WARMUP) -> SweepResult:
    """Largest grid load factor whose attainment reaches ``target``; 0 if none.

    ``run_at(lf)`` returns a RunReport. By default the grid is scanned from the
    top and stops at the first passing point, which yields the same answer as
    a full scan; ``full=True`` runs every point and reports dips below the
    maximum.
    """
    grid = sorted(grid)
    points: list[SweepPoint] = []
    best = 0.0
    for lf in (grid if full else reversed(grid)):
        rep = run_at(lf)
        att = slo_attainment(rep, warmup)
        points.append(SweepPoint(lf, att, summarize(rep, warmup), rep.stats))
        if att >= target:
            best = max(best, lf)
            if not full:
                break
    points.sort(key=lambda p: p.load_factor)
    dips = [p.load_factor for p in points if p.load_factor < best and p.attainment < target]
    return SweepResult(best, points, dips)


CSV_FIELDS = ["mode", "scheduler", "model", "load_factor", "attainment", "max_load_factor",
              "probes_per_dispatch", "queue_ms_mean", "queue_ms_p99", "transfer_ms_mean",
              "transfer_ms_p99", "dropped", "late", "arrived", "aborted"]


def sweep_rows(mode: str, scheduler: str, result: SweepResult, models: list[str],
               classes: list[str]) -> list[dict]:
    rows = []
    for p in result.points:
        s = p.report_summary
        row = {"mode": mode, "scheduler": scheduler, "model": "+".join(models),
               "load_factor": p.load_factor, "attainment": p.attainment,
               "max_load_factor": result.max_load_factor}
        for k in CSV_FIELDS[6:-1]:
            row[k] = s.get(k, 0)
        # an aborted run's attainment is only a lower bound
        row["aborted"] = int(bool(p.stats.get("aborted", False)))
        for c in classes:
            row[f"util_{c}"] = s["utilization"].get(c, 0.0)
        rows.append(row)
    return rows


def write_csv(rows: list[dict], path: str | Path) -> None:
    if not rows:
        raise MetricsError("no rows to write")
    fields = list(CSV_FIELDS)
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(r)
