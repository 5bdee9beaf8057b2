"""Request trace generation and ingestion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class TraceError(ValueError):
    pass


@dataclass
class Trace:
    entries: list[tuple[float, str]]   # (arrival_ms, model), sorted by time
    horizon_ms: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        prev = -math.inf
        for t, _ in self.entries:
            if t < prev:
                raise TraceError("trace entries must be sorted by arrival time")
            if not 0 <= t < self.horizon_ms:
                raise TraceError(f"arrival {t} outside [0, {self.horizon_ms})")
            prev = t

    def __len__(self) -> int:
        return len(self.entries)

    def times(self, model: str | None = None) -> list[float]:
        return [t for t, m in self.entries if model is None or m == model]

    def models(self) -> list[str]:
        return sorted({m for _, m in self.entries})


def merge(traces: Sequence[Trace], horizon_ms: float | None = None) -> Trace:
    horizon = horizon_ms if horizon_ms is not None else max((t.horizon_ms for t in traces),
                                                             default=0.0)
    entries = sorted((e for t in traces for e in t.entries), key=lambda e: (e[0], e[1]))
    return Trace(entries, horizon)


def gen_poisson(rate_rps: float, horizon_ms: float, model: str, seed: int = 0) -> Trace:
    """Poisson arrivals with mean inter-arrival ``1000 / rate_rps`` ms."""
    if not rate_rps > 0:
        raise TraceError(f"rate must be positive, got {rate_rps}")
    rng = np.random.default_rng(seed)
    mean = 1000.0 / rate_rps
    out: list[float] = []
    t = 0.0
    chunk = max(16, int(rate_rps * horizon_ms / 1000.0 * 1.1) + 16)
    while True:
        gaps = rng.exponential(mean, chunk)
        times = t + np.cumsum(gaps)
        keep = times[times < horizon_ms]
        out.extend(keep.tolist())
        if len(keep) < chunk:
            break
        t = float(times[-1])
    return Trace([(x, model) for x in out], horizon_ms, {"kind": "poisson", "rate_rps": rate_rps,
                                                         "seed": seed})


def gen_lockstep(groups: Sequence[tuple[int, float]], horizon_ms: float, model: str) -> Trace:
    """Idealized arrivals: groups of ``size`` requests landing together every ``period`` ms.

    Each ``(size, period_ms)`` pair is one stream; stream ``i`` is phased by
    ``i / len(groups)`` of its own period so streams do not coincide.
    """
    entries = []
    for i, (size, period) in enumerate(groups):
        if size < 1 or not period > 0:
            raise TraceError("lockstep groups need size >= 1 and period > 0")
        t = period * i / len(groups)
        while t < horizon_ms:
            entries.extend((t, model) for _ in range(size))
            t += period
    entries.sort(key=lambda e: e[0])
    return Trace(entries, horizon_ms, {"kind": "lockstep", "groups": [list(g) for g in groups]})


def upscale_trace(raw: Sequence[float], target_rate_rps: float, horizon_ms: float,
                  model: str = "default", seed: int = 0, raw_span_ms: float | None = None,
                  max_offset_ms: float = 1000.0) -> Trace:
    """Stretch a raw arrival process over ``horizon_ms`` at ``target_rate_rps``.

    The raw trace is tiled over the horizon, ``k = ceil(target / raw rate)``
    copies are superimposed (copy 0 unshifted, the others shifted by
    independent offsets below ``max_offset_ms``, wrapping at the horizon),
    and the union is thinned uniformly to exactly the target count.
    Bursts stay aligned, so burstiness survives.
    """
    raw = sorted(float(x) for x in raw)
    if not raw:
        raise TraceError("raw trace is empty")
    if not target_rate_rps > 0:
        raise TraceError("target rate must be positive")
    if raw_span_ms is None:
        gap = (raw[-1] - raw[0]) / (len(raw) - 1) if len(raw) > 1 else 1.0
        raw_span_ms = raw[-1] + gap
    if not raw_span_ms > raw[-1]:
        raise TraceError("raw span must exceed the last raw arrival")
    rng = np.random.default_rng(seed)
    base = np.asarray(raw)
    reps = int(math.ceil(horizon_ms / raw_span_ms))
    tiled = np.concatenate([base + i * raw_span_ms for i in range(reps)])
    tiled = tiled[tiled < horizon_ms]
    raw_rate = len(raw) / raw_span_ms * 1000.0
    k = max(1, math.ceil(target_rate_rps / raw_rate - 1e-12))
    copies = [tiled]
    for _ in range(1, k):
        copies.append(np.mod(tiled + rng.uniform(0.0, max_offset_ms), horizon_ms))
    union = np.sort(np.concatenate(copies))
    n_target = int(round(target_rate_rps * horizon_ms / 1000.0))
    if n_target < len(union):
        keep = np.sort(rng.choice(len(union), size=n_target, replace=False))
        union = union[keep]
    entries = [(float(t), model) for t in union]
    return Trace(entries, horizon_ms, {"kind": "upscaled", "target_rate_rps": target_rate_rps,
                                       "copies": k, "seed": seed})


def assign_round_robin(streams: Sequence[Trace], models: Sequence[str]) -> dict[str, Trace]:
    """Stream ``i`` feeds model ``i mod len(models)``; entries are relabelled."""
    if not streams or not models:
        raise TraceError("need at least one stream and one model")
    horizon = max(s.horizon_ms for s in streams)
    out: dict[str, list[tuple[float, str]]] = {m: [] for m in models}
    for i, s in enumerate(streams):
        m = models[i % len(models)]
        out[m].extend((t, m) for t, _ in s.entries)
    return {m: Trace(sorted(e, key=lambda x: x[0]), horizon) for m, e in out.items()}


# bundled stand-in for a production trace: 1 s at 5x the base rate every 5 s
BURST_PERIOD_MS = 5000.0
BURST_LEN_MS = 1000.0
BURST_FACTOR = 5.0


def bursty_arrivals(base_rps: float, horizon_ms: float, seed: int = 0) -> list[float]:
    """On/off modulated Poisson arrivals."""
    rng = np.random.default_rng(seed)
    out = []
    t = 0.0
    while t < horizon_ms:
        end = min(t + BURST_LEN_MS, horizon_ms)
        for lo, hi, rate in ((t, end, base_rps * BURST_FACTOR),
                             (end, min(t + BURST_PERIOD_MS, horizon_ms), base_rps)):
            n = rng.poisson(rate * (hi - lo) / 1000.0)
            out.extend(np.sort(rng.uniform(lo, hi, n)).tolist())
        t += BURST_PERIOD_MS
    return out


def bursty_fixture() -> Trace:
    return Trace([(t, "raw") for t in bursty_arrivals(50.0, 60_000.0, seed=7)], 60_000.0,
                 {"kind": "bursty", "base_rps": 50.0, "seed": 7})


def write_trace(trace: Trace, path: str | Path) -> None:
    with open(path, "w") as f:
        f.write(f"# horizon_ms={trace.horizon_ms!r}\n")
        for t, m in trace.entries:
            f.write(f"{t!r},{m}\n")


def read_trace(path: str | Path, horizon_ms: float | None = None) -> Trace:
    entries = []
    horizon = horizon_ms
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "horizon_ms=" in line and horizon is None:
                horizon = float(line.split("horizon_ms=", 1)[1])
            continue
        try:
            t, m = line.split(",", 1)
            entries.append((float(t), m.strip()))
        except ValueError as e:
            raise TraceError(f"{path}:{ln}: expected 'arrival_ms,model'") from e
    entries.sort(key=lambda e: e[0])
    if horizon is None:
        horizon = (entries[-1][0] + 1.0) if entries else 0.0
    return Trace(entries, horizon)


def per_model_rates(objective: float, load_factor: float,
                    shares: Mapping[str, float]) -> dict[str, float]:
    """Offered rate per model: load factor times the plan objective, split by share."""
    total = sum(shares.values())
    if len(shares) == 1:
        return {m: load_factor * objective for m in shares}
    # the objective is share-normalized, so model m's planned throughput is objective * share
    return {m: load_factor * objective * s / total for m, s in shares.items()}


def poisson_workload(objective: float, load_factor: float, shares: Mapping[str, float],
                     horizon_ms: float, seed: int = 0) -> Trace:
    rates = per_model_rates(objective, load_factor, shares)
    return merge([gen_poisson(r, horizon_ms, m, seed + i)
                  for i, (m, r) in enumerate(sorted(rates.items())) if r > 0], horizon_ms)


def bursty_workload(raw: Sequence[float], objective: float, load_factor: float,
                    shares: Mapping[str, float], horizon_ms: float, seed: int = 0,
                    raw_span_ms: float | None = None) -> Trace:
    rates = per_model_rates(objective, load_factor, shares)
    return merge([upscale_trace(raw, r, horizon_ms, m, seed + i, raw_span_ms)
                  for i, (m, r) in enumerate(sorted(rates.items())) if r > 0], horizon_ms)
