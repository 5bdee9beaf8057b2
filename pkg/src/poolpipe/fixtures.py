"""Bundled synthetic fixtures: model profiles, clusters and a bursty trace.

The JSON files under ``data/`` are produced by :func:`write_bundled`; the
helpers here load them back. Regenerating is deterministic.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .cluster import ClusterSpec
from .profiles import ModelProfile, SynthSpec, load_profiles, save_profiles, synth_profile

DATA = resources.files("poolpipe") / "data"

MAIN_MODEL = "hetero-a"
FCN_MODEL = "fcn-like"
SMALL_BATCHES = (1, 2, 4)
SMALL_FRACTIONS = (1, 2)

# per-layer latency ratio of the low class over the high class, by layer position
MAIN_SPECS = [
    SynthSpec(MAIN_MODEL, 40, "high", 100.0, {"low": [(0.0, 1.7), (0.5, 6.0)]},
              feature_bytes=(200_000, 2_000_000), seed=11),
    SynthSpec("hetero-b", 36, "high", 80.0, {"low": [(0.0, 1.5), (1.0, 5.0)]},
              interpolation="linear", feature_bytes=(150_000, 1_500_000), seed=12),
    SynthSpec("hetero-c", 30, "high", 120.0, {"low": [(0.0, 2.0), (0.6, 4.0)]},
              feature_bytes=(300_000, 3_000_000), seed=13),
    SynthSpec(FCN_MODEL, 24, "high", 60.0, {"low": [(0.0, 2.2), (0.5, 5.0)]},
              feature_bytes=(100_000, 1_000_000), seed=14),
]

SMALL_SPECS = [
    SynthSpec(f"small-{i}", 5, "high", total, {"low": curve}, feature_bytes=feats,
              batches=SMALL_BATCHES, fractions=SMALL_FRACTIONS, seed=100 + i)
    for i, (total, curve, feats) in enumerate([
        (20.0, [(0.0, 1.5), (0.5, 4.0)], (50_000, 400_000)),
        (30.0, [(0.0, 1.2), (0.4, 3.0)], (100_000, 800_000)),
        (15.0, [(0.0, 2.0), (0.6, 5.0)], (20_000, 200_000)),
        (25.0, [(0.0, 1.8), (0.5, 2.5)], (200_000, 1_500_000)),
        (40.0, [(0.0, 1.1), (0.3, 6.0)], (10_000, 100_000)),
    ])
]

# (high, low) GPU counts for each small fixture, at most 6 GPUs in total
SMALL_CLUSTERS = [(2, 4), (3, 3), (1, 5), (2, 2), (4, 2)]


def main_cluster() -> ClusterSpec:
    """25 high-class GPUs on single-GPU nodes, 75 low-class GPUs on 4-GPU nodes."""
    return ClusterSpec.build({"high": 25, "low": 75}, gpus_per_node={"high": 1, "low": 4},
                             nic_gbps=50.0)


def hc3s_cluster() -> ClusterSpec:
    return ClusterSpec.build({"high": 4, "low": 12}, gpus_per_node={"high": 1, "low": 4},
                             nic_gbps=50.0)


def small_cluster(i: int) -> ClusterSpec:
    high, low = SMALL_CLUSTERS[i]
    return ClusterSpec.build({"high": high, "low": low}, nic_gbps=10.0)


def write_bundled(out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_profiles([synth_profile(s) for s in MAIN_SPECS], out / "profiles_main.json")
    save_profiles([synth_profile(s) for s in SMALL_SPECS], out / "profiles_small.json")
    main_cluster().save(out / "cluster_main.json")
    hc3s_cluster().save(out / "cluster_hc3s.json")
    from .workload import bursty_fixture, write_trace
    write_trace(bursty_fixture(), out / "trace_bursty.csv")


def data_path(name: str) -> Path:
    return Path(str(DATA / name))


def main_profiles() -> dict[str, ModelProfile]:
    return {m.model_name: m for m in load_profiles(data_path("profiles_main.json"))}


def small_profiles() -> list[ModelProfile]:
    return load_profiles(data_path("profiles_small.json"))
