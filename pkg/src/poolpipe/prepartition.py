"""Group a model's layers into blocks of roughly equal runtime."""

from __future__ import annotations

import math

from .profiles import BlockProfile, ModelProfile, ProfileError

DEFAULT_BLOCKS = 10


def cut_points(runtimes: list[float], n_blocks: int) -> list[int]:
    """Block end indices for a greedy equal-runtime grouping.

    Block ``k`` keeps absorbing layers while that moves its end boundary
    closer to ``(k + 1) / n_blocks`` of the total runtime (ties absorb), and
    always leaves at least one layer for each later block.
    """
    m = len(runtimes)
    if n_blocks < 1:
        raise ProfileError("n_blocks must be >= 1")
    if n_blocks > m:
        raise ProfileError(f"n_blocks={n_blocks} exceeds layer count {m}")
    total = math.fsum(runtimes)
    ends = []
    pos = 0
    cum = 0.0
    for k in range(n_blocks - 1):
        target = total * (k + 1) / n_blocks
        last_allowed = m - (n_blocks - k - 1)  # exclusive bound for this block's end
        cum += runtimes[pos]
        pos += 1
        while pos < last_allowed and abs(cum + runtimes[pos] - target) <= abs(cum - target):
            cum += runtimes[pos]
            pos += 1
        ends.append(pos)
    ends.append(m)
    return ends


def prepartition(model: ModelProfile, n_blocks: int = DEFAULT_BLOCKS,
                 gpu_class: str | None = None) -> list[BlockProfile]:
    ref = gpu_class or model.fastest_class()
    key = (ref, 1, 1)
    if key not in model.keys:
        raise ProfileError(f"model {model.model_name!r} has no batch-1 profile on {ref!r}")
    runtimes = [layer.latency_ms[key] for layer in model.layers]
    ends = cut_points(runtimes, n_blocks)
    blocks = []
    start = 0
    for end in ends:
        members = model.layers[start:end]
        table = {k: math.fsum(layer.latency_ms[k] for layer in members)
                 for k in members[0].latency_ms}
        blocks.append(BlockProfile(start, end, table, members[-1].out_feature_bytes))
        start = end
    return blocks
