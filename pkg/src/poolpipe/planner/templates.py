from __future__ import annotations

import itertools
from typing import Sequence

Template = tuple[str, ...]


def enumerate_templates(classes: Sequence[str], max_partitions: int) -> list[Template]:
    """All class sequences of length 1..max_partitions, shorter ones first."""
    names = list(dict.fromkeys(classes))
    out: list[Template] = []
    for depth in range(1, max_partitions + 1):
        out.extend(itertools.product(names, repeat=depth))
    return out
