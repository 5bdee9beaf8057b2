"""Write the full block-level planning model as a CPLEX LP file.

The exported model keeps the original decision structure: one pipeline per
(model, template) with a "used" binary, a binary selection and an integer
vGPU count per (stage, fraction, batch, block range), per-stage latency and
transfer terms, and the min-over-stages throughput. Any solver that reads LP
files can then cross-check the built-in optimizer.
"""

from __future__ import annotations

from pathlib import Path

from ..cluster import ClusterSpec
from ..profiles import partition_latency
from .candidates import boundary_transfer_ms, usable_classes
from .config import PlannerConfig
from .solve import Blocks
from .templates import enumerate_templates

LCM = 12


class _Writer:
    def __init__(self):
        self.lines: list[str] = []

    def expr(self, name: str, terms: list[tuple[float, str]], sense: str | None = None,
             rhs: float = 0.0) -> None:
        chunks = [f" {name}:"]
        for coef, var in terms:
            sign = "-" if coef < 0 else "+"
            chunks.append(f" {sign} {abs(coef):.12g} {var}")
        if sense is not None:
            chunks.append(f" {sense} {rhs:.12g}")
        line = ""
        for chunk in chunks:
            if len(line) + len(chunk) > 200:
                self.lines.append(line)
                line = "  "
            line += chunk
        self.lines.append(line)


def export_milp(blocks: Blocks, cluster: ClusterSpec, config: PlannerConfig | None,
                path: str | Path) -> dict:
    """Write the model to ``path``; returns a small summary of its size."""
    config = config or PlannerConfig()
    models = list(blocks)
    shares = config.shares(models)
    classes = [c.name for c in cluster.classes if c.count > 0]
    templates = enumerate_templates(classes, config.max_partitions)
    w = _Writer()
    cap_terms: dict[str, list[tuple[float, str]]] = {k: [] for k in classes}
    binaries: list[str] = []
    generals: list[str] = []
    bounds: list[str] = []
    obj_terms: list[tuple[float, str]] = []
    model_terms: dict[str, list[tuple[float, str]]] = {m: [] for m in models}
    used_terms: dict[str, list[tuple[float, str]]] = {m: [] for m in models}

    for mi, m in enumerate(models):
        blk = list(blocks[m])
        n = len(blk)
        t_eff = config.effective_slo(m, blk)
        avail = set(usable_classes(blk, cluster))
        for li, tmpl in enumerate(templates):
            if any(c not in avail for c in tmpl) or len(tmpl) > n:
                continue
            depth = len(tmpl)
            tag = f"m{mi}_l{li}"
            u = f"u_{tag}"
            xl = f"x_{tag}"
            binaries.append(u)
            used_terms[m].append((1.0, u))
            model_terms[m].append((1.0, xl))
            obj_terms.append((1.0, xl))
            lat_terms: list[tuple[float, str]] = []
            # ends[d][(b, j)] and starts[d][(b, i)] collect selections for adjacency
            ends = [dict() for _ in range(depth)]
            starts = [dict() for _ in range(depth)]
            for d, cls in enumerate(tmpl):
                sel: list[tuple[float, str]] = []
                xd_terms: list[tuple[float, str]] = []
                n_cap = cluster.count(cls)
                lo_i = d
                hi_j = n - (depth - d - 1)
                for v in config.fractions:
                    for b in config.batches:
                        for i in range(lo_i, n):
                            for j in range(i + 1, hi_j + 1):
                                if d == 0 and i != 0 or d == depth - 1 and j != n:
                                    continue
                                c = partition_latency(blk, (i, j), cls, v, b)
                                y = 0.0
                                if d < depth - 1:
                                    y = boundary_transfer_ms(blk, j, cls, tmpl[d + 1], b,
                                                             cluster, config)
                                if c + y > t_eff:
                                    continue
                                key = f"{tag}_d{d}_v{v}_b{b}_i{i}_j{j}"
                                p, g = f"p_{key}", f"g_{key}"
                                binaries.append(p)
                                generals.append(g)
                                upper = n_cap * v
                                bounds.append(f" 0 <= {g} <= {upper}")
                                sel.append((1.0, p))
                                lat_terms.append((c + y, p))
                                xd_terms.append((b * 1000.0 / c, g))
                                cap_terms[cls].append((LCM / v, g))
                                w.expr(f"gon_{key}", [(1.0, g), (-float(upper), p)], "<=", 0)
                                w.expr(f"gmin_{key}", [(1.0, g), (-1.0, p)], ">=", 0)
                                ends[d].setdefault((b, j), []).append(p)
                                starts[d].setdefault((b, i), []).append(p)
                if not sel:
                    w.expr(f"off_{tag}", [(1.0, u)], "=", 0)
                    break
                w.expr(f"one_{tag}_d{d}", sel + [(-1.0, u)], "=", 0)
                w.expr(f"min_{tag}_d{d}", [(1.0, xl)] + [(-x, g) for x, g in xd_terms], "<=", 0)
            else:
                for d in range(depth - 1):
                    keys = set(ends[d]) | set(starts[d + 1])
                    for b, j in sorted(keys):
                        terms = [(1.0, p) for p in ends[d].get((b, j), [])]
                        terms += [(-1.0, p) for p in starts[d + 1].get((b, j), [])]
                        w.expr(f"adj_{tag}_d{d}_b{b}_j{j}", terms, "=", 0)
                w.expr(f"slo_{tag}", lat_terms, "<=", t_eff)
                continue
            # a stage had no feasible selection: the pipeline is forced off
            w.expr(f"xoff_{tag}", [(1.0, xl)], "<=", 0)

    for m in models:
        w.expr(f"serve_{models.index(m)}", used_terms[m] or [(0.0, "theta")], ">=", 1)
    for k in classes:
        if cap_terms[k]:
            w.expr(f"cap_{k}", cap_terms[k], "<=", LCM * cluster.count(k))

    head = ["\\ block-level pooled-pipeline planning model", "Maximize"]
    if len(models) > 1:
        head.append(" obj: theta")
        for mi, m in enumerate(models):
            w.expr(f"share_{mi}", [(shares[m], "theta")] + [(-1.0, v) for _, v in model_terms[m]],
                   "<=", 0)
    else:
        objw = _Writer()
        objw.expr("obj", obj_terms or [(0.0, "theta")])
        head += objw.lines
    text = head + ["Subject To"] + w.lines + ["Bounds"] + bounds + ["Generals"]
    text += [" " + g for g in generals] + ["Binaries"] + [" " + b for b in binaries] + ["End"]
    Path(path).write_text("\n".join(text) + "\n")
    return {"binaries": len(binaries), "integers": len(generals), "rows": len(w.lines)}
