"""Integer vGPU allocation over candidate configurations.

Chooses at most one configuration per (model, template) and an integer vGPU
count per stage, maximizing total throughput (one model) or the minimum
share-normalized throughput (several models). The compact mixed-integer
model is handed to HiGHS through ``scipy.optimize.milp``.

Columns per candidate ``c``: throughput ``x_c``, a "used" binary ``z_c`` and
one integer count ``g_cd`` per stage. Rows:

* ``x_c <= X_cd * g_cd``            pipeline throughput is its slowest stage
* ``X_cd * (g_cd - 1) <= x_c``      no stage holds a whole spare vGPU
* ``g_cd <= U_cd * z_c``            counts only on used candidates
* ``sum z_c <= 1`` per template     one pooled pipeline per template
* ``sum 12/v * g <= 12 * N_k``      capacity, in exact 1/12-GPU units

The second row only removes allocations that an optimal plan never needs
(dropping a spare vGPU frees capacity without lowering throughput) and lets
``U_cd`` shrink from ``N_k * v`` to what the LP bound allows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp
from scipy.sparse import coo_matrix

from .candidates import Candidate

LCM = 12


@dataclass
class AllocResult:
    counts: dict[int, tuple[int, ...]]  # candidate index -> vGPU count per stage
    objective: float
    bound: float
    lp_bound: float
    status: str  # "optimal", "time_limit", "node_limit"
    mip_gap: float


class Allocator:
    def __init__(self, cands: list[Candidate], capacity: dict[str, int],
                 shares: dict[str, float] | None = None):
        self.cands = cands
        self.capacity = dict(capacity)
        self.classes = list(capacity)
        self.models = list(dict.fromkeys(c.model for c in cands))
        self.multi = len(self.models) > 1
        self.shares = shares or {m: 1.0 / len(self.models) for m in self.models}
        self.stage_x = [[s.vgpu_rps for s in c.stages] for c in cands]

    def pipeline_rps(self, j: int, counts: tuple[int, ...]) -> float:
        return min(x * g for x, g in zip(self.stage_x[j], counts))

    def objective(self, sol: dict[int, tuple[int, ...]]) -> float:
        per_model = dict.fromkeys(self.models, 0.0)
        for j, g in sol.items():
            per_model[self.cands[j].model] += self.pipeline_rps(j, g)
        if not self.multi:
            return per_model[self.models[0]]
        return min(per_model[m] / self.shares[m] for m in self.models)

    def fits(self, sol: dict[int, tuple[int, ...]]) -> bool:
        used = dict.fromkeys(self.classes, 0)
        for j, g in sol.items():
            for s, cnt in zip(self.cands[j].stages, g):
                used[s.gpu_class] += cnt * (LCM // s.denom)
        return all(used[k] <= LCM * self.capacity[k] for k in self.classes)

    def lp_bound(self) -> float:
        """Throughput bound with fractional counts and no one-per-template limit."""
        n = len(self.cands)
        cost = np.zeros((len(self.classes), n))
        for j, c in enumerate(self.cands):
            for s in c.stages:
                cost[self.classes.index(s.gpu_class), j] += 1.0 / s.gpu_rps
        cap = np.array([self.capacity[k] for k in self.classes], dtype=float)
        if not self.multi:
            res = linprog(-np.ones(n), A_ub=cost, b_ub=cap, method="highs")
            return -res.fun
        # max theta with per-model throughput >= share * theta
        a = np.zeros((len(self.classes) + len(self.models), n + 1))
        a[: len(self.classes), :n] = cost
        for mi, m in enumerate(self.models):
            a[len(self.classes) + mi, n] = self.shares[m]
            for j, c in enumerate(self.cands):
                if c.model == m:
                    a[len(self.classes) + mi, j] = -1.0
        b = np.concatenate([cap, np.zeros(len(self.models))])
        obj = np.zeros(n + 1)
        obj[n] = -1.0
        return -linprog(obj, A_ub=a, b_ub=b, method="highs").fun

    def solve(self, mip_gap: float = 1e-6, node_limit: int | None = None,
              time_limit_s: float = 120.0) -> AllocResult:
        n = len(self.cands)
        bound = self.lp_bound()
        if bound <= 0:
            return AllocResult({}, 0.0, 0.0, 0.0, "optimal", 0.0)
        gidx = [(j, d) for j, c in enumerate(self.cands) for d in range(len(c.stages))]
        ng = len(gidx)
        n_theta = 1 if self.multi else 0
        nv = 2 * n + ng + n_theta
        xcol = lambda j: j
        zcol = lambda j: n + j
        gcol = lambda i: 2 * n + i

        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        lo: list[float] = []
        hi: list[float] = []

        def row(entries, low, high):
            r = len(lo)
            for col, v in entries:
                rows.append(r)
                cols.append(col)
                vals.append(v)
            lo.append(low)
            hi.append(high)

        for i, (j, d) in enumerate(gidx):
            s = self.cands[j].stages[d]
            u = self.capacity[s.gpu_class] * s.denom
            if not self.multi:
                # one pipeline never exceeds the whole-problem bound
                u = min(u, math.floor(bound / s.vgpu_rps) + 1)
            row([(xcol(j), 1.0), (gcol(i), -s.vgpu_rps)], -np.inf, 0.0)
            row([(gcol(i), s.vgpu_rps), (xcol(j), -1.0)], -np.inf, s.vgpu_rps)
            row([(gcol(i), 1.0), (zcol(j), -float(u))], -np.inf, 0.0)
        groups: dict[tuple, list[int]] = {}
        for j, c in enumerate(self.cands):
            groups.setdefault((c.model, c.template_index), []).append(j)
        for js in groups.values():
            row([(zcol(j), 1.0) for j in js], -np.inf, 1.0)
        for k in self.classes:
            entries = [(gcol(i), float(LCM // self.cands[j].stages[d].denom))
                       for i, (j, d) in enumerate(gidx)
                       if self.cands[j].stages[d].gpu_class == k]
            if entries:
                row(entries, -np.inf, float(LCM * self.capacity[k]))
        if self.multi:
            for m in self.models:
                entries = [(nv - 1, self.shares[m])]
                entries += [(xcol(j), -1.0) for j, c in enumerate(self.cands) if c.model == m]
                row(entries, -np.inf, 0.0)

        a = coo_matrix((vals, (rows, cols)), shape=(len(lo), nv)).tocsr()
        obj = np.zeros(nv)
        if self.multi:
            obj[nv - 1] = -1.0
        else:
            obj[:n] = -1.0
        # tie-break: fewer pipelines, then fewer partitions, then template order,
        # weighted far below the optimality tolerance
        n_templates = 1 + max(c.template_index for c in self.cands)
        eps = 1e-9 * bound / max(1, len(groups))
        for j, c in enumerate(self.cands):
            obj[zcol(j)] = eps * (1.0 + 0.1 * len(c.stages) + 0.01 * c.template_index / n_templates)
        integrality = np.zeros(nv)
        integrality[n: 2 * n + ng] = 1
        ub = np.full(nv, np.inf)
        ub[n: 2 * n] = 1.0
        options = {"mip_rel_gap": mip_gap, "time_limit": time_limit_s, "presolve": True}
        if node_limit:
            options["node_limit"] = node_limit
        res = milp(obj, constraints=LinearConstraint(a, lo, hi), integrality=integrality,
                   bounds=Bounds(0, ub), options=options)
        if res.x is None:
            return AllocResult({}, 0.0, bound, bound, "infeasible", math.inf)
        sol = {}
        counts_of: dict[int, list[int]] = {}
        for i, (j, d) in enumerate(gidx):
            counts_of.setdefault(j, []).append(int(round(res.x[gcol(i)])))
        for j, g in counts_of.items():
            if all(cnt > 0 for cnt in g):
                sol[j] = tuple(g)
        if not self.fits(sol):
            raise RuntimeError("solver returned an allocation that exceeds capacity")
        status = {0: "optimal", 1: "time_limit"}.get(res.status, f"status_{res.status}")
        if res.status == 1 and "node" in str(res.message).lower():
            status = "node_limit"
        gap = float(getattr(res, "mip_gap", 0.0) or 0.0)
        dual = getattr(res, "mip_dual_bound", None)
        best_bound = -float(dual) if dual is not None and math.isfinite(dual) else bound
        return AllocResult(sol, self.objective(sol), max(best_bound, 0.0), bound, status, gap)
