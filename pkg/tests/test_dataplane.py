import random

import pytest

from poolpipe import dataplane as dp
from poolpipe.dataplane import (Dispatch, Drop, LinkTable, PipelineRuntime, ReactiveScheduler,
                                Request, SchedulerStats, VGpu, Wait, build_runtimes, probe,
                                schedule_step, stage_latency_table)
from poolpipe.planner.plan import PartitionSpec, PipelinePlan
from poolpipe.reservation import ReservationEntry, ResourceId, ResourceTimeline

GBPS = 10.0   # per-node NIC rate in the hand-built examples; 1 MB then takes 4 ms at scale 0.2


def vg(node, idx=0):
    return VGpu(ResourceId("gpu", node, idx), node)


def runtime(pools, inf, out_bytes=None, ub=None, pid=0, rates=None):
    """Pipeline over explicit vGPU pools; ``inf[d]`` is the latency list for bs 1..ub."""
    depth = len(pools)
    ub = ub or len(inf[0])
    out_bytes = out_bytes or [0] * depth
    nodes = {v.node for pool in pools for v in pool}
    links = LinkTable(rates or {n: (GBPS, GBPS) for n in nodes}, 0.2)
    parts = [PartitionSpec((d, d + 1), "c", 1, ub, len(pools[d]), inf[d][-1],
                           ub * len(pools[d]) * 1000 / inf[d][-1]) for d in range(depth)]
    plan = PipelinePlan(parts, ub, min(p.throughput_rps for p in parts), sum(x[-1] for x in inf))
    return PipelineRuntime(pid, "m", plan, pools, ub, [[0.0] + list(x) for x in inf],
                           out_bytes, links)


def busy(tl, v, start, dur, key="x"):
    tl.mark_reserved([ReservationEntry(v.gpu, start, dur, key)])


def req(rid, arrival=0.0, deadline=100.0):
    return Request(rid, "m", arrival, deadline)


# -- probe ------------------------------------------------------------------

def test_probe_idle_single_stage():
    p = runtime([[vg("a")]], [[12.0]])
    r = probe(p, 1, 0.0, ResourceTimeline())
    assert r.finish_ms == 12.0 and r.wait_ms == 0.0
    assert [s.kind for s in r.steps] == ["gpu"]


def test_probe_picks_vgpu_free_soonest():
    a, b = vg("a", 0), vg("a", 1)
    p = runtime([[a, b]], [[4.0]])
    tl = ResourceTimeline()
    busy(tl, a, 0.0, 10.0)
    busy(tl, b, 0.0, 6.0)
    r = probe(p, 1, 0.0, tl)
    assert r.path == [b] and r.finish_ms == 10.0 and r.wait_ms == 6.0


def test_probe_two_stage_with_transfer():
    # 1 MB per request at 10 Gbps x 0.2: 4 ms per request
    p = runtime([[vg("a")], [vg("b")]], [[5.0, 8.0], [3.0, 5.0]], out_bytes=[1_000_000, 0])
    r = probe(p, 2, 1.0, ResourceTimeline())
    assert [s.kind for s in r.steps] == ["gpu", "xfer", "gpu"]
    assert r.steps[1].start_ms == 9.0 and r.steps[1].dur_ms == pytest.approx(8.0)
    assert r.finish_ms == pytest.approx(1.0 + 8.0 + 8.0 + 5.0)
    assert r.wait_ms == 0.0


def test_probe_same_node_handoff_is_free():
    p = runtime([[vg("a", 0)], [vg("a", 1)]], [[5.0], [3.0]], out_bytes=[1_000_000, 0])
    r = probe(p, 1, 0.0, ResourceTimeline())
    assert [s.kind for s in r.steps] == ["gpu", "gpu"]
    assert r.finish_ms == 8.0


def test_probe_waits_for_contended_link():
    p = runtime([[vg("a")], [vg("b")]], [[5.0], [3.0]], out_bytes=[1_000_000, 0])
    tl = ResourceTimeline()
    tl.mark_reserved([ReservationEntry(dp.downlink("b"), 0.0, 7.0, "other")])
    r = probe(p, 1, 0.0, tl)
    assert r.steps[1].start_ms == 7.0
    assert r.wait_ms == pytest.approx(2.0)
    assert r.finish_ms == pytest.approx(7.0 + 4.0 + 3.0)


def _oracle_probe(p, bs, now, tl):
    """Per-stage greedy re-derived: score every vGPU, keep the first minimum."""
    ready, prev, finish_path = now, None, []
    for d, pool in enumerate(p.stage_vgpus):
        inf = p.inf_ms[d][bs]
        scored = []
        for v in pool:
            arrive = ready
            if prev is not None and prev.node != v.node and p.out_bytes[d - 1] > 0:
                x = p.out_bytes[d - 1] * bs * 8 / (GBPS * 0.2 * 1e9) * 1000
                arrive = tl.earliest_slot([dp.uplink(prev.node), dp.downlink(v.node)], ready, x) + x
            scored.append((tl.earliest_slot([v.gpu], arrive, inf) + inf, v))
        best = min(f for f, _ in scored)
        fin, v = next((f, v) for f, v in scored if f == best)
        finish_path.append(v)
        ready, prev = fin, v
    return ready, finish_path


def _random_pipeline(rng, pid=0):
    depth = rng.randint(1, 3)
    nodes = [f"n{i}" for i in range(rng.randint(1, 4))]
    pools, idx = [], {}
    for _ in range(depth):
        pool = []
        for _ in range(rng.randint(1, 3)):
            n = rng.choice(nodes)
            pool.append(vg(n, idx.setdefault(n, 0)))
            idx[n] += 1
        pools.append(pool)
    ub = rng.randint(1, 4)
    inf = []
    for _ in range(depth):
        base = rng.uniform(1.0, 8.0)
        inf.append([base * (1 + 0.6 * (b - 1)) for b in range(1, ub + 1)])
    out = [rng.choice([0, 200_000, 1_000_000]) for _ in range(depth - 1)] + [0]
    return runtime(pools, inf, out, ub, pid, {n: (GBPS, GBPS) for n in nodes})


def _random_busy(rng, tl, p, n):
    res = sorted({v.gpu for pool in p.stage_vgpus for v in pool}
                 | {dp.uplink(v.node) for pool in p.stage_vgpus for v in pool}
                 | {dp.downlink(v.node) for pool in p.stage_vgpus for v in pool})
    for k in range(n):
        r = rng.choice(res)
        s, d = rng.uniform(0, 60), rng.uniform(0.5, 8)
        if tl.is_free(r, s, d):
            tl.mark_reserved([ReservationEntry(r, s, d, ("bg", k))])


def test_probe_matches_per_stage_oracle_and_is_pure():
    rng = random.Random(17)
    for _ in range(400):
        p = _random_pipeline(rng)
        tl = ResourceTimeline()
        _random_busy(rng, tl, p, rng.randint(0, 25))
        before = tl.snapshot()
        bs = rng.randint(1, p.unified_batch)
        now = rng.uniform(0, 30)
        r = probe(p, bs, now, tl)
        fin, path = _oracle_probe(p, bs, now, tl)
        assert r.finish_ms == pytest.approx(fin, abs=1e-9)
        assert tl.snapshot() == before
        # the returned steps are free and chained
        for s in r.steps:
            assert all(tl.is_free(res, s.start_ms, s.dur_ms) for res in s.resources)
        assert all(a.end_ms <= b.start_ms + 1e-9 for a, b in zip(r.steps, r.steps[1:]))
        assert r.finish_ms == pytest.approx(r.steps[-1].end_ms)
        assert r.path == path and r.finish_ms >= now


def test_probe_rejects_bad_batch():
    p = runtime([[vg("a")]], [[1.0, 2.0]])
    with pytest.raises(ValueError):
        probe(p, 3, 0.0, ResourceTimeline())


def test_stage_latency_interpolates_missing_batches(main_blocks):
    blk = main_blocks["hetero-a"]
    t = stage_latency_table(blk, 0, 4, "high", 1, 4)
    at = {b: sum(x.latency_ms[("high", 1, b)] for x in blk[:4]) for b in (1, 2, 4)}
    assert t[1] == pytest.approx(at[1]) and t[4] == pytest.approx(at[4])
    assert t[3] == pytest.approx(0.5 * (at[2] + at[4]))


# -- adaptive batching step ----------------------------------------------------

def test_step_dispatches_full_batch():
    p = runtime([[vg("a")]], [[5.0, 8.0]])
    tl = ResourceTimeline()
    q = [req(1), req(2), req(3)]
    a = schedule_step(q, [p], 0.0, tl)
    assert isinstance(a, Dispatch) and [r.rid for r in a.requests] == [1, 2]
    assert tl.reserved(p.stage_vgpus[0][0].gpu, (1, 0)) == (0.0, 8.0)


def test_step_shrinks_batch_to_meet_deadline():
    p = runtime([[vg("a")]], [[5.0, 8.0]])
    a = schedule_step([req(1, deadline=6.0), req(2)], [p], 0.0, ResourceTimeline())
    assert isinstance(a, Dispatch) and a.result.bs == 1


def test_step_drops_hopeless_head():
    p = runtime([[vg("a")]], [[5.0, 8.0]])
    tl = ResourceTimeline()
    a = schedule_step([req(1, deadline=4.0), req(2)], [p], 0.0, tl)
    assert isinstance(a, Drop) and a.request.rid == 1
    assert tl.snapshot() == {}


def test_step_waits_for_more_requests():
    p = runtime([[vg("a")]], [[5.0, 8.0, 10.0, 12.0]])
    tl = ResourceTimeline()
    stats = SchedulerStats()
    a = schedule_step([req(1, deadline=50.0)], [p], 0.0, tl, stats)
    assert isinstance(a, Wait) and a.bs == 4
    # latest start for a batch of one: 50 - 5
    assert a.until_ms == pytest.approx(45.0)
    assert tl.snapshot() == {} and stats.waits == 1 and stats.dispatches == 0


def test_step_wait_until_is_latest_feasible_start():
    rng = random.Random(23)
    checked = 0
    for _ in range(200):
        p = _random_pipeline(rng)
        if p.unified_batch < 2:
            continue
        tl = ResourceTimeline()
        _random_busy(rng, tl, p, rng.randint(0, 20))
        idle = probe(p, 1, 0.0, ResourceTimeline()).finish_ms
        deadline = rng.uniform(idle, idle + 80)
        a = schedule_step([req(1, deadline=deadline)], [p], 0.0, tl)
        if not (isinstance(a, Wait) and probe(p, 1, 0.0, tl).finish_ms <= deadline):
            continue
        checked += 1
        assert probe(p, 1, a.until_ms, tl).finish_ms <= deadline + 1e-9
        hi = deadline - sum(p.inf_ms[d][1] for d in range(p.depth))
        if a.until_ms < hi:
            # bisection leaves at most bracket / 2**12 of slack
            late = a.until_ms + max(hi / 2 ** dp.WAIT_BISECT, 1e-6) + 1e-9
            assert probe(p, 1, late, tl).finish_ms > deadline
    assert checked > 50


def test_step_immediate_when_no_slack():
    # a batch of one only just fits now, so waiting cannot help
    p = runtime([[vg("a")]], [[5.0, 8.0]])
    a = schedule_step([req(1, deadline=5.0)], [p], 0.0, ResourceTimeline())
    assert isinstance(a, Dispatch) and a.result.bs == 1


def test_step_prefers_least_wait_pipeline():
    p0 = runtime([[vg("a")]], [[5.0]], pid=0)
    p1 = runtime([[vg("b")]], [[6.0]], pid=1)
    tl = ResourceTimeline()
    busy(tl, p0.stage_vgpus[0][0], 0.0, 3.0)
    a = schedule_step([req(1)], [p0, p1], 0.0, tl)
    assert a.pipeline is p1


def interpret(q, pipes, now, tl):
    """Reference decision for one step, written from the rules directly."""
    res = [probe(p, p.unified_batch, now, tl) for p in pipes]
    k = min(range(len(pipes)), key=lambda i: (res[i].wait_ms, i))
    p = pipes[k]
    head = q[0]
    ok = [bs for bs in range(p.unified_batch, 0, -1)
          if probe(p, bs, now, tl).finish_ms <= head.deadline_ms]
    if not ok:
        return ("drop", head.rid)
    if len(q) >= ok[0]:
        return ("dispatch", p.pid, ok[0])
    return ("short", p.pid, ok[0])


def test_step_matches_reference_interpreter():
    rng = random.Random(29)
    seen = set()
    for _ in range(300):
        pipes = [_random_pipeline(rng, pid=i) for i in range(rng.randint(1, 3))]
        # pipelines of one model never share vGPUs; keep node names disjoint
        for i, p in enumerate(pipes):
            p.stage_vgpus = [[vg(f"p{i}{v.node}", v.gpu.index) for v in pool] for pool in p.stage_vgpus]
            p.links.rates = {f"p{i}{n}": r for n, r in p.links.rates.items()}
            p.__post_init__()
        tl = ResourceTimeline()
        for p in pipes:
            _random_busy(rng, tl, p, rng.randint(0, 10))
        q = [req(j, deadline=rng.uniform(5, 60)) for j in range(rng.randint(1, 5))]
        q.sort(key=lambda r: r.deadline_ms)
        want = interpret(q, pipes, 0.0, tl)
        got = schedule_step(q, pipes, 0.0, tl)
        seen.add(want[0])
        if want[0] == "drop":
            assert isinstance(got, Drop) and got.request.rid == want[1]
        elif want[0] == "dispatch":
            assert isinstance(got, Dispatch)
            assert (got.pipeline.pid, got.result.bs) == want[1:]
        else:
            assert isinstance(got, (Wait, Dispatch))
            if isinstance(got, Wait):
                assert (got.pipeline, got.bs) == want[1:]
            else:
                assert got.pipeline.pid == want[1] and got.result.bs == len(q)
    assert seen == {"drop", "dispatch", "short"}


def test_dispatches_never_conflict_and_meet_deadlines():
    rng = random.Random(31)
    pipes = [_random_pipeline(rng, pid=0)]
    tl = ResourceTimeline()
    now = 0.0
    rid = 0
    for _ in range(300):
        now += rng.uniform(0.0, 3.0)
        q = [req(rid + j, now, now + rng.uniform(5, 80)) for j in range(rng.randint(1, 4))]
        q.sort(key=lambda r: r.deadline_ms)
        rid += len(q)
        a = schedule_step(q, pipes, now, tl)
        if isinstance(a, Dispatch):
            assert a.result.finish_ms <= q[0].deadline_ms
            assert a.result.steps[0].start_ms >= now
    for r in tl.resources():
        iv = tl.intervals(r)
        assert all(x[1] <= y[0] + 1e-9 for x, y in zip(iv, iv[1:]))


def test_probe_counts_are_bounded():
    rng = random.Random(37)
    for _ in range(200):
        pipes = [_random_pipeline(rng, pid=i) for i in range(rng.randint(1, 3))]
        tl = ResourceTimeline()
        q = [req(j, deadline=rng.uniform(10, 80)) for j in range(4)]
        q.sort(key=lambda r: r.deadline_ms)
        stats = SchedulerStats()
        a = schedule_step(q, pipes, 0.0, tl, stats)
        if isinstance(a, Dispatch):
            assert stats.dispatch_probes <= len(pipes) + max(p.unified_batch for p in pipes)


# -- runtime construction -----------------------------------------------------

def test_build_runtimes_places_disjoint_vgpus(main_blocks, main_cluster, main_plans):
    plan = main_plans["ppipe"]
    rts = build_runtimes(plan, main_blocks, main_cluster)
    gpus = [v.gpu for ps in rts.values() for p in ps for pool in p.stage_vgpus for v in pool]
    assert len(gpus) == len(set(gpus))
    for ps in rts.values():
        for p in ps:
            for d, part in enumerate(p.plan.partitions):
                assert len(p.stage_vgpus[d]) == part.vgpu_count
                assert p.inf_ms[d][p.unified_batch] == pytest.approx(part.latency_ms)
                nodes = {n.node_id for n in main_cluster.nodes_of(part.gpu_class)}
                assert {v.node for v in p.stage_vgpus[d]} <= nodes


# -- reactive baseline ----------------------------------------------------------

def test_reactive_single_request_walks_stages():
    p = runtime([[vg("a")], [vg("b")]], [[5.0], [3.0]], out_bytes=[1_000_000, 0])
    tl = ResourceTimeline()
    s = ReactiveScheduler("m", [p], tl, slo_ms=100.0)
    out = s.on_arrival(req(1, 0.0, 100.0), 0.0)
    (job,) = out.jobs
    assert job.stage == 0 and not job.final and job.steps[-1].start_ms == 0.0
    out = s.on_job_done(job, 5.0)
    (job2,) = out.jobs
    assert job2.final and [st.kind for st in job2.steps] == ["xfer", "gpu"]
    assert job2.steps[-1].start_ms + job2.steps[-1].dur_ms == pytest.approx(5 + 4 + 3)


def test_reactive_drops_past_budget():
    p = runtime([[vg("a")]], [[5.0]])
    s = ReactiveScheduler("m", [p], ResourceTimeline(), slo_ms=4.0)
    out = s.on_arrival(req(1, 0.0, 4.0), 0.0)
    assert [r.rid for r in out.drops] == [1] and not out.jobs


def test_reactive_round_robin_follows_weights():
    rr = dp._SmoothRR([3.0, 1.0])
    picks = [rr.next() for _ in range(8)]
    assert picks.count(0) == 6 and picks.count(1) == 2


def test_reactive_takes_unified_batch_when_queued():
    p = runtime([[vg("a")]], [[5.0, 8.0]])
    s = ReactiveScheduler("m", [p], ResourceTimeline(), slo_ms=100.0)
    for rid in (1, 2, 3):
        s._enqueue(0, 0, dp.StageItem(req(rid), 100.0, ""))
    a = s.reactive_schedule_step(0, 0, 0.0)
    assert isinstance(a, Dispatch) and [r.rid for r in a.requests] == [1, 2]
    # the only vGPU is now busy, so nothing else can start
    assert s.reactive_schedule_step(0, 0, 0.0) is None
