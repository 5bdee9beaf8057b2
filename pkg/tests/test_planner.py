import copy
import random

import pytest

from oracles import brute_force_optimum, template_tables
from poolpipe import fixtures
from poolpipe.cluster import ClusterSpec
from poolpipe.planner import (ClusterPlan, InfeasibleError, PlannerConfig, enumerate_candidates,
                              enumerate_templates, export_milp, solve, solve_dart_r, solve_np,
                              validate)
from poolpipe.planner.allocate import Allocator
from poolpipe.prepartition import prepartition
from poolpipe.profiles import SynthSpec, synth_profile


def _oracle(blocks, cluster, config):
    (model, blk), = blocks.items()
    counts = {c.name: c.count for c in cluster.classes}
    links = {c: cluster.link_gbps(c) for c in counts}
    return brute_force_optimum(blk, counts, links, config.effective_slo(model, blk),
                               config.batches, config.fractions, config.max_partitions,
                               config.bw_scale, config.quantize)


def test_templates_count_and_order():
    t = enumerate_templates(["a", "b"], 3)
    assert len(t) == 2 + 4 + 8
    assert t[:2] == [("a",), ("b",)]
    assert [len(x) for x in t] == sorted(len(x) for x in t)
    assert len(enumerate_templates(["a", "b", "c"], 2)) == 3 + 9


def test_solver_matches_brute_force(small_cases):
    for blocks, cluster, cfg in small_cases:
        plan = solve(blocks, cluster, cfg)
        ref = _oracle(blocks, cluster, cfg)
        assert plan.objective_value == pytest.approx(ref, rel=1e-3)
        assert validate(plan, blocks, cluster, cfg) == []


def test_oracle_tables_are_monotone(small_cases):
    blocks, cluster, cfg = small_cases[0]
    (model, blk), = blocks.items()
    counts = {c.name: c.count for c in cluster.classes}
    links = {c: cluster.link_gbps(c) for c in counts}
    tables, _ = template_tables(blk, counts, links, cfg.effective_slo(model, blk), cfg.batches,
                                cfg.fractions, 2)
    for t in tables.values():
        assert (t[1:, :] >= t[:-1, :]).all() and (t[:, 1:] >= t[:, :-1]).all()


def test_pruning_keeps_the_optimum(small_cases):
    for blocks, cluster, cfg in small_cases:
        (model, blk), = blocks.items()
        caps = {c.name: c.count for c in cluster.classes}
        full = enumerate_candidates(model, blk, cluster, cfg, prune=False)
        kept = enumerate_candidates(model, blk, cluster, cfg)
        assert len(kept) <= len(full)
        a = Allocator(full, caps).solve(1e-9).objective
        b = Allocator(kept, caps).solve(1e-9).objective
        assert b == pytest.approx(a, rel=1e-9)


def test_candidates_respect_slo(small_cases):
    blocks, cluster, cfg = small_cases[1]
    (model, blk), = blocks.items()
    t_eff = cfg.effective_slo(model, blk)
    for c in enumerate_candidates(model, blk, cluster, cfg, prune=False):
        assert c.e2e_latency_ms <= t_eff
        assert c.stages[0].start == 0 and c.stages[-1].end == len(blk)
        assert c.stages[-1].out_transfer_ms == 0.0


def _random_case(rng: random.Random):
    n_layers = rng.randint(3, 8)
    curve = sorted((round(rng.random(), 2), round(rng.uniform(1.0, 6.0), 2))
                   for _ in range(rng.randint(1, 3)))
    curve[0] = (0.0, curve[0][1])
    spec = SynthSpec(f"r{rng.randrange(10**6)}", n_layers, "high", rng.uniform(5.0, 60.0),
                     {"low": curve}, feature_bytes=(rng.randint(1, 10) * 10_000,
                                                    rng.randint(10, 100) * 20_000),
                     batches=fixtures.SMALL_BATCHES, fractions=fixtures.SMALL_FRACTIONS,
                     seed=rng.randrange(10**6))
    m = synth_profile(spec)
    blocks = {m.model_name: prepartition(m, min(n_layers, rng.randint(2, 5)))}
    cluster = ClusterSpec.build({"high": rng.randint(1, 3), "low": rng.randint(1, 4)},
                                nic_gbps=rng.choice([10.0, 25.0, 50.0]))
    cfg = PlannerConfig(batches=fixtures.SMALL_BATCHES, fractions=fixtures.SMALL_FRACTIONS,
                        margin=rng.choice([0.0, 0.2, 0.4]), quantize=rng.random() < 0.3)
    return blocks, cluster, cfg


def test_randomized_plans_validate():
    rng = random.Random(2024)
    for _ in range(25):
        blocks, cluster, cfg = _random_case(rng)
        for solver in (solve, solve_np, solve_dart_r):
            plan = solver(blocks, cluster, cfg)
            assert validate(plan, blocks, cluster, cfg) == []


def _plan(small_cases, i=0):
    blocks, cluster, cfg = small_cases[i]
    return blocks, cluster, cfg, solve(blocks, cluster, cfg)


def _checks(plan, blocks, cluster, cfg):
    return {v.check for v in validate(plan, blocks, cluster, cfg)}


def test_validate_flags_capacity(small_cases):
    blocks, cluster, cfg, plan = _plan(small_cases)
    bad = copy.deepcopy(plan)
    pipe = next(iter(bad.per_model.values()))[0]
    for p in pipe.partitions:
        p.vgpu_count += 50 * p.denom
        p.throughput_rps = p.batch * p.vgpu_count * 1000 / p.latency_ms
    pipe.throughput_rps = min(p.throughput_rps for p in pipe.partitions)
    assert "capacity" in _checks(bad, blocks, cluster, cfg)


def test_validate_flags_structure_and_latency(small_cases):
    blocks, cluster, cfg, plan = _plan(small_cases)
    model = next(iter(plan.per_model))
    bad = copy.deepcopy(plan)
    part = bad.per_model[model][0].partitions[0]
    part.latency_ms *= 1.01
    assert "partition latency" in _checks(bad, blocks, cluster, cfg)

    bad = copy.deepcopy(plan)
    bad.per_model[model][0].partitions[-1].block_range = (0, 3)
    assert _checks(bad, blocks, cluster, cfg) & {"partition coverage", "partition adjacency"}

    bad = copy.deepcopy(plan)
    bad.per_model[model][0].partitions[0].batch = 99
    assert "unified batch" in _checks(bad, blocks, cluster, cfg)

    tight = cfg.replace(slo_ms={model: 1.0})
    assert "latency SLO" in _checks(plan, blocks, cluster, tight)


def test_infeasible_slo_raises(small_cases):
    blocks, cluster, cfg = small_cases[0]
    (model,) = blocks
    with pytest.raises(InfeasibleError) as err:
        solve(blocks, cluster, cfg.replace(slo_ms={model: 0.1}))
    assert model in err.value.reasons


def test_np_is_single_stage(small_cases):
    for blocks, cluster, cfg in small_cases:
        plan = solve_np(blocks, cluster, cfg)
        assert all(len(p.partitions) == 1 for ps in plan.per_model.values() for p in ps)
        assert plan.objective_value <= solve(blocks, cluster, cfg).objective_value + 1e-9


def test_dart_r_structure(small_cases):
    blocks, cluster, cfg = small_cases[0]
    plan = solve_dart_r(blocks, cluster, cfg)
    chains = [p for ps in plan.per_model.values() for p in ps if len(p.partitions) == 2]
    assert len(chains) == min(cluster.count(c) for c in cluster.class_names)
    for p in chains:
        assert {q.gpu_class for q in p.partitions} == set(cluster.class_names)
        assert all(q.denom == 1 and q.vgpu_count == 1 for q in p.partitions)
    assert validate(plan, blocks, cluster, cfg) == []


def test_plan_round_trip(small_cases, tmp_path):
    _, _, _, plan = _plan(small_cases, 1)
    plan.save(tmp_path / "p.json")
    back = ClusterPlan.load(tmp_path / "p.json")
    assert back.to_dict() == plan.to_dict()


@pytest.mark.parametrize("i", [2, 4])
def test_exported_model_solves_to_same_optimum(small_cases, tmp_path, i):
    highspy = pytest.importorskip("highspy")
    blocks, cluster, cfg = small_cases[i]
    plan = solve(blocks, cluster, cfg)
    path = tmp_path / "m.lp"
    info = export_milp(blocks, cluster, cfg, path)
    assert info
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", 1e-9)
    h.readModel(str(path))
    h.run()
    assert h.modelStatusToString(h.getModelStatus()) == "Optimal"
    assert h.getInfo().objective_function_value == pytest.approx(plan.objective_value, rel=1e-6)


def test_multi_model_fair_share():
    profs = fixtures.small_profiles()
    blocks = {m.model_name: prepartition(m, 5) for m in profs[:2]}
    cluster = ClusterSpec.build({"high": 3, "low": 4}, nic_gbps=10.0)
    cfg = PlannerConfig(batches=fixtures.SMALL_BATCHES, fractions=fixtures.SMALL_FRACTIONS,
                        workload_shares={profs[0].model_name: 2.0, profs[1].model_name: 1.0})
    plan = solve(blocks, cluster, cfg)
    assert validate(plan, blocks, cluster, cfg) == []
    shares = cfg.shares(list(blocks))
    expect = min(plan.model_throughput(m) / shares[m] for m in blocks)
    assert plan.objective_value == pytest.approx(expect)
    assert all(plan.per_model[m] for m in blocks)
