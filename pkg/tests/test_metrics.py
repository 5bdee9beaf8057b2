import csv

import pytest

from poolpipe.metrics import (CSV_FIELDS, GRID, MetricsError, SweepResult, gpu_utilization,
                              max_load_factor, outcome_counts, slo_attainment, sweep_rows,
                              write_csv)
from poolpipe.simulator import RequestRecord, RunReport, UsageRecord


def _report(records, usage=(), horizon=1000.0, vgpus=None, stats=None):
    return RunReport(list(records), list(usage), horizon,
                     vgpus or {"high": [("gpu:h0:0", 1)]}, stats or {})


def _rec(rid, arrival, completion=None, dropped=False, deadline=None, model="m"):
    return RequestRecord(rid, model, arrival, deadline or arrival + 100.0, completion, dropped)


def test_grid():
    assert GRID[0] == 0.05 and GRID[-1] == 1.0 and len(GRID) == 20


def test_attainment_counts_late_and_dropped_against():
    recs = [_rec(0, 50.0, 60.0),               # inside warm-up, ignored
            _rec(1, 200.0, 250.0),             # on time
            _rec(2, 300.0, 300.0 + 100.0),     # exactly at the deadline counts
            _rec(3, 400.0, 501.0),             # late
            _rec(4, 500.0, dropped=True)]
    rep = _report(recs)
    assert slo_attainment(rep) == pytest.approx(2 / 4)
    assert slo_attainment(rep, warmup=0.0) == pytest.approx(3 / 5)
    assert outcome_counts(rep, 0.1) == {"arrived": 4, "completed": 3, "dropped": 1, "late": 1,
                                        "in_flight": 0}
    with pytest.raises(MetricsError):
        slo_attainment(_report([_rec(0, 10.0, 20.0)]))


def test_per_model_attainment():
    rep = _report([_rec(0, 200.0, 210.0, model="a"), _rec(1, 200.0, dropped=True, model="b")])
    assert slo_attainment(rep, model="a") == 1.0 and slo_attainment(rep, model="b") == 0.0


def test_utilization_clips_to_window():
    usage = [UsageRecord("gpu:h0:0", "gpu", 0.0, 200.0, "a"),     # 100 ms after warm-up
             UsageRecord("gpu:h0:0", "gpu", 500.0, 950.0, "b"),
             UsageRecord("uplink:h0:0", "xfer", 100.0, 900.0, "c")]
    rep = _report([_rec(0, 200.0, 210.0)], usage)
    assert gpu_utilization(rep) == {"high": pytest.approx(550.0 / 900.0)}


def _fake_runs(table):
    def run_at(lf):
        ok = round(table[lf] * 100)
        recs = [_rec(i, 200.0 + i, 210.0 + i) if i < ok else _rec(i, 200.0 + i, dropped=True)
                for i in range(100)]
        return _report(recs, stats={"probes_per_dispatch": 1.0})
    return run_at


def test_max_load_factor_top_down_and_full():
    grid = [0.2, 0.4, 0.6, 0.8, 1.0]
    table = {0.2: 1.0, 0.4: 0.95, 0.6: 1.0, 0.8: 0.9, 1.0: 0.5}
    calls = []

    def spy(lf):
        calls.append(lf)
        return _fake_runs(table)(lf)

    res = max_load_factor(spy, 0.99, grid)
    assert res.max_load_factor == 0.6 and calls == [1.0, 0.8, 0.6]
    full = max_load_factor(_fake_runs(table), 0.99, grid, full=True)
    assert full.max_load_factor == 0.6 and full.dips == [0.4]
    assert [p.load_factor for p in full.points] == grid
    none = max_load_factor(_fake_runs({0.5: 0.1}), 0.99, [0.5])
    assert none.max_load_factor == 0.0


def test_sweep_csv_round_trip(tmp_path):
    table = {0.5: 1.0, 1.0: 0.5}
    res = max_load_factor(_fake_runs(table), 0.99, [0.5, 1.0], full=True)
    rows = sweep_rows("ppipe", "reservation", res, ["m"], ["high"])
    write_csv(rows, tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as f:
        back = list(csv.DictReader(f))
    assert [float(r["attainment"]) for r in back] == [1.0, 0.5]
    assert set(CSV_FIELDS) <= set(back[0]) and "util_high" in back[0]
    assert all(float(r["max_load_factor"]) == 0.5 for r in back)
    with pytest.raises(MetricsError):
        write_csv([], tmp_path / "x.csv")


def test_empty_sweep_result():
    assert SweepResult(0.0).points == []
