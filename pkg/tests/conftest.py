from __future__ import annotations

import re

import pytest

from poolpipe import fixtures
from poolpipe.planner import PlannerConfig, solve, solve_dart_r, solve_np
from poolpipe.prepartition import prepartition

# acceptance lines collected by test_acceptance.py, printed after the run
ACCEPTANCE: dict[int, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    m = re.match(r"test_c(\d\d)_", item.name)
    if m and rep.failed and int(m.group(1)) not in ACCEPTANCE:
        # failed before recording its own line, e.g. an error inside a helper
        ACCEPTANCE[int(m.group(1))] = f"criterion {int(m.group(1)):2d} FAIL  {item.name}: {rep.when} error"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


def small_config() -> PlannerConfig:
    return PlannerConfig(batches=fixtures.SMALL_BATCHES, fractions=fixtures.SMALL_FRACTIONS)


@pytest.fixture(scope="session")
def small_cases():
    """(blocks, cluster, config) for every bundled small fixture."""
    out = []
    for i, m in enumerate(fixtures.small_profiles()):
        out.append(({m.model_name: prepartition(m, 5)}, fixtures.small_cluster(i), small_config()))
    return out


@pytest.fixture(scope="session")
def main_blocks():
    profs = fixtures.main_profiles()
    return {fixtures.MAIN_MODEL: prepartition(profs[fixtures.MAIN_MODEL], 10)}


@pytest.fixture(scope="session")
def main_cluster():
    return fixtures.main_cluster()


class _Plans(dict):
    def __init__(self, blocks, cluster):
        super().__init__()
        self.blocks = blocks
        self.cluster = cluster

    def __missing__(self, mode):
        solver = {"ppipe": solve, "np": solve_np, "dart_r": solve_dart_r}[mode]
        plan = solver(self.blocks, self.cluster, PlannerConfig())
        self[mode] = plan
        return plan


@pytest.fixture(scope="session")
def main_plans(main_blocks, main_cluster):
    """Main-fixture plans by mode, solved on first use."""
    return _Plans(main_blocks, main_cluster)


@pytest.fixture(scope="session")
def fcn_case():
    profs = fixtures.main_profiles()
    blocks = {fixtures.FCN_MODEL: prepartition(profs[fixtures.FCN_MODEL], 10)}
    cluster = fixtures.hc3s_cluster()
    return blocks, cluster, solve(blocks, cluster, PlannerConfig())
