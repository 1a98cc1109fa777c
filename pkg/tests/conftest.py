import numpy as np
import pytest

from vmbo.dataset import LowLevelProfile, MeasurementRecord, MeasurementTable
from vmbo.suites import aws_catalog, shipped_table


def profile(seed: int = 0) -> LowLevelProfile:
    rng = np.random.default_rng(seed)
    user, iowait = rng.uniform(20, 60), rng.uniform(0, 20)
    return LowLevelProfile(user, iowait, rng.uniform(90, 200), rng.uniform(10, 90),
                           rng.uniform(0, 100), rng.uniform(1, 50))


def make_table(times: dict, catalog=None, failed=()) -> MeasurementTable:
    """Table from ``{workload: {vm: exec_time}}``; ``failed`` lists (w, vm) pairs."""
    catalog = tuple(catalog or aws_catalog())
    records = {}
    for w, per_vm in times.items():
        for i, vm in enumerate(catalog):
            if (w, vm.name) in failed:
                records[(w, vm.name)] = MeasurementRecord(w, vm.name, None, None, failed=True)
            else:
                records[(w, vm.name)] = MeasurementRecord(w, vm.name, float(per_vm[vm.name]), profile(i))
    return MeasurementTable(catalog, tuple(times), records)


@pytest.fixture(scope="session")
def catalog():
    return aws_catalog()


@pytest.fixture(scope="session")
def cliff():
    return shipped_table("cliff9")


@pytest.fixture(scope="session")
def smooth():
    return shipped_table("smooth9")


@pytest.fixture
def toy_table(catalog):
    """One workload whose time grows with catalog position; fastest VM is first."""
    return make_table({"w": {vm.name: 100.0 + 10.0 * i for i, vm in enumerate(catalog)}}, catalog)


_acceptance_lines: dict = {}


def record_acceptance(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    _acceptance_lines[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_acceptance_lines):
            terminalreporter.write_line(_acceptance_lines[number])
