import pytest

from gwtails import PhiEvaluator, build_immigration, build_offspring, truncated_geometric

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def test_off():
    return build_offspring([0.5, 0.5])


@pytest.fixture(scope="session")
def geo_off():
    return build_offspring(truncated_geometric(0.5, 48))


@pytest.fixture(scope="session")
def imm_one(test_off):
    return build_immigration([1.0], test_off)


@pytest.fixture(scope="session")
def imm_half(test_off):
    return build_immigration([0.5, 0.5], test_off)


@pytest.fixture(scope="session")
def geo_imm(geo_off):
    return build_immigration([1.0], geo_off)


@pytest.fixture(scope="session")
def ev(test_off):
    return PhiEvaluator(test_off)


@pytest.fixture(scope="session")
def geo_ev(geo_off):
    return PhiEvaluator(geo_off)


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion; printed in the terminal summary."""

    def _report(label: str, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

