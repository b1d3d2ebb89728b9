import pytest

from mces_ssp.generators import GeneratorParams, fixture_bandit1, fixture_chain2, generate


@pytest.fixture
def chain2():
    return fixture_chain2()


@pytest.fixture
def bandit1():
    return fixture_bandit1()


def small_instances(n=10, S=3, A=2):
    """Mixed alpha-family and layered instances small enough to enumerate."""
    out = []
    for seed in range(n):
        out.append(generate(GeneratorParams("alpha_family", S=S, A=A, alpha=0.25, seed=seed)))
        out.append(generate(GeneratorParams("layered_dag", S=S, A=A, layers=min(S, 3), seed=seed)))
    return out


@pytest.fixture(scope="session")
def random_small():
    return small_instances()


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one summary line per acceptance criterion."""

    def record(criterion, passed, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
