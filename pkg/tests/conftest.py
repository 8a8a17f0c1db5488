import pytest
from hypothesis import HealthCheck, settings

from dualsched.core import GeneratorParams, generate_instance, instance_from_lists

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def gen(n_jobs, n_machines, seed, ops=(1, 3), flex=(1, 2), times=(1, 9)):
    return generate_instance(GeneratorParams(n_jobs, n_machines, ops, flex, times), seed)


@pytest.fixture
def two_by_two():
    """2 jobs x 2 ops, mixed eligibility; optimum 6 (job 1's chain 4 + 2 is a lower bound)."""
    return instance_from_lists(
        [
            [{0: 3, 1: 5}, {1: 2}],
            [{1: 4}, {0: 2, 1: 3}],
        ],
        2,
    )


@pytest.fixture
def small_instance():
    return gen(5, 3, 11)


class GateRecorder:
    """Swap listener that checks every deployment carries an accepted report."""

    def __init__(self):
        self.calls = []
        self.violations = []

    def __call__(self, rule, report):
        self.calls.append((rule.source, report))
        if report is None or not report.accepted or report.feasibility_failures:
            self.violations.append(rule.source)


SWAP_AUDIT = {"swaps": 0, "violations": []}


@pytest.fixture(autouse=True)
def audit_deliberative_swaps(monkeypatch):
    """Every swap issued by the deliberative loop must carry an accepted, feasible report."""
    import dualsched.deliberative as deliberative

    original = deliberative.swap_rule

    def audited(handle, rule, report=None):
        SWAP_AUDIT["swaps"] += 1
        if report is None or not report.accepted or report.feasibility_failures:
            SWAP_AUDIT["violations"].append(rule.source)
        return original(handle, rule, report)

    monkeypatch.setattr(deliberative, "swap_rule", audited)
    before = len(SWAP_AUDIT["violations"])
    yield
    assert len(SWAP_AUDIT["violations"]) == before, SWAP_AUDIT["violations"][before:]
