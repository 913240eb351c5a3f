import pytest

from weakkam import stages
from weakkam.exceptions import NotConverged
from weakkam.parallel import parallel_map
from weakkam.suite import StageResult, check, describe_error


def test_plan_adds_requirements_in_suite_order():
    assert stages.plan(["attractor"]) == ("solve", "regularize", "attractor")
    assert stages.plan(["rate"]) == ("solve", "rate")
    assert stages.plan(["lyapunov", "aubry"]) == ("solve", "regularize", "aubry", "lyapunov")
    assert stages.plan(stages.ORDER) == stages.ORDER
    with pytest.raises(KeyError):
        stages.plan(["plot"])


def test_registry_lookup():
    assert set(dir(stages)) == set(stages.ORDER)
    assert callable(stages.solve)
    assert stages.REQUIRES["regularize"] == ("solve",)
    with pytest.raises(AttributeError):
        stages.plot


def test_check():
    assert check(1e-4, 1e-3)["passed"]
    assert not check(2e-3, 1e-3)["passed"]
    assert check(5.0, 4.0, ">=")["passed"]
    assert not check(0.0, 0.0, ">")["passed"]
    assert check(None, 1.0) == {"value": None, "limit": 1.0, "sense": "<=", "passed": True}
    with pytest.raises(ValueError):
        check(1.0, 1.0, "==")


def test_stage_result():
    result = StageResult("solve", "FINISHED", {"a": check(0.0, 1.0)})
    assert result.passed
    result.contracts["b"] = check(2.0, 1.0)
    assert not result.passed
    assert result.to_dict()["passed"] is False
    assert StageResult("rate", "SKIPPED").passed
    assert not StageResult("solve", "ERROR").passed


def test_describe_error_keeps_report():
    class Report:
        def to_dict(self):
            return {"iterations": 3}

    out = describe_error(NotConverged("no luck", Report()))
    assert out == {"type": "NotConverged", "message": "no luck", "report": {"iterations": 3}}
    assert describe_error(ValueError("x")) == {"type": "ValueError", "message": "x"}


@pytest.mark.parametrize("workers", [1, 2])
def test_parallel_map_keeps_order(workers):
    assert parallel_map(abs, [-2, 1, -3, 0], workers) == [2, 1, 3, 0]
    assert parallel_map(abs, [], workers) == []
