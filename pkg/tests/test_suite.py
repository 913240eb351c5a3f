from pathlib import Path

import pytest

from weakkam import artifacts
from weakkam.suite import Suite, run_suite


@pytest.fixture
def free_config(make_config):
    return make_config(
        preset={"name": "free"},
        grid={"n": 32},
        aubry={"T_recur": 1.0, "dt_curve": 1e-2, "n_curves": 4},
        flow={"T_attractor": 4.0, "n_trajectories": 20, "T_lyap": 2.0},
    )


def test_free_particle_passes_every_contract(free_config):
    suite = Suite(free_config)
    assert suite.run() == "FINISHED"
    assert suite.exit_code == 0
    statuses = {name: r.status for name, r in suite.records.items()}
    assert statuses == {
        "solve": "FINISHED",
        "regularize": "FINISHED",
        "aubry": "FINISHED",
        "attractor": "FINISHED",
        "lyapunov": "FINISHED",
        "rate": "SKIPPED",
    }
    assert suite.records["rate"].error["type"] == "HypothesisViolation"
    for stage, contract in (
        ("solve", "fixed_point"),
        ("solve", "refinement_constant"),
        ("aubry", "transported_residual"),
        ("aubry", "dirac_residual"),
    ):
        assert suite.records[stage].contracts[contract]["passed"], (stage, contract)
    assert "target_distance" in suite.records["attractor"].contracts

    out = suite.ctx.out
    report = artifacts.read_json(out / "report.json")
    assert report["passed"]
    assert report["config"]["preset"]["name"] == "free"
    for name in ("u_minus.csv", "u_reg.csv", "aubry.json", "equilibria.json",
                 "sigma_cloud.csv", "attractor_cloud.csv", "curves/curve_003.csv"):
        assert (out / name).exists()
    assert artifacts.read_json(out / "equilibria.json") == {"continuum": True, "equilibria": []}


def test_error_skips_later_stages(make_config, tmp_path):
    cfg = make_config(grid={"n": 16}, semigroup={"max_iters": 1})
    suite = Suite(cfg, ("rate",), out=str(tmp_path / "broken"))
    assert suite.stages == ("solve", "rate")
    assert suite.run() == "ERROR"
    assert suite.exit_code == 1
    assert suite.records["solve"].status == "ERROR"
    assert suite.records["solve"].error["type"] == "NotConverged"
    assert suite.records["solve"].error["report"]["iterations"] == 1
    assert suite.records["rate"].status == "SKIPPED"
    report = artifacts.read_json(tmp_path / "broken" / "report.json")
    assert report["stages"]["rate"]["error"]["message"] == "solve failed"


def snapshot(out):
    return {
        str(path.relative_to(out)): path.read_bytes()
        for path in sorted(out.rglob("*"))
        if path.is_file() and path.suffix != ".log"
    }


def test_repeated_runs_are_byte_identical(free_config):
    outputs = []
    for _ in range(2):
        assert run_suite(free_config) == 0
        outputs.append(snapshot(Path(free_config.output.dir)))
    assert "report.json" in outputs[0]
    assert "attractor_cloud.csv" in outputs[0]
    assert outputs[0] == outputs[1]
