import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__, artifacts, stages
from .aubry import aubry_candidates, aubry_mask
from .exceptions import EmptyAubry, HypothesisViolation, WeakKamError
from .flow import equilibria_find
from .grid import GridFunction, PeriodicGrid
from .model import build_model
from .schema import plain
from .semigroup import SemigroupConfig, regularize, residual_field, solve_stationary

logger = logging.getLogger("weakkam.suite")


def check(value, limit, sense: str = "<=") -> Dict:
    """Contract record comparing a measured value with its limit."""
    if value is None:
        passed = True
    elif sense == "<=":
        passed = bool(value <= limit)
    elif sense == ">=":
        passed = bool(value >= limit)
    elif sense == ">":
        passed = bool(value > limit)
    else:
        raise ValueError(f"unknown comparison {sense!r}")
    return {"value": value, "limit": limit, "sense": sense, "passed": passed}


@dataclass
class StageResult:
    name: str
    status: str = "STARTING"
    contracts: Dict[str, Dict] = field(default_factory=dict)
    info: Dict = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    error: Optional[Dict] = None

    @property
    def passed(self) -> bool:
        return self.status in ("FINISHED", "SKIPPED") and all(
            c["passed"] for c in self.contracts.values()
        )

    def to_dict(self) -> Dict:
        return {
            "status": self.status,
            "passed": self.passed,
            "contracts": self.contracts,
            "info": self.info,
            "artifacts": self.artifacts,
            "error": self.error,
        }


def describe_error(e: Exception) -> Dict:
    out = {"type": type(e).__name__, "message": str(e)}
    report = getattr(e, "report", None)
    if report is not None:
        out["report"] = report.to_dict() if hasattr(report, "to_dict") else report
    return out


class Context:
    """Shared state of a suite run.

    Expensive fields are computed on first use, so a stage can rely on
    results of stages that did not run in this invocation.
    """

    def __init__(self, cfg, out: Optional[str] = None):
        self.cfg = cfg
        self.model = build_model(cfg)
        self.sg = SemigroupConfig.from_config(cfg)
        self.grid = PeriodicGrid(cfg.grid.n, self.model.dim)
        self.out = Path(out or cfg.output.dir)
        self.rng = np.random.default_rng(cfg.seed)
        self.solve_report = None

    def path(self, name: str) -> Path:
        return self.out / name

    @cached_property
    def u_minus(self) -> GridFunction:
        cfg = self.cfg
        u, self.solve_report = solve_stationary(
            GridFunction.constant(self.grid, 0.0), self.sg, self.model,
            cfg.semigroup.tol, cfg.semigroup.max_iters,
        )
        return u

    @cached_property
    def residual(self) -> GridFunction:
        return residual_field(self.u_minus, self.model)

    @cached_property
    def aubry_points(self):
        a = self.cfg.aubry
        return aubry_candidates(self.u_minus, self.model, a.eps_res, a.T_recur, a.dt_curve)

    @cached_property
    def aubry_mask(self) -> Optional[np.ndarray]:
        try:
            return aubry_mask(self.u_minus, self.aubry_points)
        except EmptyAubry:
            logger.warning("No Aubry candidates; skipping Aubry agreement checks")
            return None

    @cached_property
    def equilibria(self):
        return equilibria_find(self.model, self.cfg.flow.seeds_per_axis)

    @cached_property
    def u_reg(self) -> GridFunction:
        r, tol = self.cfg.regularize, self.cfg.tolerances
        return regularize(
            self.u_minus, r.t, r.s, self.sg, self.model, self.aubry_mask,
            tol.tol_order, tol.tol_aubry, r.c_max, r.max_variation, r.dt_flow,
        )


class Suite:
    """Run a sequence of stages and collect their contract records.

    Stage status follows STARTING -> RUNNING -> FINISHED | ERROR | SKIPPED.
    After a stage fails with an error the remaining stages are skipped.
    """

    def __init__(self, cfg, targets=stages.ORDER, out: Optional[str] = None):
        self.cfg = cfg
        self.stages = stages.plan(targets)
        self.ctx = Context(cfg, out)
        self.records: Dict[str, StageResult] = {}
        self.status = "STARTING"

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records.values())

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def run_stage(self, name: str) -> StageResult:
        func = getattr(stages, name)
        try:
            result = func(self.ctx)
            result.status = "FINISHED"
        except HypothesisViolation as e:
            status = "SKIPPED" if name == "rate" else "ERROR"
            logger.warning("Stage %s %s: %s", name, status.lower(), e)
            result = StageResult(name, status, error=describe_error(e))
        except WeakKamError as e:
            logger.error("Stage %s failed: %s", name, e)
            result = StageResult(name, "ERROR", error=describe_error(e))
        return result

    def run(self) -> str:
        self.status = "RUNNING"
        self.ctx.out.mkdir(parents=True, exist_ok=True)
        failed = None
        for name in self.stages:
            if failed is not None:
                self.records[name] = StageResult(
                    name, "SKIPPED", error={"type": "Skipped", "message": f"{failed} failed"}
                )
                continue
            record = self.run_stage(name)
            self.records[name] = record
            if record.status == "ERROR":
                failed = name
            for cname, c in record.contracts.items():
                level = logging.INFO if c["passed"] else logging.WARNING
                logger.log(level, "%s.%s = %s (%s %s)", name, cname, c["value"], c["sense"], c["limit"])
        self.write_report()
        self.status = "FINISHED" if self.passed else "ERROR"
        logger.info("Suite %s: %s", self.status, ", ".join(
            f"{n}={r.status}" for n, r in self.records.items()
        ))
        return self.status

    def report(self) -> Dict:
        return {
            "version": __version__,
            "config": plain(self.cfg),
            "stages": {name: r.to_dict() for name, r in self.records.items()},
            "passed": self.passed,
        }

    def write_report(self) -> Path:
        return artifacts.write_json(self.ctx.path("report.json"), self.report())


def run_suite(cfg, targets=stages.ORDER, out: Optional[str] = None) -> int:
    """Run the stages needed for ``targets``; return the process exit status."""
    suite = Suite(cfg, targets, out)
    suite.run()
    return suite.exit_code
