"""Mode sweeps and tolerance studies over the three test problems.

Each run writes its convergence history and final control; the summary
tables are written once every run has finished. A failing run becomes a
row with a status message instead of aborting the whole sweep.
"""
from __future__ import annotations

import json
import logging
import math
import time
import traceback
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .fom import IntegrationDiverged, solve_state
from .matio import write_csv, write_matrix
from .optimizer import METHODS, ModePolicy, OptimizerConfig, config_dict, optimize
from .problems import EXAMPLES, build_example

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ["method", "modes", "J_final", "wall_s", "iterations", "exit_reason", "status"]
TOLERANCE_COLUMNS = ["method", "eps", "J_final", "avg_modes", "wall_s", "iterations", "exit_reason", "status"]


@dataclass(frozen=True)
class ExperimentSpec:
    example: int = 1
    scale: float = 1.0
    methods: tuple = ("fom", "pod", "spod")
    modes: tuple = (10,)
    eps: tuple = ()
    out: str = "results"
    seed: int = 0
    threads: int = 1
    dump_snapshots: bool = False
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.example not in EXAMPLES:
            raise ValueError(f"example must be one of {sorted(EXAMPLES)}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
        if any(int(p) < 1 for p in self.modes):
            raise ValueError("mode counts must be positive")
        if any(not e > 0 for e in self.eps):
            raise ValueError("tolerances must be positive")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class RunOutcome:
    method: str
    setting: float
    J_final: float = math.nan
    avg_modes: float = math.nan
    wall_s: float = math.nan
    iterations: int = 0
    exit_reason: str = ""
    status: str = "ok"


def _tag(method, label):
    return f"{method}_{label}"


def _run_one(sys, tg, spec: ExperimentSpec, method: str, policy: ModePolicy, label: str, out: Path) -> RunOutcome:
    config = replace(spec.optimizer, mode_policy=policy, threads=spec.threads, mu=sys.mu)
    outcome = RunOutcome(method, policy.value)
    t0 = time.perf_counter()
    try:
        u, rec = optimize(sys, tg, config, method)
    except (IntegrationDiverged, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        outcome.wall_s = time.perf_counter() - t0
        outcome.status = f"failed: {type(exc).__name__}: {exc}"
        log.warning("%s %s failed\n%s", method, label, traceback.format_exc())
        return outcome
    outcome.wall_s = time.perf_counter() - t0
    outcome.J_final = rec.final_J
    outcome.avg_modes = rec.average_modes
    outcome.iterations = len(rec.iterations)
    outcome.exit_reason = rec.exit_reason
    tag = _tag(method, label)
    rec.to_csv(out / f"convergence_{tag}.csv")
    write_matrix(out / f"control_{tag}.bin", u)
    if spec.dump_snapshots:
        write_matrix(out / f"state_{tag}.bin", solve_state(sys, tg, u))
    return outcome


def _prepare(spec: ExperimentSpec, name: str):
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    sys, tg, desc = build_example(spec.example, spec.scale, spec.optimizer.mu)
    meta = {
        "study": name,
        "example": spec.example,
        "scale": spec.scale,
        "m": sys.grid.m,
        "n": tg.n,
        "dt": tg.dt,
        "seed": spec.seed,
        "target": asdict(desc),
        "optimizer": config_dict(spec.optimizer),
    }
    (out / f"{name}_metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sys, tg, out


def run_mode_sweep(spec: ExperimentSpec) -> list[RunOutcome]:
    """Optimise once per (method, mode count); the FOM method runs once.

    Writes ``mode_sweep.csv`` with rows ordered by method then mode count.
    """
    sys, tg, out = _prepare(spec, "mode_sweep")
    outcomes = []
    for method in spec.methods:
        if method == "fom":
            oc = _run_one(sys, tg, spec, method, ModePolicy.fixed(sys.grid.m), "full", out)
            oc.setting = sys.grid.m
            outcomes.append(oc)
            continue
        for p in sorted(int(p) for p in spec.modes):
            outcomes.append(_run_one(sys, tg, spec, method, ModePolicy.fixed(p), f"p{p}", out))
    write_csv(out / "mode_sweep.csv", SWEEP_COLUMNS,
              ([o.method, int(o.setting), o.J_final, o.wall_s, o.iterations, o.exit_reason, o.status]
               for o in outcomes))
    return outcomes


def run_tolerance_study(spec: ExperimentSpec, eps=None) -> list[RunOutcome]:
    """Optimise once per (reduced method, tolerance) with tolerance-based mode selection.

    Writes ``tolerance_study.csv``; ``avg_modes`` averages the selected mode
    count over all iterations of the run.
    """
    eps = tuple(spec.eps if eps is None else eps)
    if not eps:
        raise ValueError("tolerance study needs at least one eps")
    sys, tg, out = _prepare(spec, "tolerance_study")
    outcomes = []
    for method in spec.methods:
        if method == "fom":
            continue
        for e in sorted(eps):
            outcomes.append(_run_one(sys, tg, spec, method, ModePolicy.tolerance(e), f"eps{e:g}", out))
    write_csv(out / "tolerance_study.csv", TOLERANCE_COLUMNS,
              ([o.method, o.setting, o.J_final, o.avg_modes, o.wall_s, o.iterations, o.exit_reason, o.status]
               for o in outcomes))
    return outcomes


def any_failed(outcomes) -> bool:
    return any(o.status != "ok" for o in outcomes)
