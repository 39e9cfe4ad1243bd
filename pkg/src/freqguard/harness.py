"""Run orchestration shared by the CLI: single runs, summary statistics and sweeps."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .scenario_io import Experiment, ScenarioFile, build
from .simulation import simulate, simulate_with_uncertainty
from .trajectory import Trajectory, write_trajectory
from .verification import format_reports, verify

OUT_ENV = "FREQGUARD_OUT"


@dataclass
class RunStats:
    """Headline numbers of one run; frequencies in absolute Hz."""

    activation_time: float | None
    peak_abs_u: float
    min_frequency_hz: float
    max_frequency_hz: float
    max_input_slope: float

    def row(self) -> dict:
        return asdict(self)


def run_stats(traj: Trajectory, zero_tol: float = 1e-6) -> RunStats:
    """Summary over the controlled buses (all buses for an uncontrolled network).

    The activation time is the first grid time with some ``|u_i| > zero_tol``;
    the input slope is the largest finite difference ``|du/dt|``.
    """
    cols = list(traj.controlled) or list(range(traj.network.n_buses))
    w = traj.to_hz(traj.omega[:, cols])
    u = traj.u
    active = np.flatnonzero((np.abs(u) > zero_tol).any(axis=1)) if u.size else np.array([], dtype=int)
    slope = np.abs(np.diff(u, axis=0)).max(initial=0.0) / traj.h if u.size else 0.0
    return RunStats(
        float(traj.time[active[0]]) if active.size else None,
        float(np.abs(u).max(initial=0.0)),
        float(w.min()),
        float(w.max()),
        float(slope),
    )


def execute(exp: Experiment) -> tuple[Trajectory, dict]:
    """Simulate an experiment and run its planned checks."""
    if exp.uncertainty is None:
        traj = simulate(exp.scenario)
    else:
        traj = simulate_with_uncertainty(exp.scenario, exp.uncertainty)
    plan = exp.checks
    reports = verify(traj, plan.names, delta=plan.delta, zero_tol=plan.zero_tol,
                     convergence_tol=plan.convergence_tol, invariance_tol=plan.invariance_tol)
    return traj, reports


def report_json(exp: Experiment, traj: Trajectory, reports: dict) -> str:
    body = json.loads(format_reports(reports))
    doc = {
        "scenario": exp.name,
        "checks": {k: v for k, v in body.items() if k != "all_passed"},
        "all_passed": body["all_passed"],
        "summary": run_stats(traj, exp.checks.zero_tol).row(),
        "robust_delta": exp.checks.delta if exp.uncertainty is not None else None,
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def output_dir(flag: str | os.PathLike | None, exp_output: dict, base_dir: Path | None) -> Path:
    """``--out`` beats the scenario's ``output.dir``, which beats ``$FREQGUARD_OUT`` and the cwd."""
    if flag is not None:
        return Path(flag)
    if exp_output.get("dir"):
        d = Path(exp_output["dir"])
        return d if d.is_absolute() or base_dir is None else base_dir / d
    return Path(os.environ.get(OUT_ENV, "."))


def write_run(exp: Experiment, traj: Trajectory, reports: dict, out: Path) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    tpath = out / exp.output.get("trajectory", f"{exp.name}.csv")
    rpath = out / exp.output.get("report", f"{exp.name}.report.json")
    write_trajectory(traj, tpath)
    rpath.write_text(report_json(exp, traj, reports))
    return tpath, rpath


# --- sweeps -----------------------------------------------------------------

SWEEP_PARAMS = ("gamma",)


def _sweep_one(args):
    sf, value, case, out = args
    exp = build(sf.with_gamma(value), case_override=case)
    exp.name = f"{exp.name}-gamma-{value:g}"
    traj, reports = execute(exp)
    if out is not None:
        write_run(exp, traj, reports, Path(out))
    return value, run_stats(traj, exp.checks.zero_tol), all(r.passed for r in reports.values())


def sweep(sf: ScenarioFile, param: str, values, *, case_override=None, out: Path | None = None,
          workers: int | None = None) -> list[dict]:
    """One run per value, fanned out over worker processes; rows in input order.

    Raises:
        ValueError: for an unsupported parameter or a non-linear class-K setup.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {param!r}; supported: {', '.join(SWEEP_PARAMS)}")
    ctrl = sf.controller or {}
    if ctrl.get("class_k", "linear") != "linear":
        raise ValueError("gamma sweeps need the linear class-K family")
    values = [float(v) for v in values]
    if not values or not all(math.isfinite(v) and v > 0 for v in values):
        raise ValueError("gamma values must be positive numbers")
    # validate once up front so input errors surface before any worker starts
    build(sf.with_gamma(values[0]), case_override=case_override)
    jobs = [(sf, v, case_override, None if out is None else str(out)) for v in values]
    if len(jobs) == 1 or workers == 1:
        results = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers or min(len(jobs), os.cpu_count() or 1)) as pool:
            results = list(pool.map(_sweep_one, jobs))
    return [{param: v, **stats.row(), "checks_passed": ok} for v, stats, ok in results]


SWEEP_COLUMNS = ("activation_time", "peak_abs_u", "min_frequency_hz", "max_frequency_hz",
                 "max_input_slope", "checks_passed")


def format_table(rows: list[dict], param: str) -> str:
    cols = (param,) + SWEEP_COLUMNS
    lines = ["\t".join(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            cells.append("-" if v is None else (str(v) if isinstance(v, bool) else f"{v:.6g}"))
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
