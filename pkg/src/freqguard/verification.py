"""Checks of the closed-loop guarantees on recorded trajectories.

Every check reads only the :class:`~freqguard.trajectory.Trajectory` (which
an exported file fully reconstructs); nothing here re-simulates.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .controller import EQ_TOL, FrequencyBand, VectorController
from .dynamics import LINEAR, angle_scale, energy
from .trajectory import Trajectory


@dataclass
class GuaranteeReport:
    """Verdict of one check; a failing report always carries a witness."""

    check: str
    passed: bool
    witness: dict | None = None
    margins: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and self.witness is None:
            raise ValueError(f"{self.check}: failing report without witness")

    def __bool__(self):
        return self.passed

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "passed": self.passed,
            "witness": self.witness,
            "margins": self.margins,
            "details": self.details,
        }


def _f(x):
    """JSON-friendly float (inf/nan become strings)."""
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _bands(traj: Trajectory, bands: Mapping[int, FrequencyBand] | None) -> dict[int, FrequencyBand]:
    if bands is not None:
        return dict(bands)
    if traj.controller is None:
        return {}
    return {i: c.band for i, c in traj.controller.buses.items()}


def default_tolerance(traj: Trajectory) -> float:
    """Sampling wiggle allowance ``10 h^2`` for monotonicity checks."""
    return 10.0 * traj.h ** 2


# --- guarantee checks ---------------------------------------------------------

def check_invariance(traj: Trajectory, bands: Mapping[int, FrequencyBand] | None = None,
                     delta: float = 0.0, tol: float = 0.0) -> GuaranteeReport:
    """Buses starting inside ``[lo - delta, hi + delta]`` must stay there at every grid point."""
    bands = _bands(traj, bands)
    margins, checked, witness = {}, [], None
    for bus, band in bands.items():
        w = traj.omega[:, bus]
        lo, hi = band.lower - delta, band.upper + delta
        if not lo <= w[0] <= hi:
            continue
        checked.append(bus + 1)
        room = np.minimum(hi - w, w - lo)
        margins[str(bus + 1)] = _f(room.min())
        bad = np.flatnonzero(room < -tol)
        if bad.size and witness is None:
            k = int(bad[0])
            witness = {"bus": bus + 1, "step": k, "time": _f(traj.time[k]), "omega": _f(w[k]),
                       "bound": _f(hi if w[k] > hi else lo)}
    return GuaranteeReport("invariance", witness is None, witness, margins,
                           {"delta": delta, "tol": tol, "buses": checked})


def check_finite_deactivation(traj: Trajectory, zero_tol: float = 1e-6) -> GuaranteeReport:
    """Find the first time after which every input stays within ``zero_tol`` of zero."""
    T = traj.horizon
    if traj.u.shape[1] == 0:
        return GuaranteeReport("finite_deactivation", True, None, {"t0": 0.0}, {"zero_tol": zero_tol})
    active = np.max(np.abs(traj.u), axis=1) > zero_tol
    hits = np.flatnonzero(active)
    if hits.size == 0:
        t0 = 0.0
    else:
        last = int(hits[-1])
        if last + 1 >= len(traj.time):
            col = int(np.argmax(np.abs(traj.u[last])))
            witness = {"step": last, "time": _f(traj.time[last]), "bus": traj.controlled[col] + 1,
                       "u": _f(traj.u[last, col]), "reason": "input still active at horizon"}
            return GuaranteeReport("finite_deactivation", False, witness, {"t0": None},
                                   {"zero_tol": zero_tol, "horizon": T})
        t0 = float(traj.time[last + 1])
    first = float(traj.time[hits[0]]) if hits.size else None
    return GuaranteeReport("finite_deactivation", t0 < T, None if t0 < T else {"t0": t0},
                           {"t0": t0, "time_to_horizon": _f(T - t0)},
                           {"zero_tol": zero_tol, "horizon": T, "first_active": first})


def check_attractivity(traj: Trajectory, bands: Mapping[int, FrequencyBand] | None = None,
                       start_time: float | None = None, tol: float | None = None,
                       containment_tol: float = 0.0) -> GuaranteeReport:
    """Buses outside their band at ``start_time`` must enter in finite time, approach
    monotonically (band distance non-increasing to ``tol``) and stay inside afterwards.

    ``start_time`` defaults to the controller activation time.
    """
    bands = _bands(traj, bands)
    tol = default_tolerance(traj) if tol is None else tol
    if start_time is None:
        start_time = traj.controller.activation_time if traj.controller is not None else 0.0
    s = int(np.searchsorted(traj.time, start_time - 0.5 * traj.h))
    entries, margins, witness = {}, {}, None
    for bus, band in bands.items():
        w = traj.omega[s:, bus]
        d = band.distance(w)
        if d[0] == 0:
            continue
        inside = np.flatnonzero(d == 0)
        if inside.size == 0:
            witness = witness or {"bus": bus + 1, "reason": "never enters band",
                                  "final_distance": _f(d[-1])}
            entries[str(bus + 1)] = None
            continue
        e = int(inside[0])
        entries[str(bus + 1)] = _f(traj.time[s + e])
        rises = np.diff(d[:e + 1])
        margins[str(bus + 1)] = _f(rises.max(initial=-math.inf))
        bad = np.flatnonzero(rises > tol)
        if bad.size and witness is None:
            k = s + int(bad[0]) + 1
            witness = {"bus": bus + 1, "step": k, "time": _f(traj.time[k]),
                       "reason": "band distance increased", "increase": _f(rises[bad[0]])}
        after = np.flatnonzero(d[e:] > containment_tol)
        if after.size and witness is None:
            k = s + e + int(after[0])
            witness = {"bus": bus + 1, "step": k, "time": _f(traj.time[k]),
                       "reason": "left band after entry", "omega": _f(traj.omega[k, bus])}
    return GuaranteeReport("attractivity", witness is None, witness, margins,
                           {"entry_times": entries, "tol": tol, "start_time": start_time})


def check_convergence(traj: Trajectory, tol: float = 1e-4, equilibrium=None) -> GuaranteeReport:
    """Final state within ``tol`` of the equilibrium and a shrinking error envelope
    over the last quarter of the horizon (four chunk maxima, non-increasing)."""
    eq = equilibrium or traj.equilibrium
    err = np.maximum(np.max(np.abs(traj.lam - eq.lam_inf), axis=1, initial=0.0),
                     np.max(np.abs(traj.omega - eq.omega_inf), axis=1))
    final = float(err[-1])
    tail = err[int(0.75 * (len(err) - 1)):]
    chunks = [c.max() for c in np.array_split(tail, 4) if c.size]
    grows = [b - a for a, b in zip(chunks, chunks[1:])]
    shrinking = all(g <= 1e-12 for g in grows)
    witness = None
    if final > tol:
        witness = {"reason": "final error above tolerance", "error": _f(final)}
    elif not shrinking:
        witness = {"reason": "error envelope grows in last quarter", "chunk_maxima": [_f(c) for c in chunks]}
    return GuaranteeReport("convergence", witness is None, witness,
                           {"final_error": _f(final), "tol_minus_error": _f(tol - final)},
                           {"tol": tol, "chunk_maxima": [_f(c) for c in chunks]})


def check_energy_monotone(traj: Trajectory, tol: float | None = None,
                          start_time: float | None = None) -> GuaranteeReport:
    """Energy must be non-increasing between grid points once injections are constant."""
    tol = default_tolerance(traj) if tol is None else tol
    start = traj.settle_time if start_time is None else start_time
    s = int(np.searchsorted(traj.time, start - 0.5 * traj.h))
    V = traj.energy[s:]
    rises = np.diff(V)
    worst = float(rises.max(initial=-math.inf))
    bad = np.flatnonzero(rises > tol)
    witness = None
    if bad.size:
        k = s + int(bad[0]) + 1
        witness = {"step": k, "time": _f(traj.time[k]), "increase": _f(rises[bad[0]])}
    return GuaranteeReport("energy_monotone", witness is None, witness, {"max_increase": _f(worst)},
                           {"tol": tol, "start_time": start})


def audit_constraints(traj: Trajectory, omega_inf: float | None = None, tol: float = EQ_TOL,
                      boundary_band: float = 1e-6, replay: bool | None = None) -> GuaranteeReport:
    """Replay the stability, class-K and boundary constraints at every grid point.

    Families: ``stability`` ``(w - w_inf) u <= 0`` (and ``u = 0`` at ``w = w_inf``);
    ``class_k`` the class-K inequality inside the activation zones; ``boundary``
    the Nagumo condition within ``boundary_band`` of a band edge (allowing the
    class-K continuity term ``L * band / (edge - threshold - band)``); and
    ``control_law`` the recorded input against the law recomputed from the
    recorded ``(omega, q)``.

    The class-K and boundary families only apply while the controller is
    switched on, and are skipped together with the replay for runs with
    measurement errors, where the controller acts on estimates of ``q``.
    """
    cfg = traj.controller
    w_inf = traj.equilibrium.omega_inf if omega_inf is None else omega_inf
    if replay is None:
        replay = not traj.extra.get("uncertain", False)
    if cfg is None or not cfg.buses:
        return GuaranteeReport("constraints", True, None, {}, {"note": "no controller"})
    worst = {"stability": -math.inf, "class_k": -math.inf, "boundary": -math.inf, "control_law": -math.inf}
    witness = None
    nominal = not traj.extra.get("uncertain", False)
    live = (traj.time >= cfg.activation_time) & cfg.enabled & nominal

    def flag(family, col, k, slack):
        nonlocal witness
        if witness is None:
            bus = traj.controlled[col]
            witness = {"family": family, "bus": bus + 1, "step": int(k), "time": _f(traj.time[k]),
                       "slack": _f(slack), "omega": _f(traj.omega[k, bus]), "u": _f(traj.u[k, col]),
                       "q": _f(traj.q[k, col])}

    for col, (bus, ctrl) in enumerate(cfg.buses.items()):
        w = traj.omega[:, bus]
        u = traj.u[:, col]
        q = traj.q[:, col]
        band = ctrl.band

        s5 = (w - w_inf) * u
        at_eq = np.abs(w - w_inf) <= tol
        s5 = np.where(at_eq, np.abs(u), s5)
        worst["stability"] = max(worst["stability"], float(s5.max()))
        bad = np.flatnonzero(s5 > tol)
        if bad.size:
            flag("stability", col, bad[0], s5[bad[0]])

        try:
            up = live & (w > band.upper_thr) & (w <= band.upper)
            dn = live & (w >= band.lower) & (w < band.lower_thr)
            s8 = np.full_like(w, -math.inf)
            s8[up] = (w[up] - band.upper_thr) * (u[up] - q[up]) + ctrl.alpha_upper(w[up] - band.upper)
            s8[dn] = (band.lower_thr - w[dn]) * (q[dn] - u[dn]) + ctrl.alpha_lower(band.lower - w[dn])
        except NotImplementedError:
            s8 = np.full_like(w, -math.inf)
        worst["class_k"] = max(worst["class_k"], float(s8.max()))
        bad = np.flatnonzero(s8 > tol)
        if bad.size:
            flag("class_k", col, bad[0], s8[bad[0]])

        near_up = live & (np.abs(w - band.upper) <= boundary_band)
        near_dn = live & (np.abs(w - band.lower) <= boundary_band)
        s7 = np.full_like(w, -math.inf)
        allow_up = ctrl.alpha_upper.lipschitz * boundary_band / (band.upper - band.upper_thr - boundary_band)
        allow_dn = ctrl.alpha_lower.lipschitz * boundary_band / (band.lower_thr - band.lower - boundary_band)
        s7[near_up] = (u[near_up] - q[near_up]) - allow_up
        s7[near_dn] = (q[near_dn] - u[near_dn]) - allow_dn
        worst["boundary"] = max(worst["boundary"], float(s7.max()))
        bad = np.flatnonzero(s7 > tol)
        if bad.size:
            flag("boundary", col, bad[0], s7[bad[0]])

    if replay:
        law = VectorController(cfg)
        expect = law.batch(traj.omega[:, list(cfg.bus_ids)], traj.q)
        gated = (traj.time < cfg.activation_time) | (not cfg.enabled)
        expect[gated] = 0.0
        dev = np.abs(traj.u - expect) - tol * np.maximum(1.0, np.abs(expect))
        worst["control_law"] = float(dev.max(initial=-math.inf))
        if dev.size and dev.max() > 0:
            k, col = np.unravel_index(int(np.argmax(dev > 0)), dev.shape)
            flag("control_law", col, k, dev[k, col])

    margins = {k: _f(v) for k, v in worst.items()}
    return GuaranteeReport("constraints", witness is None, witness, margins,
                           {"tol": tol, "boundary_band": boundary_band, "omega_inf": w_inf,
                            "replay": replay, "nominal": nominal})


def check_consistency(traj: Trajectory, rtol: float = 1e-9) -> GuaranteeReport:
    """Recorded ``q`` and energy must match values recomputed from recorded states."""
    net = traj.network
    if traj.mode == LINEAR:
        flow = traj.lam @ net.flow_matrix.T
    else:
        flow = np.sin(traj.lam) @ net.flow_matrix.T
    ids = list(traj.controlled)
    q = net.damping[ids] * traj.omega[:, ids] + flow[:, ids] - traj.p[:, ids]
    V = energy(net, traj.lam, traj.omega, traj.equilibrium, traj.mode, angle_scale(traj.frequency_unit))
    dq = np.abs(q - traj.q) - rtol * np.maximum(1.0, np.abs(q)) if ids else np.zeros((len(V), 0))
    dV = np.abs(V - traj.energy) - rtol * np.maximum(1.0, np.abs(V))
    witness = None
    if dq.size and dq.max() > 0:
        k, c = np.unravel_index(int(np.argmax(dq)), dq.shape)
        witness = {"field": "q", "bus": ids[c] + 1, "step": int(k), "time": _f(traj.time[k])}
    elif dV.max() > 0:
        k = int(np.argmax(dV))
        witness = {"field": "energy", "step": k, "time": _f(traj.time[k])}
    return GuaranteeReport("consistency", witness is None, witness,
                           {"q": _f(dq.max(initial=-math.inf)), "energy": _f(dV.max())}, {"rtol": rtol})


CHECKS = ("invariance", "finite_deactivation", "attractivity", "convergence",
          "energy_monotone", "constraints", "consistency")


def verify(traj: Trajectory, checks=CHECKS, *, delta: float = 0.0, zero_tol: float = 1e-6,
           convergence_tol: float = 1e-4, energy_tol: float | None = None,
           attractivity_tol: float | None = None,
           invariance_tol: float = 0.0) -> dict[str, GuaranteeReport]:
    """Run the requested checks; returns reports keyed by check name."""
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}; choose from {CHECKS}")
    out = {}
    for name in checks:
        if name == "invariance":
            out[name] = check_invariance(traj, delta=delta, tol=invariance_tol)
        elif name == "finite_deactivation":
            out[name] = check_finite_deactivation(traj, zero_tol)
        elif name == "attractivity":
            out[name] = check_attractivity(traj, tol=attractivity_tol)
        elif name == "convergence":
            out[name] = check_convergence(traj, convergence_tol)
        elif name == "energy_monotone":
            out[name] = check_energy_monotone(traj, energy_tol)
        elif name == "constraints":
            out[name] = audit_constraints(traj)
        elif name == "consistency":
            out[name] = check_consistency(traj)
    return out


def format_reports(reports: Mapping[str, GuaranteeReport]) -> str:
    """Stable, machine-diffable JSON rendering."""
    body = {name: r.to_dict() for name, r in reports.items()}
    body["all_passed"] = all(r.passed for r in reports.values())
    return json.dumps(body, indent=2, sort_keys=True, default=_f) + "\n"
