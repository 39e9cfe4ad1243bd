"""Acceptance suite: one test per numbered criterion, each recording a PASS/FAIL line.

Verdicts are printed as they are reached and again in the terminal summary.
Run alone with ``pytest tests/test_acceptance.py -s`` to see them inline.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

from freqguard.controller import (BusController, ControllerConfig, LinearClassK, VectorController,
                                  control_law, robust_margin_feasible, smallest_feasible_delta)
from freqguard.dynamics import equilibrium
from freqguard.harness import execute, run_stats, sweep
from freqguard.network import aggregate_flow, range_residual
from freqguard.presets import preset
from freqguard.scenario_io import build
from freqguard.simulation import open_loop, simulate, simulate_with_uncertainty
from freqguard.verification import (audit_constraints, check_attractivity, check_convergence,
                                    check_energy_monotone, check_finite_deactivation,
                                    check_invariance)

from helpers import (BAND, HAND, random_network, random_scenario, random_uncertainty, record,
                     two_bus_scenario)

H = 1e-3
N_NOMINAL = 100
N_OUTSIDE = 50
N_UNCERTAIN = 50


# --- criterion 1 -------------------------------------------------------------

def test_criterion_1_equilibrium():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_res = worst_rng = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 41))
        net = random_network(rng, n)
        p = rng.uniform(-3.0, 3.0, size=n)
        eq = equilibrium(net, p)
        res = aggregate_flow(net, net.incidence, eq.lam_inf) - (p - net.damping * eq.omega_inf)
        worst_res = max(worst_res, float(np.abs(res).max()))
        worst_rng = max(worst_rng, range_residual(net.incidence, eq.lam_inf))
    elapsed = time.perf_counter() - start
    ok = worst_res <= 1e-9 and worst_rng <= 1e-9 and elapsed < 10.0
    record(1, ok, f"max residual {worst_res:.2e}, max range residual {worst_rng:.2e}, {elapsed:.2f} s")
    assert ok


# --- criteria 2, 3, 5, 6 share the nominal runs --------------------------------

@pytest.fixture(scope="module")
def nominal():
    """Per-scenario verdicts for the inside-start runs; trajectories are not kept."""
    rows = []
    for seed in range(N_NOMINAL):
        sc = random_scenario(seed, h=H)
        traj = simulate(sc)
        audit = audit_constraints(traj, tol=1e-9)
        rows.append({
            "seed": seed,
            "invariance": check_invariance(traj),
            "deactivation": check_finite_deactivation(traj, zero_tol=1e-6),
            "convergence": check_convergence(traj, tol=1e-4),
            "audit": audit,
            "energy": check_energy_monotone(traj, tol=10 * H * H),
            "final": np.concatenate((traj.lam[-1], traj.omega[-1])),
        })
    return rows


def _failures(rows, key):
    return [r["seed"] for r in rows if not r[key].passed]


def test_criterion_2_invariance(nominal):
    bad = _failures(nominal, "invariance")
    worst = min(min(r["invariance"].margins.values()) for r in nominal)
    ok = record(2, not bad, f"{len(nominal)} runs, failures {bad}, smallest band margin {worst:.3g}")
    assert ok


def test_criterion_3_finite_deactivation(nominal):
    bad = _failures(nominal, "deactivation") + _failures(nominal, "convergence")
    t0 = max(r["deactivation"].margins["t0"] for r in nominal)
    err = max(r["convergence"].margins["final_error"] for r in nominal)
    # the closed-loop limit equals an independently simulated open-loop limit
    diff = 0.0
    for r in nominal[:10]:
        ol = simulate(open_loop(random_scenario(r["seed"], h=H)))
        diff = max(diff, float(np.abs(np.concatenate((ol.lam[-1], ol.omega[-1])) - r["final"]).max()))
    ok = not bad and diff <= 1e-4
    record(3, ok, f"failures {sorted(set(bad))}, latest t0 {t0:.3f} s, "
                  f"max final error {err:.2e}, open-loop final-state gap {diff:.2e}")
    assert ok


def test_criterion_5_stability_constraints(nominal):
    bad = _failures(nominal, "audit")
    stab = max(float(r["audit"].margins["stability"]) for r in nominal)
    cls = max(float(r["audit"].margins["class_k"]) for r in nominal)
    ok = record(5, not bad, f"failures {bad}, worst stability slack {stab:.2e}, worst class-K slack {cls:.2e}")
    assert ok


def test_criterion_6_energy(nominal):
    bad = _failures(nominal, "energy")
    rise = max(r["energy"].margins["max_increase"] for r in nominal)
    # open-loop energy rate on the 2-bus fixture against -sum E (w - w_inf)^2
    traj = simulate(two_bus_scenario(controlled=False, T=20.0, h=H))
    V, k0 = traj.energy, int(round(traj.settle_time / H)) + 2
    rate = (-V[k0 + 2:] + 8 * V[k0 + 1:-1] - 8 * V[k0 - 1:-3] + V[k0 - 2:-4]) / (12 * H)
    w = traj.omega[k0:-2]
    expect = -(traj.network.damping * (w - traj.equilibrium.omega_inf) ** 2).sum(axis=1)
    gap = float(np.abs(rate - expect).max())
    ok = not bad and gap <= 1e-6
    record(6, ok, f"failures {bad}, largest energy rise {rise:.2e}, 2-bus rate mismatch {gap:.2e}")
    assert ok


# --- criterion 4 ---------------------------------------------------------------

def test_criterion_4_attractivity():
    bad, latest = [], 0.0
    for seed in range(N_OUTSIDE):
        traj = simulate(random_scenario(500 + seed, outside=True, h=H))
        rep = check_attractivity(traj, tol=10 * H * H)
        entries = rep.details["entry_times"]
        if not rep.passed or not entries or any(t is None for t in entries.values()):
            bad.append(500 + seed)
        else:
            latest = max(latest, max(entries.values()))
    ok = record(4, not bad, f"{N_OUTSIDE} runs, failures {bad}, latest entry {latest:.3f} s")
    assert ok


# --- criterion 7 ---------------------------------------------------------------

@pytest.fixture(scope="module")
def uncertain():
    """Per-bus containment under the published margin and the two-sided margin."""
    rows = []
    for s in range(N_UNCERTAIN):
        sc = random_scenario(1000 + s, h=H)
        unc, deltas = random_uncertainty(sc, s)
        traj = simulate_with_uncertainty(sc, unc)
        for i, d in deltas.items():
            bc = sc.controller.buses[i]
            g, e_hat, b = bc.alpha_upper.gamma, unc.damping_hat[i], unc.bounds[i]
            d2 = smallest_feasible_delta(bc.band, g, e_hat, b, two_sided=True)
            w = traj.omega[:, i]

            def room(delta):
                return float(min(w.min() - (bc.band.lower - delta), bc.band.upper + delta - w.max()))
            rows.append({
                "seed": 1000 + s, "bus": i, "delta": d, "delta2": d2, "omega_bound": b.omega,
                "feasible": robust_margin_feasible(bc.band, g, e_hat, b, d)[0],
                "feasible2": robust_margin_feasible(bc.band, g, e_hat, b, d2, two_sided=True)[0],
                "room": room(d), "room2": room(d2),
            })
    return rows


@pytest.mark.xfail(strict=True, reason=(
    "the published robust inequality only evaluates a frequency error reading outward; "
    "an error biased toward the dead band breaches the inflated band by about the error bound "
    "when the computed margin is smaller than that bound (see README)"))
def test_criterion_7_robustness(uncertain):
    breaches = [r for r in uncertain if r["room"] < 0]
    mismatched = [r for r in uncertain if r["feasible"] != (r["room"] >= 0)]
    worst = min(r["room"] for r in uncertain)
    runs = sorted({r["seed"] for r in breaches})
    ratio = max((-r["room"] / r["omega_bound"] for r in breaches if r["omega_bound"] > 0), default=0.0)
    ok = record(7, not breaches and not mismatched,
                f"{N_UNCERTAIN} runs, {len(runs)} runs breach [lo - delta, hi + delta], "
                f"{len(mismatched)} slack/containment mismatches, worst excursion {-worst:.3g}, "
                f"largest excursion / frequency error bound {ratio:.2f}")
    assert ok


def test_criterion_7_two_sided_margin_contains(uncertain):
    """Same runs with the frequency error also evaluated toward the dead band."""
    assert all(r["delta2"] is not None and r["feasible2"] for r in uncertain)
    bad = [(r["seed"], r["bus"]) for r in uncertain if r["room2"] < 0]
    worst = min(r["room2"] for r in uncertain)
    print(f"criterion 7 (two-sided margin): {len(bad)} breaches, smallest room {worst:.3g}")
    assert not bad


# --- criterion 8 ---------------------------------------------------------------

def test_criterion_8_controller_function():
    k = LinearClassK(2.0)
    cases = [(0.0, 0.0), (0.15, 0.5), (0.15, -3.0), (-0.15, 3.0)]
    got = [control_law(w, q, BAND, k, k) for w, q in cases]
    hand_err = max(abs(a - b) for a, b in zip(got, HAND["control_examples"]))

    vec = VectorController(ControllerConfig({0: BusController.linear(BAND, 2.0)}))
    gap = BAND.upper - BAND.upper_thr
    worst_ratio, mismatch = 0.0, 0.0
    for thr, sign in ((BAND.upper_thr, 1.0), (BAND.lower_thr, -1.0)):
        w = np.linspace(thr - 1e-3, thr + 1e-3, 10_000)
        spacing = w[1] - w[0]
        # q pushing toward the band edge; large values move the kink inside the window
        for q_abs in (0.0, 1.0, 10.0, 300.0, 1000.0):
            q = -sign * q_abs
            u = np.array([control_law(float(x), q, BAND, k, k) for x in w])
            mismatch = max(mismatch, float(np.abs(vec.batch(w[:, None], np.full((w.size, 1), q))[:, 0] - u).max()))
            # on the active part |du/dw| = g gap / s^2 with s >= g gap / (g + |q|)
            lip = (2.0 + q_abs) ** 2 / (2.0 * gap)
            jumps = np.abs(np.diff(u))
            worst_ratio = max(worst_ratio, float(jumps.max() / (lip * spacing)))
    ok = hand_err <= 1e-12 and worst_ratio <= 1.0 + 1e-9 and mismatch == 0.0
    record(8, ok, f"hand error {hand_err:.1e}, max jump / (Lipschitz bound x spacing) {worst_ratio:.3f}")
    assert ok


# --- criterion 9 ---------------------------------------------------------------

def test_criterion_9_ieee39_presets():
    main = build(preset("ieee39-main"))
    ctrl = main.scenario.controller
    cols = list(ctrl.bus_ids)
    lower = min(ctrl.buses[i].band.lower for i in cols)

    ol_traj, _ = execute(build(preset("ieee39-main"), open_loop=True))
    dips_open = float(ol_traj.omega[:, cols].min()) < lower

    cl_traj, _ = execute(main)
    holds_closed = float(cl_traj.omega[:, cols].min()) >= lower

    delayed, _ = execute(build(preset("ieee39-delayed")))
    rep = check_attractivity(delayed, start_time=10.0, tol=10 * H * H)
    entries = rep.details["entry_times"]
    recovers = rep.passed and bool(entries) and all(t is not None for t in entries.values())

    sf = preset("gamma-sweep")
    rows = sweep(sf, "gamma", sf.sweep["values"], workers=1)
    by_gamma = {r["gamma"]: r for r in rows}
    earlier = by_gamma[0.01]["activation_time"] < by_gamma[100.0]["activation_time"]
    steeper = by_gamma[0.01]["max_input_slope"] < by_gamma[100.0]["max_input_slope"]

    base = 60.0
    ok = dips_open and holds_closed and recovers and earlier
    record(9, ok, f"open-loop min {base + ol_traj.omega[:, cols].min():.3f} Hz, "
                  f"controlled min {base + cl_traj.omega[:, cols].min():.4f} Hz, "
                  f"delayed re-entry {sorted(entries.values())}, "
                  f"activation at gamma 0.01 / 100: {by_gamma[0.01]['activation_time']:.3f} / "
                  f"{by_gamma[100.0]['activation_time']:.3f} s, steeper input at 100: {steeper}")
    assert ok
    assert run_stats(cl_traj).min_frequency_hz >= 59.8


# --- criterion 10 --------------------------------------------------------------

def test_criterion_10_integrator_order():
    def final(h):
        sc = two_bus_scenario(controlled=False, T=2.0, h=h, omega0=(0.3, -0.1), step=False)
        tr = simulate(sc)
        return np.concatenate((tr.lam[-1], tr.omega[-1]))

    hs = (0.04, 0.02, 0.01, 0.005)
    x = [final(h) for h in hs]
    diffs = [float(np.abs(a - b).max()) for a, b in zip(x, x[1:])]
    ratios = [a / b for a, b in zip(diffs, diffs[1:])]
    ok = all(4.0 <= r <= 64.0 for r in ratios)
    record(10, ok, "step-halving ratios " + ", ".join(f"{r:.2f}" for r in ratios) + " (ideal 16)")
    assert ok
