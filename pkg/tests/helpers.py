"""Fixtures and random scenario generators shared by the test modules."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from freqguard.controller import (BusController, ControllerConfig, ErrorBounds, FrequencyBand,
                                  HeldRandomError, SinusoidError, UncertaintyModel,
                                  smallest_feasible_delta)
from freqguard.dynamics import SystemState
from freqguard.injections import Constant, InjectionProfile, PiecewiseConstant, SinusoidalWindow
from freqguard.network import PowerNetwork
from freqguard.simulation import Scenario

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())
HAND = FROZEN["hand"]
REF = FROZEN["trajectories"]

BAND = FrequencyBand(-0.2, -0.1, 0.1, 0.2)

# acceptance verdicts keyed by criterion number: (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
    return bool(ok)


def two_bus(controlled=(0,)) -> PowerNetwork:
    return PowerNetwork.from_edges(2, [(0, 1, 1.0)], 1.0, 1.0, controlled=controlled)


def path3(b=(2.0, 3.0)) -> PowerNetwork:
    return PowerNetwork.from_edges(3, [(0, 1, b[0]), (1, 2, b[1])], 1.0, 1.0)


def two_bus_scenario(controlled=True, T=60.0, h=1e-3, omega0=(0.0, 0.0), gamma=2.0,
                     step=True) -> Scenario:
    """Bus 1 draws 1 pu until t = 5 s (if ``step``), then the disturbance vanishes."""
    net = two_bus()
    first = PiecewiseConstant(((0.0, -1.0), (5.0, 0.0))) if step else Constant(0.0)
    inj = InjectionProfile([first, Constant(0.0)])
    cfg = ControllerConfig({0: BusController.linear(BAND, gamma)}) if controlled else None
    return Scenario(net, inj, SystemState(np.array(omega0, dtype=float), lam=np.zeros(1)), cfg,
                    h=h, T=T)


def random_network(rng: np.random.Generator, n: int, extra_edges: int | None = None,
                   inertia=(0.2, 1.0), damping=(1.0, 2.0), susceptance=(0.5, 3.0),
                   controlled=()) -> PowerNetwork:
    """Random connected network: a random spanning tree plus extra chords."""
    edges = {}
    order = rng.permutation(n)
    for k in range(1, n):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        edges[(min(a, b), max(a, b))] = float(rng.uniform(*susceptance))
    n_extra = int(rng.integers(0, n + 1)) if extra_edges is None else extra_edges
    for _ in range(n_extra):
        a, b = (int(v) for v in rng.choice(n, size=2, replace=False))
        edges.setdefault((min(a, b), max(a, b)), float(rng.uniform(*susceptance)))
    return PowerNetwork.from_edges(n, [(a, b, s) for (a, b), s in edges.items()],
                                   rng.uniform(*inertia, size=n), rng.uniform(*damping, size=n),
                                   controlled)


def spectral_abscissa(net: PowerNetwork) -> float:
    """Slowest open-loop decay rate, ignoring the rigid rotation mode."""
    n = net.n_buses
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -net.laplacian / net.inertia[:, None]
    A[n:, n:] = -np.diag(net.damping / net.inertia)
    ev = np.linalg.eigvals(A)
    return float(ev[np.abs(ev) > 1e-9].real.max())


def _random_band(rng) -> FrequencyBand:
    hi = rng.uniform(0.15, 0.4)
    lo = -rng.uniform(0.15, 0.4)
    return FrequencyBand(lo, lo * rng.uniform(0.3, 0.7), hi * rng.uniform(0.3, 0.7), hi)


def _random_profile(rng, p_star: float, t_bar: float):
    kind = rng.integers(0, 3)
    if kind == 0:
        return Constant(p_star)
    if kind == 1:
        # steps on a 0.5 s grid ending at t_bar
        times = np.arange(0.0, t_bar + 1e-9, 0.5)
        vals = rng.uniform(-3.0, 3.0, size=len(times))
        vals[-1] = p_star
        return PiecewiseConstant(tuple(zip(times.tolist(), vals.tolist())))
    # sinusoid that vanishes at both window edges
    t_on = float(rng.choice([t for t in (0.0, 0.5, 1.0) if t < t_bar]))
    half_periods = int(rng.integers(1, 4))
    rate = half_periods * math.pi / (t_bar - t_on)
    return SinusoidalWindow(p_star, float(rng.uniform(-1.5, 1.5)) if p_star != 0 else 0.0, rate, t_on, t_bar)


def random_scenario(seed: int, *, outside: bool = False, h: float = 1e-3, tail: float = 15.0,
                    n_max: int = 10) -> Scenario:
    """Random closed-loop scenario meeting the controller's hypotheses.

    The synchronized frequency lies strictly inside every dead band and the
    injections settle by ``t_bar <= 5``. With ``outside`` at least one
    controlled bus starts outside its safe band; otherwise all start inside.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, n_max + 1))
    n_ctrl = int(rng.integers(1, n + 1))
    ctrl = sorted(int(i) for i in rng.choice(n, size=n_ctrl, replace=False))
    while True:
        net = random_network(rng, n, inertia=(0.2, 0.5), susceptance=(1.0, 4.0), controlled=ctrl)
        if spectral_abscissa(net) <= -0.8:
            break
    bands = {i: _random_band(rng) for i in ctrl}
    gammas = {i: float(rng.uniform(0.5, 5.0)) for i in ctrl}

    lo_thr = max(b.lower_thr for b in bands.values())
    hi_thr = min(b.upper_thr for b in bands.values())
    w_target = rng.uniform(0.8 * lo_thr, 0.8 * hi_thr)
    raw = rng.uniform(-1.0, 1.0, size=n)
    p_star = raw - net.damping * (raw.sum() / net.damping.sum()) + net.damping * w_target

    t_bar = float(rng.choice([1.0, 2.0, 3.0, 4.0, 5.0]))
    inj = InjectionProfile([_random_profile(rng, float(p), t_bar) for p in p_star])

    omega0 = rng.uniform(-0.1, 0.1, size=n)
    for i in ctrl:
        b = bands[i]
        omega0[i] = rng.uniform(b.lower, b.upper)
    if outside:
        for i in ctrl[: max(1, len(ctrl) // 2)]:
            b = bands[i]
            omega0[i] = (b.upper + rng.uniform(0.02, 0.3)) if rng.random() < 0.5 else (b.lower - rng.uniform(0.02, 0.3))
    theta0 = rng.uniform(-0.2, 0.2, size=n)
    lam0 = net.incidence @ theta0

    cfg = ControllerConfig({i: BusController.linear(bands[i], gammas[i]) for i in ctrl})
    T = t_bar + tail
    return Scenario(net, inj, SystemState(omega0, lam=lam0), cfg, h=h, T=T,
                    extra={"seed": seed})


def random_uncertainty(scenario: Scenario, seed: int) -> tuple[UncertaintyModel, dict[int, float]]:
    """Bounded errors satisfying the robustness assumptions, with per-bus smallest feasible margins."""
    rng = np.random.default_rng(10_000 + seed)
    cfg = scenario.controller
    ids = cfg.bus_ids
    net = scenario.network
    w_inf = float(scenario.injections.final_value.sum() / net.damping.sum())
    bounds, e_hat, deltas = {}, {}, {}
    om_b, fl_b, inj_b = [], [], []
    for i in ids:
        band = cfg.buses[i].band
        room = min(band.upper_thr - w_inf, w_inf - band.lower_thr,
                   band.upper - band.upper_thr, band.lower_thr - band.lower)
        e_w = float(rng.uniform(0.0, 0.3)) * room
        e_l = float(rng.uniform(0.0, 0.05))
        e_p = float(rng.uniform(0.0, 0.05))
        e_e = float(rng.uniform(0.0, 0.2))
        bounds[i] = ErrorBounds(e_w, e_l, e_p, e_e)
        e_hat[i] = float(net.damping[i] + rng.uniform(-e_e, e_e))
        om_b.append(e_w)
        fl_b.append(e_l)
        inj_b.append(e_p)
        d = smallest_feasible_delta(band, cfg.buses[i].alpha_upper.gamma, e_hat[i], bounds[i])
        deltas[i] = d
    k = len(ids)
    model = UncertaintyModel(
        bounds, e_hat,
        omega_error=HeldRandomError(tuple(om_b), hold=0.05, seed=seed),
        flow_error=SinusoidError(tuple(fl_b), tuple(rng.uniform(0.5, 5.0, size=k)), tuple(rng.uniform(0, 6, size=k))),
        injection_error=HeldRandomError(tuple(inj_b), hold=0.2, seed=seed + 1),
    )
    return model, deltas
