"""Fixed-step RK4 integration of the closed loop with per-step diagnostics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import ControllerConfig, UncertaintyModel, VectorController
from .dynamics import (FREQUENCY_UNITS, LINEAR, MODES, NONLINEAR, SystemState, angle_scale, energy,
                       equilibrium)
from .injections import InjectionProfile
from .network import PowerNetwork, range_residual, validate
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

RANGE_TOL = 1e-9


class ScenarioError(ValueError):
    pass


class SimulationError(RuntimeError):
    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"{message} at step {step}")


@dataclass
class Scenario:
    """Everything needed for one closed-loop run.

    ``controller=None`` (or ``enabled=False``) gives the open loop. Frequencies
    and all band parameters share ``frequency_unit``; injections, damping and
    susceptances are per-unit.
    """

    network: PowerNetwork
    injections: InjectionProfile
    initial: SystemState
    controller: ControllerConfig | None = None
    mode: str = LINEAR
    h: float = 1e-3
    T: float = 30.0
    frequency_unit: str = "rad/s"
    base_hz: float = 60.0
    zero_order_hold: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.h))

    def problems(self) -> list[str]:
        """Invariant violations; empty iff the scenario can be simulated."""
        net = self.network
        out = [f"network: {p}" for p in validate(net)]
        if out:
            return out
        if not self.h > 0:
            out.append("simulation.h must be positive")
        if self.mode not in MODES:
            out.append(f"simulation.mode must be one of {MODES}")
        if self.frequency_unit not in FREQUENCY_UNITS:
            out.append("units.frequency must be 'rad/s' or 'Hz'")
        if self.injections.n_buses != net.n_buses:
            out.append(f"injections: expected {net.n_buses} buses, got {self.injections.n_buses}")
        elif not self.T > self.injections.settle_time:
            out.append(f"simulation.T={self.T} must exceed the injection settle time {self.injections.settle_time}")
        if self.h > 0 and abs(self.n_steps * self.h - self.T) > 1e-9 * max(1.0, self.T):
            out.append("simulation.T must be an integer multiple of h")
        if self.h > 0 and self.injections.n_buses == net.n_buses:
            off = [t for t in self.injections.jump_times()
                   if abs(round(t / self.h) * self.h - t) > 1e-9 * max(1.0, t)]
            if off:
                out.append(f"injection jumps at t={off} must lie on the time grid")
        if self.controller is not None:
            stray = set(self.controller.bus_ids) - set(net.controlled)
            if stray:
                out.append(f"controller: buses {sorted(b + 1 for b in stray)} are not in the controlled set")
            t_act = self.controller.activation_time
            if self.h > 0 and abs(round(t_act / self.h) * self.h - t_act) > 1e-9 * max(1.0, t_act):
                out.append("controller.activation_time must lie on the time grid")
        init = self.initial
        if np.shape(init.omega) != (net.n_buses,):
            out.append("initial omega has wrong length")
        if self.mode == LINEAR:
            if init.lam is None:
                out.append("linear mode needs an initial lam")
            elif np.shape(init.lam) != (net.n_lines,):
                out.append("initial lam has wrong length")
            elif range_residual(net.incidence, np.asarray(init.lam, dtype=float)) > RANGE_TOL:
                out.append("initial lam is not in range(D)")
        elif self.mode == NONLINEAR:
            if init.theta is None:
                out.append("nonlinear mode needs an initial theta")
            elif np.shape(init.theta) != (net.n_buses,):
                out.append("initial theta has wrong length")
        return out

    def check(self) -> None:
        problems = self.problems()
        if problems:
            raise ScenarioError("; ".join(problems))


def rk4_step(f, t: float, x: np.ndarray, h: float) -> np.ndarray:
    """One classic fourth-order Runge-Kutta step of ``x' = f(t, x)``."""
    k1 = f(t, x)
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
    k4 = f(t + h, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(f, x0: np.ndarray, h: float, n_steps: int, t0: float = 0.0) -> np.ndarray:
    """Plain fixed-step RK4; returns the ``(n_steps + 1, dim)`` state history."""
    out = np.empty((n_steps + 1, x0.size))
    out[0] = x0
    x = np.array(x0, dtype=float)
    for k in range(n_steps):
        x = rk4_step(f, t0 + k * h, x, h)
        out[k + 1] = x
    return out


class _ClosedLoop:
    """Right-hand side of the closed loop on the stacked state ``(angles, omega)``."""

    def __init__(self, scenario: Scenario, uncertainty: UncertaintyModel | None):
        net = scenario.network
        self.net = net
        self.mode = scenario.mode
        self.inj = scenario.injections
        self.m = net.n_lines if scenario.mode == LINEAR else net.n_buses
        self.D = net.incidence
        self.F = net.flow_matrix
        self.E = net.damping
        self.M = net.inertia
        cfg = scenario.controller
        self.active = cfg is not None and cfg.enabled and len(cfg.bus_ids) > 0
        self.t_act = cfg.activation_time if cfg is not None else 0.0
        self.idx = np.array(cfg.bus_ids if cfg is not None else (), dtype=int)
        self.law = VectorController(cfg) if self.active else None
        self.E_c = self.E[self.idx]
        self.unc = uncertainty
        if uncertainty is not None:
            self.E_hat = np.array([uncertainty.damping_hat[i] for i in cfg.bus_ids])
        self.zoh = scenario.zero_order_hold
        self.held_u = None
        self.kappa = angle_scale(scenario.frequency_unit)
        # x' = A x + B (p + u) with the angle rows of B zero
        n, m = net.n_buses, self.m
        self.Minv = 1.0 / self.M
        self.Minv_c = self.Minv[self.idx]
        self.out_idx = m + self.idx
        if self.mode == LINEAR:
            A = np.zeros((m + n, m + n))
            A[:m, m:] = self.kappa * self.D
            A[m:, :m] = -self.F * self.Minv[:, None]
            A[m:, m:] = np.diag(-self.E * self.Minv)
            self.A = A
        self.F_c = self.F[self.idx]

    def flows(self, ang):
        if self.mode == LINEAR:
            return self.F @ ang
        return self.F @ np.sin(self.D @ ang)

    def inputs(self, t, w_c, f_c, p_c):
        """Return ``(u_c, q_c)`` from controlled-bus values; ``q_c`` is the true value."""
        q_c = self.E_c * w_c + f_c - p_c
        if not self.active or t < self.t_act:
            return np.zeros(self.idx.size), q_c
        if self.unc is None:
            return self.law(w_c, q_c), q_c
        unc = self.unc
        w_hat = w_c + unc.omega_error(t, w_c)
        f_hat = f_c + unc.flow_error(t, f_c)
        p_hat = p_c + unc.injection_error(t, p_c)
        q_hat = self.E_hat * w_hat + f_hat - p_hat
        return self.law(w_hat, q_hat), q_c

    def controlled_flow(self, ang):
        if self.mode == LINEAR:
            return self.F_c @ ang
        return self.F_c @ np.sin(self.D @ ang)

    def step(self, t, t_next, x):
        """One RK4 step to ``t_next``; the end stage sees left limits of jumps there."""
        h = t_next - t
        k1 = self(t, x)
        k2 = self(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = self(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = self(t_next, x + h * k3, left=True)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def __call__(self, t, x, left=False):
        m = self.m
        p = self.inj.eval(t, left)
        on = self.active and (t > self.t_act or (t == self.t_act and not left))
        if self.mode == LINEAR:
            out = self.A @ x
            out[m:] += p * self.Minv
            f_c = None
        else:
            omega = x[m:]
            flow = self.F @ np.sin(self.D @ x[:m])
            out = np.empty_like(x)
            out[:m] = self.kappa * omega
            out[m:] = (-self.E * omega - flow + p) * self.Minv
            f_c = flow[self.idx]
        if self.zoh:
            out[self.out_idx] += self.held_u * self.Minv_c
        elif on:
            if f_c is None:
                f_c = self.F_c @ x[:m]
            idx = self.idx
            u_c, _ = self.inputs(t, x[self.out_idx], f_c, p[idx])
            out[self.out_idx] += u_c * self.Minv_c
        return out


def _run(scenario: Scenario, uncertainty: UncertaintyModel | None) -> Trajectory:
    scenario.check()
    net = scenario.network
    loop = _ClosedLoop(scenario, uncertainty)
    n_steps, h = scenario.n_steps, scenario.h
    init = scenario.initial
    ang0 = init.lam if scenario.mode == LINEAR else init.theta
    x = np.concatenate((np.asarray(ang0, dtype=float), np.asarray(init.omega, dtype=float)))

    c = loop.idx.size
    N = n_steps + 1
    time = np.arange(N) * h
    # put jump times exactly on the grid so stage times hit them bit for bit
    snaps = list(scenario.injections.jump_times())
    if scenario.controller is not None:
        snaps.append(scenario.controller.activation_time)
    for tj in snaps:
        k = int(round(tj / h))
        if 0 <= k < N:
            time[k] = tj
    states = np.empty((N, x.size))
    us = np.empty((N, c))
    qs = np.empty((N, c))
    ps = np.empty((N, net.n_buses))
    m = loop.m

    def record(k, t, x):
        p = scenario.injections.eval(t)
        idx = loop.idx
        u_c, q_c = loop.inputs(t, x[loop.out_idx], loop.controlled_flow(x[:m]), p[idx])
        states[k] = x
        us[k] = u_c
        qs[k] = q_c
        ps[k] = p
        return u_c

    # overflow on the way to divergence is reported below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            t = time[k]
            loop.held_u = record(k, t, x)
            x = loop.step(t, time[k + 1], x)
            if not np.all(np.isfinite(x)):
                raise SimulationError("non-finite state (divergence)", k + 1)
    record(n_steps, time[n_steps], x)

    eq = equilibrium(net, scenario.injections.final_value, scenario.mode)
    if scenario.mode == LINEAR:
        lam = states[:, :m]
        theta = None
    else:
        theta = states[:, :m]
        lam = theta @ net.incidence.T
    omega = states[:, m:]
    en = energy(net, lam, omega, eq, scenario.mode, loop.kappa)
    logger.debug("simulated %d steps (h=%g, mode=%s)", n_steps, h, scenario.mode)
    return Trajectory(time, lam, omega, us, qs, ps, en, net, scenario.controller, eq,
                      scenario.injections.settle_time, h, scenario.mode, scenario.frequency_unit,
                      scenario.base_hz, theta, dict(scenario.extra))


def simulate(scenario: Scenario) -> Trajectory:
    """Integrate the closed loop over ``[0, T]`` on a uniform grid.

    The controller is evaluated inside every RK stage (exact state feedback)
    unless ``zero_order_hold`` is set, and is gated to zero before its
    activation time.
    """
    return _run(scenario, None)


def simulate_with_uncertainty(scenario: Scenario, uncertainty: UncertaintyModel) -> Trajectory:
    """Like :func:`simulate` but the controllers see corrupted measurements and damping."""
    if scenario.controller is None:
        raise ScenarioError("uncertainty needs a controller")
    if tuple(uncertainty.bounds) != scenario.controller.bus_ids:
        raise ScenarioError("uncertainty model must cover exactly the controller buses")
    traj = _run(scenario, uncertainty)
    traj.extra["uncertain"] = True
    return traj


def open_loop(scenario: Scenario) -> Scenario:
    return replace(scenario, controller=None)
