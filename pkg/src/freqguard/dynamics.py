"""Swing dynamics right-hand sides, equilibria and the energy function.

Linear model, with ``L = D^T Y_b``::

    lam' = D omega
    M_i omega_i' = -E_i omega_i - [L lam]_i + u_i + p_i

The nonlinear variant replaces ``[L lam]_i`` by ``sum_j b_ij sin(theta_i - theta_j)``
and carries ``theta`` instead of ``lam``.

Angles are always radians. When frequencies are in Hz the angle equations
pick up ``kappa = 2 pi`` (``lam' = kappa D omega``); see :func:`angle_scale`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .network import PowerNetwork

LINEAR = "linear"
NONLINEAR = "nonlinear"
MODES = (LINEAR, NONLINEAR)
FREQUENCY_UNITS = ("rad/s", "Hz")


def angle_scale(frequency_unit: str) -> float:
    """Radians of angle per unit of frequency times seconds."""
    if frequency_unit == "rad/s":
        return 1.0
    if frequency_unit == "Hz":
        return 2.0 * np.pi
    raise ValueError(f"unknown frequency unit {frequency_unit!r}")


@dataclass
class SystemState:
    """``lam`` holds edge angle differences (linear mode) or ``theta`` holds bus angles (nonlinear mode)."""

    omega: np.ndarray
    lam: np.ndarray | None = None
    theta: np.ndarray | None = None

    def edge_angles(self, network: PowerNetwork) -> np.ndarray:
        if self.lam is not None:
            return np.asarray(self.lam, dtype=float)
        if self.theta is None:
            raise ValueError("state carries neither lam nor theta")
        return network.incidence @ np.asarray(self.theta, dtype=float)


@dataclass(frozen=True)
class Equilibrium:
    omega_inf: float
    lam_inf: np.ndarray
    theta_inf: np.ndarray


def _check_input(network: PowerNetwork, u: np.ndarray, tol: float = 0.0) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (network.n_buses,):
        raise ValueError(f"control vector must have length {network.n_buses}")
    stray = np.abs(u[~network.controlled_mask]) > tol
    if stray.any():
        bad = [int(i) + 1 for i in np.flatnonzero(~network.controlled_mask)[stray]]
        raise ValueError(f"nonzero control on uncontrolled bus(es) {bad}")
    return u


def linear_flow(network: PowerNetwork, lam: np.ndarray) -> np.ndarray:
    return network.flow_matrix @ lam


def nonlinear_flow(network: PowerNetwork, theta: np.ndarray) -> np.ndarray:
    """Per-bus ``sum_j b_ij sin(theta_i - theta_j)``."""
    return network.flow_matrix @ np.sin(network.incidence @ theta)


def rhs_linear(network: PowerNetwork, lam, omega, p, u, kappa: float = 1.0):
    """Return ``(lam_dot, omega_dot)`` of the linearized closed loop.

    ``kappa`` is the angle scale of :func:`angle_scale`.
    """
    lam = np.asarray(lam, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if lam.shape != (network.n_lines,) or omega.shape != (network.n_buses,):
        raise ValueError("state dimensions do not match network")
    u = _check_input(network, u)
    lam_dot = kappa * (network.incidence @ omega)
    omega_dot = (-network.damping * omega - linear_flow(network, lam) + u + np.asarray(p, dtype=float)) / network.inertia
    return lam_dot, omega_dot


def rhs_nonlinear(network: PowerNetwork, theta, omega, p, u, kappa: float = 1.0):
    """Return ``(theta_dot, omega_dot)`` with sine power flows."""
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if theta.shape != (network.n_buses,) or omega.shape != (network.n_buses,):
        raise ValueError("state dimensions do not match network")
    u = _check_input(network, u)
    omega_dot = (-network.damping * omega - nonlinear_flow(network, theta) + u + np.asarray(p, dtype=float)) / network.inertia
    return kappa * omega, omega_dot


def sync_frequency(network: PowerNetwork, p_star) -> float:
    return float(np.sum(p_star) / np.sum(network.damping))


def equilibrium(network: PowerNetwork, p_star, mode: str = LINEAR) -> Equilibrium:
    """Synchronized equilibrium for constant injections ``p_star``.

    The last bus angle is pinned to zero, which fixes the Laplacian null
    space; ``lam_inf = D theta`` then lies in range(D) by construction.
    """
    p_star = np.asarray(p_star, dtype=float)
    if p_star.shape != (network.n_buses,):
        raise ValueError("p_star length does not match network")
    w_inf = sync_frequency(network, p_star)
    rhs = p_star - network.damping * w_inf
    n = network.n_buses
    theta = np.zeros(n)
    if n > 1:
        L = network.laplacian
        theta[:-1] = np.linalg.solve(L[:-1, :-1], rhs[:-1])
    if mode == NONLINEAR and n > 1:
        theta = _solve_sine_flow(network, rhs, theta)
    elif mode not in MODES:
        raise ValueError(f"unknown dynamics mode {mode!r}")
    return Equilibrium(w_inf, network.incidence @ theta, theta)


def _solve_sine_flow(network: PowerNetwork, rhs: np.ndarray, theta0: np.ndarray) -> np.ndarray:
    D = network.incidence
    F = network.flow_matrix

    def resid(x):
        th = np.append(x, 0.0)
        return (F @ np.sin(D @ th) - rhs)[:-1]

    def jac(x):
        th = np.append(x, 0.0)
        J = (F * np.cos(D @ th)) @ D
        return J[:-1, :-1]

    sol = optimize.root(resid, theta0[:-1], jac=jac, method="hybr", options={"xtol": 1e-14})
    # hybr may report stagnation at the tight xtol after converging; judge by residual
    if not np.all(np.isfinite(sol.x)) or np.max(np.abs(resid(sol.x))) > 1e-9:
        raise ValueError(f"no synchronous sine-flow equilibrium found: {sol.message}")
    return np.append(sol.x, 0.0)


def energy(network: PowerNetwork, lam, omega, eq: Equilibrium, mode: str = LINEAR,
           kappa: float = 1.0):
    """Kinetic plus potential energy relative to ``eq``; accepts stacked states.

    Linear: ``1/2 sum M (w - w_inf)^2 + 1/2 (lam - lam_inf)^T Y_b (lam - lam_inf)``.
    Nonlinear potential: ``sum b (cos lam_inf - cos lam - sin lam_inf (lam - lam_inf))``.
    The potential is divided by ``kappa`` so that along trajectories
    ``V' = -sum E (w - w_inf)^2 + sum (w - w_inf) u`` in every unit system.
    """
    lam = np.asarray(lam, dtype=float)
    omega = np.asarray(omega, dtype=float)
    b = network.susceptances
    dw = omega - eq.omega_inf
    kinetic = 0.5 * np.sum(network.inertia * dw * dw, axis=-1)
    dl = lam - eq.lam_inf
    if mode == NONLINEAR:
        potential = np.sum(b * (np.cos(eq.lam_inf) - np.cos(lam) - np.sin(eq.lam_inf) * dl), axis=-1)
    else:
        potential = 0.5 * np.sum(b * dl * dl, axis=-1)
    return kinetic + potential / kappa
