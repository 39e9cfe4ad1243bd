"""Recorded closed-loop trajectories and their delimited-text export.

The export is self-describing: a ``# meta:`` JSON comment carries the
network, controller settings and equilibrium, so every verification check
can be reproduced from the file alone. Floats are written with 17
significant digits, which round-trips float64 exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import (BusController, ClassKFunction, ControllerConfig, FrequencyBand,
                         LinearClassK, TanhClassK)
from .dynamics import Equilibrium
from .network import Line, PowerNetwork

FORMAT_TAG = "freqguard-trajectory v1"


@dataclass(eq=False)
class Trajectory:
    """Uniform-grid record of states, inputs and diagnostics.

    ``u`` and ``q`` have one column per controlled bus in ``controlled`` order.
    ``theta`` is present only for nonlinear runs.
    """

    time: np.ndarray
    lam: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    network: PowerNetwork
    controller: ControllerConfig | None
    equilibrium: Equilibrium
    settle_time: float
    h: float
    mode: str = "linear"
    frequency_unit: str = "rad/s"
    base_hz: float = 60.0
    theta: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.time)
        for name in ("lam", "omega", "u", "q", "p", "energy"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValueError(f"{name} has {arr.shape[0]} rows, expected {n}")

    @property
    def controlled(self) -> tuple[int, ...]:
        return self.controller.bus_ids if self.controller is not None else ()

    @property
    def horizon(self) -> float:
        return float(self.time[-1])

    def omega_of(self, bus: int) -> np.ndarray:
        return self.omega[:, bus]

    def column_of(self, bus: int) -> int:
        return self.controlled.index(bus)

    def to_hz(self, omega: np.ndarray) -> np.ndarray:
        """Absolute frequency in Hz for frequency deviations in this run's unit."""
        dev = omega if self.frequency_unit == "Hz" else omega / (2 * np.pi)
        return self.base_hz + dev

    def same_as(self, other: "Trajectory") -> bool:
        """Bitwise equality of every recorded array."""
        names = ["time", "lam", "omega", "u", "q", "p", "energy"]
        if not all(np.array_equal(getattr(self, k), getattr(other, k)) for k in names):
            return False
        if (self.theta is None) != (other.theta is None):
            return False
        return self.theta is None or np.array_equal(self.theta, other.theta)


# --- serialization ----------------------------------------------------------

def _classk_to_json(k: ClassKFunction):
    if isinstance(k, LinearClassK):
        return {"family": "linear", "gamma": k.gamma}
    if isinstance(k, TanhClassK):
        return {"family": "tanh", "gamma": k.gamma, "scale": k.scale}
    return {"family": "custom", "lipschitz": k.lipschitz}


def _classk_from_json(d) -> ClassKFunction | None:
    if d["family"] == "linear":
        return LinearClassK(d["gamma"])
    if d["family"] == "tanh":
        return TanhClassK(d["gamma"], d["scale"])
    return None


def controller_to_json(cfg: ControllerConfig) -> dict:
    return {
        "activation_time": cfg.activation_time,
        "enabled": cfg.enabled,
        "buses": {
            str(i + 1): {
                "band": [c.band.lower, c.band.lower_thr, c.band.upper_thr, c.band.upper],
                "alpha_upper": _classk_to_json(c.alpha_upper),
                "alpha_lower": _classk_to_json(c.alpha_lower),
            }
            for i, c in cfg.buses.items()
        },
    }


class _OpaqueClassK(ClassKFunction):
    """Placeholder for a custom class-K function that cannot be serialized."""

    family = "custom"

    def __init__(self, lipschitz: float):
        self.lipschitz = lipschitz

    def __call__(self, s):
        raise NotImplementedError("custom class-K function is not stored in trajectory files")


def controller_from_json(d: dict) -> ControllerConfig:
    buses = {}
    for key, c in d["buses"].items():
        up = _classk_from_json(c["alpha_upper"]) or _OpaqueClassK(c["alpha_upper"]["lipschitz"])
        lo = _classk_from_json(c["alpha_lower"]) or _OpaqueClassK(c["alpha_lower"]["lipschitz"])
        buses[int(key) - 1] = BusController(FrequencyBand(*c["band"]), up, lo)
    return ControllerConfig(buses, d["activation_time"], d["enabled"])


def _columns(traj: Trajectory) -> list[str]:
    net = traj.network
    cols = ["time"]
    cols += [f"lam_{ln.pos + 1}_{ln.neg + 1}" for ln in net.lines]
    cols += [f"omega_{i + 1}" for i in range(net.n_buses)]
    cols += [f"u_{i + 1}" for i in traj.controlled]
    cols += [f"q_{i + 1}" for i in traj.controlled]
    cols.append("energy")
    cols += [f"p_{i + 1}" for i in range(net.n_buses)]
    if traj.theta is not None:
        cols += [f"theta_{i + 1}" for i in range(net.n_buses)]
    return cols


def _meta(traj: Trajectory) -> dict:
    net = traj.network
    return {
        "n_buses": net.n_buses,
        "lines": [[ln.pos + 1, ln.neg + 1, ln.susceptance] for ln in net.lines],
        "inertia": net.inertia.tolist(),
        "damping": net.damping.tolist(),
        "controlled_set": [i + 1 for i in net.controlled],
        "controller": None if traj.controller is None else controller_to_json(traj.controller),
        "equilibrium": {
            "omega_inf": traj.equilibrium.omega_inf,
            "lam_inf": traj.equilibrium.lam_inf.tolist(),
            "theta_inf": traj.equilibrium.theta_inf.tolist(),
        },
        "settle_time": traj.settle_time,
        "h": traj.h,
        "mode": traj.mode,
        "frequency_unit": traj.frequency_unit,
        "base_hz": traj.base_hz,
        "extra": traj.extra,
    }


def write_trajectory(traj: Trajectory, path: str | Path) -> None:
    blocks = [traj.time[:, None], traj.lam, traj.omega, traj.u, traj.q, traj.energy[:, None], traj.p]
    if traj.theta is not None:
        blocks.append(traj.theta)
    data = np.hstack(blocks)
    cols = _columns(traj)
    header = f"{FORMAT_TAG}\nmeta: {json.dumps(_meta(traj), sort_keys=True)}\n" + ",".join(cols)
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="# ")


def read_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    meta = None
    with path.open() as fh:
        first = fh.readline()
        if FORMAT_TAG not in first:
            raise ValueError(f"{path}: not a trajectory export (missing '{FORMAT_TAG}')")
        for line in fh:
            if line.startswith("# meta: "):
                meta = json.loads(line[len("# meta: "):])
            elif line.startswith("# "):
                header = line[2:].strip().split(",")
                break
    if meta is None:
        raise ValueError(f"{path}: missing meta line")
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != len(header):
        raise ValueError(f"{path}: {data.shape[1]} data columns but {len(header)} headers")

    lines = tuple(Line(a - 1, b - 1, s) for a, b, s in meta["lines"])
    net = PowerNetwork(np.array(meta["inertia"]), np.array(meta["damping"]), lines,
                       tuple(i - 1 for i in meta["controlled_set"]))
    ctrl = None if meta["controller"] is None else controller_from_json(meta["controller"])
    eq = Equilibrium(meta["equilibrium"]["omega_inf"], np.array(meta["equilibrium"]["lam_inf"]),
                     np.array(meta["equilibrium"]["theta_inf"]))

    n, m = net.n_buses, net.n_lines
    c = len(ctrl.bus_ids) if ctrl is not None else 0
    pos = 0

    def take(k):
        nonlocal pos
        block = data[:, pos:pos + k]
        pos += k
        return np.ascontiguousarray(block)

    time = take(1)[:, 0]
    lam, omega, u, q = take(m), take(n), take(c), take(c)
    energy = take(1)[:, 0]
    p = take(n)
    theta = take(n) if pos < data.shape[1] else None
    return Trajectory(time, lam, omega, u, q, p, energy, net, ctrl, eq, meta["settle_time"],
                      meta["h"], meta["mode"], meta["frequency_unit"], meta["base_hz"], theta,
                      meta.get("extra", {}))
