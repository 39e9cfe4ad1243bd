"""Import of MATPOWER ``.m`` case files into :class:`PowerNetwork`.

Only the data the swing model needs is read: bus numbers and active
loads, generator outputs, and branch reactances. Each branch becomes a
line with susceptance ``1/x``; parallel branches are merged by summing
their susceptances. Out-of-service branches and generators are skipped.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .network import CaseFormatError, PowerNetwork

_MATRIX = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")

# MATPOWER column positions (0-based)
BUS_I, PD = 0, 2
GEN_BUS, PG, GEN_STATUS = 0, 1, 7
F_BUS, T_BUS, BR_X, BR_STATUS = 0, 1, 3, 10


@dataclass
class MatpowerCase:
    base_mva: float
    bus: np.ndarray
    gen: np.ndarray
    branch: np.ndarray


def _rows(body: str, name: str, text: str) -> np.ndarray:
    rows = []
    for raw in body.split(";"):
        raw = raw.split("%")[0].strip()
        if not raw:
            continue
        try:
            rows.append([float(tok) for tok in raw.split()])
        except ValueError as exc:
            lineno = text[: text.find(raw)].count("\n") + 1
            raise CaseFormatError(f"mpc.{name}: {exc}", lineno) from None
    if len({len(r) for r in rows}) > 1:
        raise CaseFormatError(f"mpc.{name}: rows have different lengths")
    return np.array(rows, dtype=float)


def parse_matpower(text: str) -> MatpowerCase:
    """Parse the ``mpc.bus``, ``mpc.gen``, ``mpc.branch`` and ``mpc.baseMVA`` fields."""
    # strip full-line comments so brackets inside them cannot confuse the matcher
    clean = "\n".join(ln.split("%")[0] for ln in text.splitlines())
    mats = {m.group(1): _rows(m.group(2), m.group(1), clean) for m in _MATRIX.finditer(clean)}
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR.finditer(clean)}
    for key in ("bus", "gen", "branch"):
        if key not in mats:
            raise CaseFormatError(f"missing mpc.{key} matrix")
    return MatpowerCase(scalars.get("baseMVA", 100.0), mats["bus"], mats["gen"], mats["branch"])


def read_matpower(path: str | Path) -> MatpowerCase:
    path = Path(path)
    try:
        return parse_matpower(path.read_text())
    except CaseFormatError as exc:
        raise CaseFormatError(exc.message, exc.lineno, str(path)) from None


def to_network(
    case: MatpowerCase,
    inertia_h: Mapping[int, float],
    *,
    base_hz: float = 60.0,
    default_inertia: float = 0.1,
    damping: float = 1.0,
    controlled=(),
    slack: int | None = None,
) -> PowerNetwork:
    """Convert a MATPOWER case to a swing-model network.

    Args:
        case: Parsed case.
        inertia_h: Inertia constants ``H`` in seconds keyed by MATPOWER bus
            number; those buses get ``M = 2H / base_hz``.
        base_hz: Nominal frequency used in the ``H`` to ``M`` conversion.
        default_inertia: ``M`` for buses without an ``H`` entry.
        damping: ``E`` on every bus.
        controlled: MATPOWER bus numbers in the controlled set.
        slack: Bus number whose injection absorbs the power mismatch so that
            net injections sum to zero. ``None`` keeps the raw imbalance.

    Returns:
        Network with 0-based buses in the order of ``mpc.bus`` and net
        injections ``(Pg - Pd) / baseMVA`` attached.
    """
    numbers = [int(b) for b in case.bus[:, BUS_I]]
    index = {b: k for k, b in enumerate(numbers)}
    if len(index) != len(numbers):
        raise CaseFormatError("duplicate bus numbers in mpc.bus")

    def at(bus, what):
        try:
            return index[int(bus)]
        except KeyError:
            raise CaseFormatError(f"{what} refers to unknown bus {int(bus)}") from None

    n = len(numbers)
    p = -case.bus[:, PD] / case.base_mva
    for row in case.gen:
        if row.size > GEN_STATUS and row[GEN_STATUS] <= 0:
            continue
        p[at(row[GEN_BUS], "mpc.gen")] += row[PG] / case.base_mva
    if slack is not None:
        p[at(slack, "slack")] -= p.sum()

    merged: dict[tuple[int, int], float] = {}
    for row in case.branch:
        if row.size > BR_STATUS and row[BR_STATUS] <= 0:
            continue
        i, j = at(row[F_BUS], "mpc.branch"), at(row[T_BUS], "mpc.branch")
        if i == j:
            continue
        if row[BR_X] == 0:
            raise CaseFormatError(f"branch {numbers[i]}-{numbers[j]} has zero reactance")
        key = (min(i, j), max(i, j))
        merged[key] = merged.get(key, 0.0) + 1.0 / abs(row[BR_X])

    inertia = np.full(n, float(default_inertia))
    for bus, h in inertia_h.items():
        inertia[at(bus, "inertia table")] = 2.0 * h / base_hz
    ctrl = [at(b, "controlled set") for b in controlled]
    edges = [(i, j, b) for (i, j), b in merged.items()]
    return PowerNetwork.from_edges(n, edges, inertia, damping, ctrl, injections=p)
