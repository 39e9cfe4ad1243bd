"""Power network graph: incidence structure, susceptances and aggregate flows.

Buses are 0-based internally. The text case format (see :func:`read_case`)
is 1-based; conversion happens only in the reader and writer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class NetworkError(ValueError):
    """Raised when a network cannot be used for simulation."""


class CaseFormatError(ValueError):
    """Parse error in a case file, carrying the offending line number."""

    def __init__(self, message: str, lineno: int | None = None, path: str | None = None):
        self.message = message
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass(frozen=True)
class Line:
    """Transmission line; ``pos`` is the positive end of the orientation."""

    pos: int
    neg: int
    susceptance: float


@dataclass(frozen=True, eq=False)
class PowerNetwork:
    """Connected network of buses with swing dynamics parameters.

    Attributes:
        inertia: per-bus inertia ``M_i``.
        damping: per-bus damping ``E_i``.
        lines: oriented lines; the line list is the only place susceptances live.
        controlled: sorted bus indices that carry a transient controller.
        injections: optional nominal injection per bus read from a case file.
    """

    inertia: np.ndarray
    damping: np.ndarray
    lines: tuple[Line, ...]
    controlled: tuple[int, ...] = ()
    injections: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float))
        object.__setattr__(self, "damping", np.asarray(self.damping, dtype=float))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "controlled", tuple(sorted(int(i) for i in self.controlled)))
        if self.injections is not None:
            object.__setattr__(self, "injections", np.asarray(self.injections, dtype=float))
        if self.inertia.shape != self.damping.shape or self.inertia.ndim != 1:
            raise NetworkError("inertia and damping must be 1-d arrays of equal length")

    @classmethod
    def from_edges(
        cls,
        n_buses: int,
        edges: Iterable[tuple[int, int, float]],
        inertia: Sequence[float] | float = 1.0,
        damping: Sequence[float] | float = 1.0,
        controlled: Iterable[int] = (),
        orientation: Sequence[int] | None = None,
        injections: Sequence[float] | None = None,
    ) -> "PowerNetwork":
        """Build a network from 0-based ``(i, j, b)`` triples.

        By default the lower bus index is the positive end of each line.
        ``orientation[k]`` overrides this with the positive end of line ``k``.
        """
        lines = []
        for k, (i, j, b) in enumerate(edges):
            i, j = int(i), int(j)
            pos = min(i, j) if orientation is None else int(orientation[k])
            if pos not in (i, j):
                raise NetworkError(f"orientation of line {k} names bus {pos}, not an endpoint")
            neg = j if pos == i else i
            lines.append(Line(pos, neg, float(b)))
        inertia = np.broadcast_to(np.asarray(inertia, dtype=float), (n_buses,)).copy()
        damping = np.broadcast_to(np.asarray(damping, dtype=float), (n_buses,)).copy()
        return cls(inertia, damping, tuple(lines), tuple(controlled), injections)

    @property
    def n_buses(self) -> int:
        return self.inertia.shape[0]

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @cached_property
    def susceptances(self) -> np.ndarray:
        """Diagonal of ``Y_b`` as a vector."""
        return np.array([ln.susceptance for ln in self.lines], dtype=float)

    @cached_property
    def incidence(self) -> np.ndarray:
        return build_incidence(self)

    @cached_property
    def flow_matrix(self) -> np.ndarray:
        """``D^T Y_b``: maps edge angle differences to per-bus outgoing flow."""
        return self.incidence.T * self.susceptances

    @cached_property
    def laplacian(self) -> np.ndarray:
        return self.flow_matrix @ self.incidence

    @cached_property
    def controlled_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_buses, dtype=bool)
        mask[list(self.controlled)] = True
        return mask

    def neighbors(self, i: int) -> list[int]:
        out = []
        for ln in self.lines:
            if ln.pos == i:
                out.append(ln.neg)
            elif ln.neg == i:
                out.append(ln.pos)
        return out

    def components(self) -> list[list[int]]:
        """Connected components as sorted bus lists, largest first."""
        n = self.n_buses
        if self.n_lines:
            rows = [ln.pos for ln in self.lines]
            cols = [ln.neg for ln in self.lines]
            valid = [0 <= r < n and 0 <= c < n for r, c in zip(rows, cols)]
            rows = [r for r, ok in zip(rows, valid) if ok]
            cols = [c for c, ok in zip(cols, valid) if ok]
        else:
            rows, cols = [], []
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = connected_components(adj, directed=False)
        groups: dict[int, list[int]] = {}
        for bus, lab in enumerate(labels):
            groups.setdefault(int(lab), []).append(bus)
        return sorted(groups.values(), key=lambda g: (-len(g), g[0]))


def validate(network: PowerNetwork) -> list[str]:
    """Return the violated network invariants; empty iff the network is valid."""
    problems = []
    n = network.n_buses
    if n < 1:
        problems.append("network must have at least one bus")
        return problems
    if np.any(~(network.inertia > 0)):
        bad = [i + 1 for i in np.flatnonzero(~(network.inertia > 0))]
        problems.append(f"inertia must be strictly positive (buses {bad})")
    if np.any(~(network.damping > 0)):
        bad = [i + 1 for i in np.flatnonzero(~(network.damping > 0))]
        problems.append(f"damping must be strictly positive (buses {bad})")
    seen = set()
    for k, ln in enumerate(network.lines):
        if not (0 <= ln.pos < n and 0 <= ln.neg < n):
            problems.append(f"line {k + 1} references a bus outside 1..{n}")
            continue
        if ln.pos == ln.neg:
            problems.append(f"line {k + 1} is a self loop at bus {ln.pos + 1}")
        key = frozenset((ln.pos, ln.neg))
        if key in seen:
            problems.append(f"duplicate line between buses {ln.pos + 1} and {ln.neg + 1}")
        seen.add(key)
        if not ln.susceptance > 0:
            problems.append(f"susceptance must be strictly positive (line {k + 1})")
    for i in network.controlled:
        if not 0 <= i < n:
            problems.append(f"controlled bus {i + 1} outside 1..{n}")
    if len(set(network.controlled)) != len(network.controlled):
        problems.append("controlled set has duplicates")
    if network.injections is not None and network.injections.shape != (n,):
        problems.append("injection vector length does not match bus count")
    comps = network.components()
    if len(comps) > 1:
        isolated = [[b + 1 for b in c] for c in comps[1:]]
        problems.append(f"graph not connected; detached components {isolated}")
    return problems


def build_incidence(network: PowerNetwork) -> np.ndarray:
    """Oriented ``m x n`` incidence matrix: +1 at the positive end, -1 at the negative end.

    Raises:
        NetworkError: if the graph is disconnected or a line is malformed.
    """
    comps = network.components()
    if len(comps) > 1:
        isolated = [[b + 1 for b in c] for c in comps[1:]]
        raise NetworkError(f"graph not connected; isolated component(s) {isolated} (1-based)")
    n, m = network.n_buses, network.n_lines
    D = np.zeros((m, n))
    for k, ln in enumerate(network.lines):
        if ln.pos == ln.neg:
            raise NetworkError(f"line {k + 1} is a self loop")
        D[k, ln.pos] = 1.0
        D[k, ln.neg] = -1.0
    return D


def aggregate_flow(network: PowerNetwork, D: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Per-bus linearized outgoing flow ``D^T Y_b lam``."""
    lam = np.asarray(lam, dtype=float)
    if D.shape != (network.n_lines, network.n_buses):
        raise ValueError(f"incidence shape {D.shape} does not match network")
    if lam.shape[-1] != network.n_lines:
        raise ValueError(f"expected {network.n_lines} edge angles, got {lam.shape[-1]}")
    return (lam * network.susceptances) @ D


def range_residual(D: np.ndarray, lam: np.ndarray) -> float:
    """Infinity-norm distance from ``lam`` to its projection onto range(D)."""
    theta, *_ = np.linalg.lstsq(D, lam, rcond=None)
    return float(np.max(np.abs(D @ theta - lam), initial=0.0))


# --- text case format -------------------------------------------------------

def read_case(path: str | Path) -> PowerNetwork:
    """Parse a case file.

    Grammar, one record per line, ``#`` starts a comment::

        bus <id> <M> <E> [controlled]
        line <i> <j> <b>
        injection <id> <p>

    Bus ids are 1..n in any order. Lines are oriented with the first listed
    bus as positive end. ``injection`` records are optional nominal injections.
    """
    path = Path(path)
    return parse_case(path.read_text(), source=str(path))


def parse_case(text: str, source: str | None = None) -> PowerNetwork:
    buses: dict[int, tuple[float, float, bool]] = {}
    edges: list[tuple[int, int, float]] = []
    inj: dict[int, float] = {}
    where: dict = {}

    def num(tok: str, lineno: int, what: str) -> float:
        try:
            return float(tok)
        except ValueError:
            raise CaseFormatError(f"bad {what} {tok!r}", lineno, source) from None

    def ident(tok: str, lineno: int) -> int:
        try:
            val = int(tok)
        except ValueError:
            raise CaseFormatError(f"bad bus id {tok!r}", lineno, source) from None
        if val < 1:
            raise CaseFormatError(f"bus id must be >= 1, got {val}", lineno, source)
        return val

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kind = tok[0].lower()
        if kind == "bus":
            if len(tok) not in (4, 5) or (len(tok) == 5 and tok[4].lower() != "controlled"):
                raise CaseFormatError("expected 'bus <id> <M> <E> [controlled]'", lineno, source)
            bid = ident(tok[1], lineno)
            if bid in buses:
                raise CaseFormatError(f"bus {bid} defined twice", lineno, source)
            buses[bid] = (num(tok[2], lineno, "inertia"), num(tok[3], lineno, "damping"), len(tok) == 5)
        elif kind == "line":
            if len(tok) != 4:
                raise CaseFormatError("expected 'line <i> <j> <b>'", lineno, source)
            edges.append((ident(tok[1], lineno), ident(tok[2], lineno), num(tok[3], lineno, "susceptance")))
            where[("line", len(edges) - 1)] = lineno
        elif kind == "injection":
            if len(tok) != 3:
                raise CaseFormatError("expected 'injection <id> <p>'", lineno, source)
            bid = ident(tok[1], lineno)
            inj[bid] = num(tok[2], lineno, "injection")
            where[("injection", bid)] = lineno
        else:
            raise CaseFormatError(f"unknown record {tok[0]!r}", lineno, source)

    if not buses:
        raise CaseFormatError("no bus records", None, source)
    n = max(buses)
    missing = sorted(set(range(1, n + 1)) - set(buses))
    if missing:
        raise CaseFormatError(f"bus ids must be contiguous 1..{n}; missing {missing}", None, source)
    for k, (i, j, _) in enumerate(edges):
        if i > n or j > n:
            raise CaseFormatError(f"line {i}-{j} references undefined bus", where[("line", k)], source)
    unknown_inj = sorted(set(inj) - set(buses))
    if unknown_inj:
        raise CaseFormatError(f"injection for undefined bus {unknown_inj[0]}",
                              where[("injection", unknown_inj[0])], source)

    inertia = [buses[i][0] for i in range(1, n + 1)]
    damping = [buses[i][1] for i in range(1, n + 1)]
    controlled = [i - 1 for i in range(1, n + 1) if buses[i][2]]
    injections = None
    if inj:
        injections = [inj.get(i, 0.0) for i in range(1, n + 1)]
    lines = tuple(Line(i - 1, j - 1, b) for i, j, b in edges)
    return PowerNetwork(np.array(inertia), np.array(damping), lines, tuple(controlled), injections)


def format_case(network: PowerNetwork, header: str | None = None) -> str:
    out = []
    if header:
        out.extend(f"# {h}" if h else "#" for h in header.splitlines())
    for i in range(network.n_buses):
        flag = " controlled" if i in network.controlled else ""
        out.append(f"bus {i + 1} {float(network.inertia[i])!r} {float(network.damping[i])!r}{flag}")
    for ln in network.lines:
        out.append(f"line {ln.pos + 1} {ln.neg + 1} {float(ln.susceptance)!r}")
    if network.injections is not None:
        for i, p in enumerate(network.injections):
            out.append(f"injection {i + 1} {float(p)!r}")
    return "\n".join(out) + "\n"


def write_case(network: PowerNetwork, path: str | Path, header: str | None = None) -> None:
    Path(path).write_text(format_case(network, header))
