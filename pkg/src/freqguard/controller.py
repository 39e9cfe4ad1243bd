"""Distributed transient frequency controller and its constraint predicates.

For a controlled bus with safe band ``[lo, hi]`` and dead band ``[lo_thr, hi_thr]``::

    u = min(0, -a_hi(w - hi) / (w - hi_thr) + q)     if w > hi_thr
    u = 0                                            if lo_thr <= w <= hi_thr
    u = max(0,  a_lo(lo - w) / (lo_thr - w) + q)     if w < lo_thr

with ``q = E w + [D^T Y_b lam] - p``. The law reads only bus-local and
neighbor quantities.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import optimize

from .network import PowerNetwork

EQ_TOL = 1e-9


class ControllerError(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyBand:
    lower: float
    lower_thr: float
    upper_thr: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.lower_thr < self.upper_thr < self.upper:
            raise ControllerError(
                "band must satisfy lower < lower_thr < upper_thr < upper, got "
                f"{self.lower}, {self.lower_thr}, {self.upper_thr}, {self.upper}"
            )

    @classmethod
    def symmetric(cls, bound: float, threshold: float, center: float = 0.0) -> "FrequencyBand":
        return cls(center - bound, center - threshold, center + threshold, center + bound)

    def upper_barrier(self, omega):
        return omega - self.upper

    def lower_barrier(self, omega):
        return -omega + self.lower

    def distance(self, omega):
        """Distance from ``omega`` to the safe band (zero inside)."""
        return np.maximum(0.0, np.maximum(omega - self.upper, self.lower - omega))

    def inflate(self, delta: float) -> "FrequencyBand":
        return FrequencyBand(self.lower - delta, self.lower_thr, self.upper_thr, self.upper + delta)


class ClassKFunction:
    """Strictly increasing, zero at zero, globally Lipschitz, defined on the whole real line."""

    lipschitz: float
    family: str = "custom"

    def __call__(self, s):
        raise NotImplementedError

    def check(self, span: float = 10.0, n: int = 2001) -> list[str]:
        """Sample-based sanity check of the class-K properties."""
        problems = []
        s = np.linspace(-span, span, n)
        vals = np.array([self(float(x)) for x in s])
        if abs(self(0.0)) > 0:
            problems.append("alpha(0) must be 0")
        if np.any(np.diff(vals) <= 0):
            problems.append("alpha must be strictly increasing")
        slopes = np.abs(np.diff(vals) / np.diff(s))
        if not math.isfinite(self.lipschitz) or np.any(slopes > self.lipschitz * (1 + 1e-9)):
            problems.append("declared Lipschitz constant is violated")
        return problems


@dataclass(frozen=True)
class LinearClassK(ClassKFunction):
    gamma: float
    family = "linear"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ControllerError(f"gamma must be positive, got {self.gamma}")

    @property
    def lipschitz(self) -> float:
        return self.gamma

    def __call__(self, s):
        return self.gamma * s


@dataclass(frozen=True)
class TanhClassK(ClassKFunction):
    """``gamma * scale * tanh(s / scale)``: linear near zero, saturating far out."""

    gamma: float
    scale: float
    family = "tanh"

    def __post_init__(self):
        if not (self.gamma > 0 and self.scale > 0):
            raise ControllerError("tanh class-K needs gamma > 0 and scale > 0")

    @property
    def lipschitz(self) -> float:
        return self.gamma

    def __call__(self, s):
        return self.gamma * self.scale * np.tanh(s / self.scale)

    def check(self, span: float | None = None, n: int = 2001) -> list[str]:
        # tanh is flat to float precision beyond ~18 scales; sample where it is representable
        return super().check(8.0 * self.scale if span is None else span, n)


class CustomClassK(ClassKFunction):
    def __init__(self, fn: Callable[[float], float], lipschitz: float, name: str = "custom"):
        self.fn = fn
        self.lipschitz = float(lipschitz)
        self.name = name
        problems = self.check()
        if problems:
            raise ControllerError(f"{name}: " + "; ".join(problems))

    def __call__(self, s):
        return self.fn(s)


@dataclass(frozen=True)
class BusController:
    band: FrequencyBand
    alpha_upper: ClassKFunction
    alpha_lower: ClassKFunction

    @classmethod
    def linear(cls, band: FrequencyBand, gamma: float) -> "BusController":
        k = LinearClassK(gamma)
        return cls(band, k, k)


@dataclass(frozen=True)
class ControllerConfig:
    """Per-bus controller settings keyed by 0-based bus index."""

    buses: Mapping[int, BusController]
    activation_time: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "buses", dict(sorted(self.buses.items())))
        if self.activation_time < 0:
            raise ControllerError("activation_time must be >= 0")

    @property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(self.buses)

    def all_linear(self) -> bool:
        return all(
            isinstance(c.alpha_upper, LinearClassK) and isinstance(c.alpha_lower, LinearClassK)
            for c in self.buses.values()
        )


# --- the control law --------------------------------------------------------

def q_value(network: PowerNetwork, lam, omega, p_i: float, i: int) -> float:
    """Net decelerating power ``E_i w_i + [D^T Y_b]_i lam - p_i``."""
    flow_i = float(network.flow_matrix[i] @ np.asarray(lam, dtype=float))
    return float(network.damping[i] * omega[i] + flow_i - p_i)


def control_law(omega_i: float, q_i: float, band: FrequencyBand,
                alpha_upper: ClassKFunction, alpha_lower: ClassKFunction) -> float:
    """Scalar evaluation of the three-branch controller for one bus."""
    if omega_i > band.upper_thr:
        v = -alpha_upper(omega_i - band.upper) / (omega_i - band.upper_thr) + q_i
        return min(0.0, float(v))
    if omega_i < band.lower_thr:
        v = alpha_lower(-omega_i + band.lower) / (band.lower_thr - omega_i) + q_i
        return max(0.0, float(v))
    return 0.0


def control(network: PowerNetwork, lam, omega, p, band: FrequencyBand,
            alpha_upper: ClassKFunction, alpha_lower: ClassKFunction, i: int) -> float:
    """Input of controlled bus ``i`` at state ``(lam, omega)`` and injections ``p``."""
    q = q_value(network, lam, omega, float(p[i]), i)
    return control_law(float(omega[i]), q, band, alpha_upper, alpha_lower)


def control_robust(network: PowerNetwork, lam_hat, omega_hat, p_hat, damping_hat: float,
                   band: FrequencyBand, gamma: float, i: int, flow_hat: float | None = None) -> float:
    """Same law evaluated on measured state, injection and assumed damping.

    ``flow_hat`` overrides the measured aggregate flow ``[D^T Y_b]_i lam_hat``.
    """
    if flow_hat is None:
        flow_hat = float(network.flow_matrix[i] @ np.asarray(lam_hat, dtype=float))
    q_hat = damping_hat * float(omega_hat[i]) + flow_hat - float(p_hat[i])
    k = LinearClassK(gamma)
    return control_law(float(omega_hat[i]), q_hat, band, k, k)


def _linear_law(w, q, lo, lo_thr, hi_thr, hi, g_up, g_lo):
    # same arithmetic as the array path so both give identical floats
    if w > hi_thr:
        v = -g_up * (w - hi) / (w - hi_thr) + q
        return v if v < 0.0 else 0.0
    if w < lo_thr:
        v = g_lo * (lo - w) / (lo_thr - w) + q
        return v if v > 0.0 else 0.0
    return 0.0


class VectorController:
    """Evaluates the law for all controlled buses at once.

    Linear class-K configurations take a vectorized path; anything else
    falls back to a per-bus loop.
    """

    def __init__(self, config: ControllerConfig):
        self.config = config
        self.idx = np.array(config.bus_ids, dtype=int)
        bands = [c.band for c in config.buses.values()]
        self.lo = np.array([b.lower for b in bands])
        self.lo_thr = np.array([b.lower_thr for b in bands])
        self.hi_thr = np.array([b.upper_thr for b in bands])
        self.hi = np.array([b.upper for b in bands])
        self.linear = config.all_linear()
        if self.linear:
            self.gamma_up = np.array([c.alpha_upper.gamma for c in config.buses.values()])
            self.gamma_lo = np.array([c.alpha_lower.gamma for c in config.buses.values()])
        self._ctrls = list(config.buses.values())
        if self.linear:
            self._params = list(zip(self.lo.tolist(), self.lo_thr.tolist(), self.hi_thr.tolist(),
                                    self.hi.tolist(), self.gamma_up.tolist(), self.gamma_lo.tolist()))

    def __call__(self, omega_c: np.ndarray, q_c: np.ndarray) -> np.ndarray:
        """Inputs for controlled buses given their frequencies and ``q`` values."""
        if not self.linear:
            return np.array([
                control_law(float(w), float(q), c.band, c.alpha_upper, c.alpha_lower)
                for w, q, c in zip(omega_c, q_c, self._ctrls)
            ])
        if len(self._params) <= 16:
            return np.array([_linear_law(w, q, *prm)
                             for w, q, prm in zip(omega_c.tolist(), q_c.tolist(), self._params)])
        up = omega_c > self.hi_thr
        dn = omega_c < self.lo_thr
        u = np.zeros_like(omega_c)
        if up.any():
            w = omega_c[up]
            v = -self.gamma_up[up] * (w - self.hi[up]) / (w - self.hi_thr[up]) + q_c[up]
            u[up] = np.minimum(0.0, v)
        if dn.any():
            w = omega_c[dn]
            v = self.gamma_lo[dn] * (self.lo[dn] - w) / (self.lo_thr[dn] - w) + q_c[dn]
            u[dn] = np.maximum(0.0, v)
        return u

    def batch(self, omega_c: np.ndarray, q_c: np.ndarray) -> np.ndarray:
        """Row-wise evaluation for stacked ``(steps, buses)`` arrays."""
        if not self.linear:
            return np.array([self(w, q) for w, q in zip(omega_c, q_c)]).reshape(omega_c.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            vu = -self.gamma_up * (omega_c - self.hi) / (omega_c - self.hi_thr) + q_c
            vd = self.gamma_lo * (self.lo - omega_c) / (self.lo_thr - omega_c) + q_c
        return np.where(omega_c > self.hi_thr, np.minimum(0.0, vu),
                        np.where(omega_c < self.lo_thr, np.maximum(0.0, vd), 0.0))


# --- constraint predicates --------------------------------------------------

def stability_constraint_holds(u_i: float, omega_i: float, omega_inf: float, tol: float = EQ_TOL) -> bool:
    """``(w_i - w_inf) u_i <= 0``, and ``u_i = 0`` when ``w_i = w_inf`` (both to ``tol``)."""
    if abs(omega_i - omega_inf) <= tol:
        return abs(u_i) <= tol
    return (omega_i - omega_inf) * u_i <= tol


def stability_slack(u, omega, omega_inf):
    """Vectorized ``(w - w_inf) u``; nonpositive when the stability constraint holds."""
    return (np.asarray(omega) - omega_inf) * np.asarray(u)


def classk_slack(omega_i: float, u_i: float, q_i: float, band: FrequencyBand,
                 alpha_upper: ClassKFunction, alpha_lower: ClassKFunction) -> float:
    """Left minus right side of the active class-K inequality; ``-inf`` when vacuous."""
    if band.upper_thr < omega_i <= band.upper:
        return float((omega_i - band.upper_thr) * (u_i - q_i) + alpha_upper(band.upper_barrier(omega_i)))
    if band.lower <= omega_i < band.lower_thr:
        return float((band.lower_thr - omega_i) * (-u_i + q_i) + alpha_lower(band.lower_barrier(omega_i)))
    return -math.inf


def classK_constraint_holds(omega_i: float, u_i: float, q_i: float, band: FrequencyBand,
                            alpha_upper: ClassKFunction, alpha_lower: ClassKFunction,
                            tol: float = EQ_TOL) -> bool:
    return classk_slack(omega_i, u_i, q_i, band, alpha_upper, alpha_lower) <= tol


def boundary_slack(omega_i: float, u_i: float, q_i: float, band: FrequencyBand) -> float:
    """Nagumo condition at the band edges: ``u - q`` at the top, ``q - u`` at the bottom."""
    if abs(omega_i - band.upper) <= abs(omega_i - band.lower):
        return u_i - q_i
    return -u_i + q_i


# --- robustness -------------------------------------------------------------

@dataclass(frozen=True)
class ErrorBounds:
    """Bounds on |measurement error| for frequency, aggregate flow, injection and damping."""

    omega: float = 0.0
    flow: float = 0.0
    injection: float = 0.0
    damping: float = 0.0

    def __post_init__(self):
        for name in ("omega", "flow", "injection", "damping"):
            if getattr(self, name) < 0:
                raise ControllerError(f"error bound {name} must be nonnegative")


def _edge_slack(gap, edge_abs, gamma, damping_hat, bounds, delta, e):
    # frequency-error value e > 0 means the measurement reads outside the true value
    return (-gamma * (delta + e) / (gap + delta + e) + damping_hat * e
            + bounds.damping * (delta + edge_abs) + bounds.flow + bounds.injection)


def robust_margin_slacks(band: FrequencyBand, gamma: float, damping_hat: float,
                         bounds: ErrorBounds, delta: float,
                         two_sided: bool = False) -> tuple[float, float]:
    """Left-hand sides of the robust invariance inequalities at the upper and lower edge.

    The default is the published form, which evaluates the frequency error
    at ``+bound`` only (measurement reading further out than the truth).
    ``two_sided=True`` also evaluates ``-bound``, a measurement biased toward
    the dead band; that side shrinks the class-K term and is what actually
    limits the margin when ``delta`` is below the frequency error bound.
    The frequency terms are convex in the error, so the two endpoints cover
    every error in between.
    """
    e_w = bounds.omega
    errors = (e_w, -e_w) if two_sided else (e_w,)
    upper = max(_edge_slack(band.upper - band.upper_thr, band.upper, gamma, damping_hat, bounds, delta, e)
                for e in errors)
    lower = max(_edge_slack(band.lower_thr - band.lower, -band.lower, gamma, damping_hat, bounds, delta, e)
                for e in errors)
    return float(upper), float(lower)


def robust_margin_feasible(band: FrequencyBand, gamma: float, damping_hat: float,
                           bounds: ErrorBounds, delta: float,
                           two_sided: bool = False) -> tuple[bool, tuple[float, float]]:
    """Check both robust invariance inequalities for inflation ``delta``.

    Returns the verdict and the two left-hand sides (feasible iff both <= 0).
    """
    if not delta > 0:
        raise ControllerError("delta must be positive")
    slacks = robust_margin_slacks(band, gamma, damping_hat, bounds, delta, two_sided)
    return bool(max(slacks) <= 0.0), slacks


def smallest_feasible_delta(band: FrequencyBand, gamma: float, damping_hat: float,
                            bounds: ErrorBounds, delta_max: float = 10.0,
                            delta_min: float = 1e-6, xtol: float = 1e-12,
                            two_sided: bool = False) -> float | None:
    """Smallest inflation on ``[delta_min, delta_max]`` satisfying both inequalities, or None.

    Each left-hand side is convex in delta, so the feasible set is an interval;
    its left end is found by bisection from the minimizer of the worse side.
    """
    def worst(d):
        return max(robust_margin_slacks(band, gamma, damping_hat, bounds, d, two_sided))

    if worst(delta_min) <= 0:
        return delta_min
    res = optimize.minimize_scalar(worst, bounds=(delta_min, delta_max), method="bounded",
                                   options={"xatol": 1e-12})
    d_star = float(res.x)
    if worst(d_star) > 0:
        if worst(delta_max) <= 0:
            d_star = delta_max
        else:
            return None
    lo, hi = delta_min, d_star
    while hi - lo > xtol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if worst(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return hi


# --- uncertainty ------------------------------------------------------------

class ErrorSignal:
    """Measurement error for the controlled buses as a function of time and true value."""

    def __call__(self, t: float, true_value: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sup(self, true_sup: np.ndarray) -> np.ndarray:
        """Upper bound on ``|error|`` per bus given ``sup |true value|``."""
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroError(ErrorSignal):
    def __call__(self, t, true_value):
        return np.zeros_like(true_value)

    def sup(self, true_sup):
        return np.zeros_like(true_sup)


@dataclass(frozen=True)
class ConstantError(ErrorSignal):
    values: tuple[float, ...]

    def __call__(self, t, true_value):
        return np.array(self.values, dtype=float)

    def sup(self, true_sup):
        return np.abs(np.array(self.values, dtype=float))


@dataclass(frozen=True)
class SinusoidError(ErrorSignal):
    amplitude: tuple[float, ...]
    rate: tuple[float, ...]
    phase: tuple[float, ...]

    def __post_init__(self):
        for name in ("amplitude", "rate", "phase"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "_arrays", tuple(np.array(getattr(self, k)) for k in ("amplitude", "rate", "phase")))

    def __call__(self, t, true_value):
        a, r, ph = self._arrays
        return a * np.sin(r * t + ph)

    def sup(self, true_sup):
        return np.abs(np.array(self.amplitude))


@functools.lru_cache(maxsize=256)
def _held_draw(seed: int, slot: int, n: int) -> np.ndarray:
    out = np.random.default_rng([seed, slot]).uniform(-1.0, 1.0, size=n)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class HeldRandomError(ErrorSignal):
    """Uniform noise in ``[-bound, bound]`` held constant over ``hold``-second slots; seeded and replayable."""

    bound: tuple[float, ...]
    hold: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bound", tuple(float(v) for v in self.bound))
        object.__setattr__(self, "_bound", np.array(self.bound))

    def __call__(self, t, true_value):
        slot = int(math.floor(t / self.hold))
        return _held_draw(self.seed, slot, len(self.bound)) * self._bound

    def sup(self, true_sup):
        return np.abs(np.array(self.bound))


@dataclass(frozen=True)
class RelativeError(ErrorSignal):
    """Error proportional to the true value, e.g. ``p_hat = 1.1 p``."""

    fraction: float

    def __call__(self, t, true_value):
        return self.fraction * np.asarray(true_value)

    def sup(self, true_sup):
        return abs(self.fraction) * np.asarray(true_sup)


@dataclass(frozen=True)
class UncertaintyModel:
    """Bounded measurement and parameter errors seen by the controllers.

    ``bounds`` and ``damping_hat`` are keyed by 0-based controlled bus index;
    signals produce one value per controlled bus in ascending bus order.
    """

    bounds: Mapping[int, ErrorBounds]
    damping_hat: Mapping[int, float]
    omega_error: ErrorSignal = field(default_factory=ZeroError)
    flow_error: ErrorSignal = field(default_factory=ZeroError)
    injection_error: ErrorSignal = field(default_factory=ZeroError)

    def __post_init__(self):
        object.__setattr__(self, "bounds", dict(sorted(self.bounds.items())))
        object.__setattr__(self, "damping_hat", dict(sorted(self.damping_hat.items())))

    def assumption_violations(self, network: PowerNetwork, config: ControllerConfig,
                              omega_inf: float, injection_sup: np.ndarray | None = None,
                              flow_sup: np.ndarray | None = None,
                              omega_sup: np.ndarray | None = None) -> list[str]:
        """Check the bounded-uncertainty assumptions; returns human-readable violations."""
        problems = []
        ids = config.bus_ids
        if tuple(self.bounds) != ids or tuple(self.damping_hat) != ids:
            return ["uncertainty model must cover exactly the controlled buses"]
        bnd = [self.bounds[i] for i in ids]
        e_hat = np.array([self.damping_hat[i] for i in ids])
        for k, i in enumerate(ids):
            band = config.buses[i].band
            b = bnd[k]
            if abs(e_hat[k] - network.damping[i]) > b.damping * (1 + 1e-12):
                problems.append(f"bus {i + 1}: damping error {e_hat[k] - network.damping[i]} exceeds bound {b.damping}")
            if not band.lower_thr + b.omega <= omega_inf <= band.upper_thr - b.omega:
                problems.append(f"bus {i + 1}: synchronized frequency {omega_inf} not inside shrunk dead band")
            if not b.omega < min(band.upper - band.upper_thr, band.lower_thr - band.lower):
                problems.append(f"bus {i + 1}: frequency error bound {b.omega} too large for band")
        checks = [
            ("omega", self.omega_error, omega_sup, [b.omega for b in bnd]),
            ("flow", self.flow_error, flow_sup, [b.flow for b in bnd]),
            ("injection", self.injection_error, injection_sup, [b.injection for b in bnd]),
        ]
        for name, sig, sup, limit in checks:
            true_sup = np.zeros(len(ids)) if sup is None else np.asarray(sup, dtype=float)
            if sup is None and isinstance(sig, RelativeError):
                problems.append(f"{name} error is relative; supply the true-value supremum to check it")
                continue
            got = sig.sup(true_sup)
            for k, i in enumerate(ids):
                if got[k] > limit[k] * (1 + 1e-12) + 1e-15:
                    problems.append(f"bus {i + 1}: {name} error up to {got[k]} exceeds bound {limit[k]}")
        return problems


def zero_uncertainty(network: PowerNetwork, config: ControllerConfig) -> UncertaintyModel:
    ids = config.bus_ids
    return UncertaintyModel({i: ErrorBounds() for i in ids}, {i: float(network.damping[i]) for i in ids})
