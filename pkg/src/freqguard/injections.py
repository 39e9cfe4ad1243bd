"""Time-varying power injections that become constant after a finite time.

Only families with a provable finite settle time can be built, so every
:class:`InjectionProfile` satisfies ``p(t) == p_final`` for ``t >= settle_time``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np


class InjectionError(ValueError):
    pass


@dataclass(frozen=True)
class Constant:
    value: float

    @property
    def settle_time(self) -> float:
        return 0.0

    @property
    def final_value(self) -> float:
        return self.value

    def __call__(self, t: float) -> float:
        return self.value


@dataclass(frozen=True)
class SinusoidalWindow:
    """``p0 * (1 + amplitude_fraction * sin(angular_rate * (t - t_on)))`` on ``(t_on, t_off)``, ``p0`` outside."""

    p0: float
    amplitude_fraction: float
    angular_rate: float
    t_on: float
    t_off: float

    def __post_init__(self):
        if not (math.isfinite(self.t_on) and math.isfinite(self.t_off)):
            raise InjectionError("sinusoidal window needs finite t_on and t_off")
        if self.t_off < self.t_on or self.t_on < 0:
            raise InjectionError(f"need 0 <= t_on <= t_off, got t_on={self.t_on}, t_off={self.t_off}")
        if not all(math.isfinite(v) for v in (self.p0, self.amplitude_fraction, self.angular_rate)):
            raise InjectionError("sinusoidal window parameters must be finite")
        phase = self.angular_rate * (self.t_off - self.t_on) / math.pi
        if self.amplitude_fraction != 0 and self.p0 != 0 and abs(phase - round(phase)) > 1e-9:
            warnings.warn(
                "sinusoidal window does not vanish at t_off; the injection jumps there",
                stacklevel=3,
            )

    @property
    def settle_time(self) -> float:
        return self.t_off

    @property
    def final_value(self) -> float:
        return self.p0

    def __call__(self, t: float) -> float:
        if t <= self.t_on or t >= self.t_off:
            return self.p0
        return (1.0 + self.amplitude_fraction * math.sin(self.angular_rate * (t - self.t_on))) * self.p0


@dataclass(frozen=True)
class PiecewiseConstant:
    """Steps ``(t_k, v_k)``: value ``v_k`` on ``[t_k, t_{k+1})``; the first breakpoint is at 0."""

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        bps = tuple((float(t), float(v)) for t, v in self.breakpoints)
        object.__setattr__(self, "breakpoints", bps)
        if not bps:
            raise InjectionError("piecewise_constant needs at least one breakpoint")
        times = [t for t, _ in bps]
        if times[0] != 0.0:
            raise InjectionError("first breakpoint must be at t = 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InjectionError("breakpoint times must be strictly increasing")
        if not all(math.isfinite(t) and math.isfinite(v) for t, v in bps):
            raise InjectionError("breakpoints must be finite")

    @property
    def settle_time(self) -> float:
        return self.breakpoints[-1][0]

    @property
    def final_value(self) -> float:
        return self.breakpoints[-1][1]

    def __call__(self, t: float, left: bool = False) -> float:
        """Value at ``t``; ``left=True`` gives the limit from the left at a breakpoint."""
        value = self.breakpoints[0][1]
        for tk, vk in self.breakpoints:
            if t > tk or (t == tk and not left):
                value = vk
            else:
                break
        return value


Component = Union[Constant, SinusoidalWindow, PiecewiseConstant]


class InjectionProfile:
    """Per-bus injection profile, evaluated as a vector.

    Sinusoidal windows are evaluated in one vectorized pass since they are
    the common case on large networks.
    """

    def __init__(self, components: Sequence[Component]):
        comps = tuple(components)
        for c in comps:
            if not isinstance(c, (Constant, SinusoidalWindow, PiecewiseConstant)):
                raise InjectionError(
                    f"{type(c).__name__} has no finite settle time guarantee; "
                    "use constant, sinusoidal_window or piecewise_constant"
                )
        self.components = comps
        self.final_value = np.array([c.final_value for c in comps], dtype=float)
        self._settle = max((c.settle_time for c in comps), default=0.0)

        win = [(i, c) for i, c in enumerate(comps) if isinstance(c, SinusoidalWindow)]
        self._win_idx = np.array([i for i, _ in win], dtype=int)
        self._win_p0 = np.array([c.p0 for _, c in win])
        self._win_amp = np.array([c.amplitude_fraction for _, c in win])
        self._win_rate = np.array([c.angular_rate for _, c in win])
        self._win_on = np.array([c.t_on for _, c in win])
        self._win_off = np.array([c.t_off for _, c in win])
        self._pw = [(i, c) for i, c in enumerate(comps) if isinstance(c, PiecewiseConstant)]

    @classmethod
    def constant(cls, values: Sequence[float]) -> "InjectionProfile":
        return cls([Constant(float(v)) for v in values])

    @property
    def n_buses(self) -> int:
        return len(self.components)

    @property
    def settle_time(self) -> float:
        return self._settle

    def jump_times(self) -> list[float]:
        """Times where some bus injection may be discontinuous."""
        out = {tk for _, c in self._pw for tk, _ in c.breakpoints[1:]}
        for c in self.components:
            if isinstance(c, SinusoidalWindow) and c.amplitude_fraction and c.p0:
                out.update((c.t_on, c.t_off))
        return sorted(out)

    def __eq__(self, other):
        return isinstance(other, InjectionProfile) and self.components == other.components

    def __repr__(self):
        return f"InjectionProfile({list(self.components)!r})"

    def __call__(self, t: float) -> np.ndarray:
        return self.eval(t)

    def eval(self, t: float, left: bool = False) -> np.ndarray:
        """Injection vector at ``t``.

        Args:
            t: Time in seconds.
            left: Use left limits at jumps. The integrator sets this for the
                stage at the end of a step so a jump on a grid point acts from
                that point on.
        """
        p = self.final_value.copy()
        if t > self._settle or (t == self._settle and not left):
            return p
        if self._win_idx.size and not self._pw:
            return self._eval_windows(t, p)
        if self._win_idx.size:
            active = (t > self._win_on) & (t < self._win_off)
            if active.any():
                idx = self._win_idx[active]
                p[idx] = (1.0 + self._win_amp[active] * np.sin(
                    self._win_rate[active] * (t - self._win_on[active]))) * self._win_p0[active]
        for i, c in self._pw:
            p[i] = c(t, left)
        return p

    def _eval_windows(self, t, p):
        active = (t > self._win_on) & (t < self._win_off)
        if active.all():
            p[self._win_idx] = (1.0 + self._win_amp * np.sin(self._win_rate * (t - self._win_on))) * self._win_p0
        elif active.any():
            idx = self._win_idx[active]
            p[idx] = (1.0 + self._win_amp[active] * np.sin(
                self._win_rate[active] * (t - self._win_on[active]))) * self._win_p0[active]
        return p


def eval_profile(profile: InjectionProfile, t: float) -> np.ndarray:
    return profile.eval(t)


def settle_time(profile: InjectionProfile) -> float:
    """Smallest declared time after which every bus injection is constant."""
    return profile.settle_time


def max_abs(component: Component) -> float:
    """Supremum of ``|p(t)|`` over ``t >= 0``."""
    if isinstance(component, Constant):
        return abs(component.value)
    if isinstance(component, PiecewiseConstant):
        return max(abs(v) for _, v in component.breakpoints)
    c = component
    span = c.angular_rate * (c.t_off - c.t_on)
    # extreme of sin over the open window; the endpoints contribute p0 itself
    lo, hi = sorted((0.0, span))
    s_vals = [math.sin(lo), math.sin(hi)]
    k_start = math.ceil((lo - math.pi / 2) / math.pi)
    k_end = math.floor((hi - math.pi / 2) / math.pi)
    for k in range(k_start, min(k_end, k_start + 2) + 1):
        s_vals.append(math.sin(math.pi / 2 + k * math.pi))
    factors = [1.0 + c.amplitude_fraction * s for s in s_vals] + [1.0]
    return max(abs(f * c.p0) for f in factors)
