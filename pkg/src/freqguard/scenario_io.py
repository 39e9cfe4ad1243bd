"""YAML scenario files: parsing with line-numbered errors, emission, and building runs.

A scenario file has the sections ``case`` or ``network``, ``units``,
``injections``, ``controller``, ``simulation``, ``checks``, ``output`` and
an optional ``sweep``. Bus ids are 1-based throughout the file. See the
README for a full example.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .controller import (BusController, ConstantError, ControllerConfig, ErrorBounds,
                         FrequencyBand, HeldRandomError, LinearClassK, RelativeError,
                         SinusoidError, TanhClassK, UncertaintyModel, ZeroError,
                         robust_margin_feasible, smallest_feasible_delta)
from .dynamics import LINEAR, MODES, SystemState, equilibrium
from .injections import (Constant, InjectionError, InjectionProfile, PiecewiseConstant,
                         SinusoidalWindow, max_abs)
from .network import CaseFormatError, NetworkError, PowerNetwork, parse_case, read_case
from .verification import CHECKS

BUNDLED_PREFIX = "bundled:"
SECTIONS = ("case", "network", "units", "injections", "controller", "simulation",
            "checks", "output", "sweep")


class ScenarioFileError(CaseFormatError):
    """Invalid scenario file; names the failing field and, when known, its line."""


# --- line-aware YAML loading ------------------------------------------------

class _Map(dict):
    line: int | None = None
    key_lines: dict


class _Seq(list):
    line: int | None = None


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        if key in out:
            raise ScenarioFileError(f"duplicate key {key!r}", k_node.start_mark.line + 1)
        out[key] = loader.construct_object(v_node, deep=True)
        out.key_lines[key] = k_node.start_mark.line + 1
    return out


def _construct_seq(loader, node):
    out = _Seq(loader.construct_object(n, deep=True) for n in node.value)
    out.line = node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_seq)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj


def _line(container, key=None):
    if isinstance(container, _Map) and key is not None and key in container.key_lines:
        return container.key_lines[key]
    return getattr(container, "line", None)


# --- the file object --------------------------------------------------------

@dataclass
class ScenarioFile:
    """Parsed scenario in canonical dictionary form.

    Sections are kept as plain data so that emit, parse and compare are
    exact. ``base_dir`` resolves relative paths and is not compared.
    """

    case: str | None = None
    network: str | None = None
    units: dict = field(default_factory=dict)
    injections: dict = field(default_factory=dict)
    controller: dict | None = None
    simulation: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    sweep: dict | None = None
    base_dir: Path | None = field(default=None, compare=False)
    source: str | None = field(default=None, compare=False)
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        out = {}
        for key in SECTIONS:
            val = getattr(self, key)
            if val is not None:
                out[key] = _plain(val)
        return out

    def with_gamma(self, gamma: float) -> "ScenarioFile":
        """Copy with every controlled bus using linear class-K slope ``gamma``."""
        ctrl = copy.deepcopy(self.controller) or {}
        ctrl["class_k"] = "linear"
        ctrl["gamma"] = float(gamma)
        ctrl.pop("scale", None)
        for ov in (ctrl.get("overrides") or {}).values():
            ov.pop("gamma", None)
        return ScenarioFile(**{**self.__dict__, "controller": ctrl})


def _err(msg: str, sf_lines: dict, *keys, container=None, key=None):
    lineno = _line(container, key) if container is not None else None
    if lineno is None:
        for k in keys:
            if k in sf_lines:
                lineno = sf_lines[k]
                break
    return ScenarioFileError(msg, lineno)


def parse_scenario(text: str, source: str | None = None, base_dir: Path | None = None) -> ScenarioFile:
    try:
        data = yaml.load(text, Loader=_Loader)
    except ScenarioFileError as exc:
        raise ScenarioFileError(exc.message, exc.lineno, source) from None
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioFileError(f"YAML syntax: {getattr(exc, 'problem', exc)}",
                                mark.line + 1 if mark else None, source) from None
    if not isinstance(data, dict):
        raise ScenarioFileError("scenario file must be a mapping of sections", 1, source)
    key_lines = getattr(data, "key_lines", {})
    for key in data:
        if key not in SECTIONS:
            raise ScenarioFileError(f"unknown section {key!r}", key_lines.get(key), source)
    sf = ScenarioFile(
        case=data.get("case"),
        network=data.get("network"),
        units=data.get("units") or {},
        injections=data.get("injections") or {},
        controller=data.get("controller"),
        simulation=data.get("simulation") or {},
        checks=data.get("checks") or {},
        output=data.get("output") or {},
        sweep=data.get("sweep"),
        base_dir=base_dir,
        source=source,
        lines=dict(key_lines),
    )
    return sf


def load_scenario(path: str | Path) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioFileError(f"cannot read scenario: {exc.strerror}", None, str(path)) from None
    return parse_scenario(text, str(path), path.parent)


def dump_scenario(sf: ScenarioFile) -> str:
    class _Dumper(yaml.SafeDumper):
        pass

    def str_presenter(dumper, s):
        style = "|" if "\n" in s else None
        return dumper.represent_scalar("tag:yaml.org,2002:str", s, style=style)

    _Dumper.add_representer(str, str_presenter)
    return yaml.dump(sf.to_dict(), Dumper=_Dumper, sort_keys=False, default_flow_style=None, width=100)


def write_scenario(sf: ScenarioFile, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(sf))


# --- building ---------------------------------------------------------------

@dataclass
class CheckPlan:
    names: tuple[str, ...]
    delta: float = 0.0
    zero_tol: float = 1e-6
    convergence_tol: float = 1e-4
    invariance_tol: float = 0.0


@dataclass
class Experiment:
    """Everything a run needs, resolved from a scenario file."""

    scenario: Any
    uncertainty: UncertaintyModel | None
    checks: CheckPlan
    output: dict
    name: str


def bundled_case_path(name: str):
    return resources.files("freqguard") / "data" / f"{name}.case"


def _load_network(sf: ScenarioFile, case_override: str | Path | None) -> PowerNetwork:
    if case_override is not None:
        return read_case(case_override)
    if sf.case is not None and sf.network is not None:
        raise _err("give either 'case' or 'network', not both", sf.lines, "network")
    if sf.network is not None:
        offset = sf.lines.get("network", 0)
        try:
            return parse_case(sf.network, sf.source)
        except CaseFormatError as exc:
            # block scalar content starts on the line after the key
            lineno = None if exc.lineno is None else offset + exc.lineno
            raise ScenarioFileError(f"network: {exc.message}", lineno, sf.source) from None
    if sf.case is None:
        raise _err("missing 'case' or 'network' section", sf.lines)
    ref = str(sf.case)
    if ref.startswith(BUNDLED_PREFIX):
        res = bundled_case_path(ref[len(BUNDLED_PREFIX):])
        if not res.is_file():
            raise _err(f"case: no bundled case {ref!r}", sf.lines, "case")
        with resources.as_file(res) as p:
            return read_case(p)
    path = Path(ref)
    if not path.is_absolute() and sf.base_dir is not None:
        path = sf.base_dir / path
    if not path.is_file():
        raise _err(f"case: file {str(path)!r} not found", sf.lines, "case")
    return read_case(path)


def _bus_list(spec, n: int, what: str, sf, container, key) -> list[int]:
    if isinstance(spec, bool):
        raise _err(f"{what}: bus list expected", sf.lines, container=container, key=key)
    if isinstance(spec, int):
        ids = [spec]
    elif isinstance(spec, str):
        ids = []
        for part in spec.split(","):
            part = part.strip()
            try:
                if "-" in part:
                    a, b = part.split("-")
                    ids.extend(range(int(a), int(b) + 1))
                else:
                    ids.append(int(part))
            except ValueError:
                raise _err(f"{what}: bad bus range {part!r}", sf.lines, container=container,
                           key=key) from None
    elif isinstance(spec, list):
        ids = spec
    else:
        raise _err(f"{what}: bus list expected", sf.lines, container=container, key=key)
    for b in ids:
        if not isinstance(b, int) or not 1 <= b <= n:
            raise _err(f"{what}: bus {b!r} out of range 1..{n}", sf.lines, container=container, key=key)
    return [b - 1 for b in ids]


def _num(d, key, sf, where, default=None, positive=False, nonneg=False):
    if key not in d:
        if default is None:
            raise _err(f"{where}.{key}: required", sf.lines, container=d)
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise _err(f"{where}.{key}: number expected, got {v!r}", sf.lines, container=d, key=key)
    if positive and not v > 0:
        raise _err(f"{where}.{key}: must be positive", sf.lines, container=d, key=key)
    if nonneg and v < 0:
        raise _err(f"{where}.{key}: must be nonnegative", sf.lines, container=d, key=key)
    return float(v)


def _injections(sf: ScenarioFile, net: PowerNetwork) -> InjectionProfile:
    sec = sf.injections
    n = net.n_buses
    base = sec.get("base", "case" if net.injections is not None else None)
    if base is None:
        base_vals = np.zeros(n)
    elif base == "case":
        if net.injections is None:
            raise _err("injections.base: the case has no injection records", sf.lines, "injections")
        base_vals = net.injections.copy()
    elif isinstance(base, list) and len(base) == n:
        base_vals = np.array(base, dtype=float)
    else:
        raise _err(f"injections.base: 'case' or a list of {n} numbers expected", sf.lines,
                   container=sec, key="base")
    comps: list = [Constant(float(v)) for v in base_vals]
    for k, prof in enumerate(sec.get("profiles") or []):
        where = f"injections.profiles[{k}]"
        if not isinstance(prof, dict):
            raise _err(f"{where}: mapping expected", sf.lines, "injections")
        buses = _bus_list(prof.get("buses"), n, where, sf, prof, "buses")
        fam = prof.get("family")
        try:
            for i in buses:
                if fam == "constant":
                    comps[i] = Constant(_num(prof, "value", sf, where, default=float(base_vals[i])))
                elif fam == "sinusoidal_window":
                    comps[i] = SinusoidalWindow(
                        _num(prof, "p0", sf, where, default=float(base_vals[i])),
                        _num(prof, "amplitude_fraction", sf, where),
                        _num(prof, "angular_rate", sf, where),
                        _num(prof, "t_on", sf, where, nonneg=True),
                        _num(prof, "t_off", sf, where, nonneg=True))
                elif fam == "piecewise_constant":
                    comps[i] = PiecewiseConstant(tuple(tuple(bp) for bp in prof.get("breakpoints") or ()))
                else:
                    raise _err(f"{where}.family: unknown profile family {fam!r}", sf.lines,
                               container=prof, key="family")
        except (InjectionError, TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioFileError):
                raise
            raise _err(f"{where}: {exc}", sf.lines, container=prof) from None
    return InjectionProfile(comps)


def _band(spec, sf, where, container, key) -> FrequencyBand:
    if not (isinstance(spec, list) and len(spec) == 4):
        raise _err(f"{where}: [lower, lower_thr, upper_thr, upper] expected", sf.lines,
                   container=container, key=key)
    try:
        return FrequencyBand(*(float(v) for v in spec))
    except (ValueError, TypeError) as exc:
        raise _err(f"{where}: {exc}", sf.lines, container=container, key=key) from None


def _bus_controller(spec: dict, sf, where) -> BusController:
    band = _band(spec.get("band"), sf, f"{where}.band", spec, "band")
    family = spec.get("class_k", "linear")
    gamma = _num(spec, "gamma", sf, where, positive=True)
    if family == "linear":
        k = LinearClassK(gamma)
    elif family == "tanh":
        k = TanhClassK(gamma, _num(spec, "scale", sf, where, positive=True))
    else:
        raise _err(f"{where}.class_k: 'linear' or 'tanh' expected", sf.lines, container=spec, key="class_k")
    return BusController(band, k, k)


def _controller(sf: ScenarioFile, net: PowerNetwork) -> ControllerConfig | None:
    sec = sf.controller
    if sec is None:
        return None
    n = net.n_buses
    ids = (_bus_list(sec["buses"], n, "controller.buses", sf, sec, "buses")
           if "buses" in sec else list(net.controlled))
    stray = sorted(set(ids) - set(net.controlled))
    if stray:
        raise _err(f"controller.buses: {[b + 1 for b in stray]} not in the case's controlled set",
                   sf.lines, "controller", container=sec, key="buses")
    overrides = sec.get("overrides") or {}
    buses = {}
    for i in ids:
        spec = {**{k: v for k, v in sec.items() if k in ("band", "class_k", "gamma", "scale")},
                **(overrides.get(i + 1) or {})}
        if isinstance(sec, _Map):
            spec = _Map(spec)
            spec.key_lines = sec.key_lines
            spec.line = sec.line
        buses[i] = _bus_controller(spec, sf, "controller")
    t_act = _num(sec, "activation_time", sf, "controller", default=0.0, nonneg=True)
    enabled = sec.get("enabled", True)
    if not isinstance(enabled, bool):
        raise _err("controller.enabled: true or false expected", sf.lines, container=sec, key="enabled")
    return ControllerConfig(buses, t_act, enabled)


def _signal(spec, n_c: int, sf, where, container, key):
    if spec is None or spec == "zero":
        return ZeroError()
    if not isinstance(spec, dict) or "kind" not in spec:
        raise _err(f"{where}: error signal mapping with 'kind' expected", sf.lines,
                   container=container, key=key)
    kind = spec["kind"]

    def vec(name):
        v = spec.get(name)
        vals = [v] * n_c if isinstance(v, (int, float)) and not isinstance(v, bool) else v
        if not isinstance(vals, list) or len(vals) != n_c:
            raise _err(f"{where}.{name}: number or list of {n_c} numbers expected", sf.lines,
                       container=spec, key=name)
        return tuple(float(x) for x in vals)

    if kind == "constant":
        return ConstantError(vec("values"))
    if kind == "relative":
        return RelativeError(_num(spec, "fraction", sf, where))
    if kind == "sinusoid":
        return SinusoidError(vec("amplitude"), vec("rate"), vec("phase"))
    if kind == "held_random":
        return HeldRandomError(vec("bound"), _num(spec, "hold", sf, where, positive=True),
                               int(spec.get("seed", 0)))
    raise _err(f"{where}.kind: unknown error signal {kind!r}", sf.lines, container=spec, key="kind")


def _uncertainty(sf, net, cfg, inj) -> tuple[UncertaintyModel | None, float | None]:
    sec = (sf.controller or {}).get("uncertainty")
    if sec is None or cfg is None:
        return None, None
    ids = cfg.bus_ids
    n_c = len(ids)
    e_hat_spec = sec.get("damping_hat")
    if e_hat_spec is None:
        e_hat = {i: float(net.damping[i]) for i in ids}
    elif isinstance(e_hat_spec, (int, float)) and not isinstance(e_hat_spec, bool):
        e_hat = {i: float(e_hat_spec) for i in ids}
    else:
        e_hat = {i: float(e_hat_spec[i + 1]) for i in ids}
    sigs = {name: _signal(sec.get(name), n_c, sf, f"controller.uncertainty.{name}", sec, name)
            for name in ("omega_error", "flow_error", "injection_error")}
    bspec = sec.get("bounds", "auto")
    if bspec == "auto":
        inj_sup = np.array([max_abs(inj.components[i]) for i in ids])
        bounds = {}
        for k, i in enumerate(ids):
            om = sigs["omega_error"].sup(np.zeros(n_c))[k] if not isinstance(sigs["omega_error"], RelativeError) else None
            fl = sigs["flow_error"].sup(np.zeros(n_c))[k] if not isinstance(sigs["flow_error"], RelativeError) else None
            if om is None or fl is None:
                raise _err("controller.uncertainty.bounds: 'auto' needs absolute omega/flow errors",
                           sf.lines, container=sec, key="bounds")
            bounds[i] = ErrorBounds(float(om), float(fl), float(sigs["injection_error"].sup(inj_sup)[k]),
                                    abs(e_hat[i] - float(net.damping[i])))
    elif isinstance(bspec, dict):
        b = ErrorBounds(*(_num(bspec, k, sf, "controller.uncertainty.bounds", default=0.0, nonneg=True)
                          for k in ("omega", "flow", "injection", "damping")))
        bounds = {i: b for i in ids}
    else:
        raise _err("controller.uncertainty.bounds: 'auto' or a mapping expected", sf.lines,
                   container=sec, key="bounds")
    model = UncertaintyModel(bounds, e_hat, **sigs)

    dspec = sec.get("delta", "auto")
    if dspec == "auto":
        deltas = []
        for i in ids:
            bc = cfg.buses[i]
            if not isinstance(bc.alpha_upper, LinearClassK):
                raise _err("controller.uncertainty: the robust margin needs linear class-K",
                           sf.lines, "controller")
            d = smallest_feasible_delta(bc.band, bc.alpha_upper.gamma, e_hat[i], bounds[i])
            if d is None:
                raise _err(f"controller.uncertainty: no feasible robust margin for bus {i + 1}",
                           sf.lines, "controller")
            deltas.append(d)
        delta = max(deltas)
    else:
        delta = _num(sec, "delta", sf, "controller.uncertainty", positive=True)
        for i in ids:
            bc = cfg.buses[i]
            ok, slacks = robust_margin_feasible(bc.band, bc.alpha_upper.gamma, e_hat[i], bounds[i], delta)
            if not ok:
                raise _err(f"controller.uncertainty.delta: margin {delta} infeasible at bus {i + 1} "
                           f"(slacks {slacks[0]:.3g}, {slacks[1]:.3g})", sf.lines,
                           container=sec, key="delta")
    return model, delta


def _initial(sf, net, inj, mode) -> SystemState:
    spec = sf.simulation.get("initial", "equilibrium")
    if spec == "equilibrium":
        eq = equilibrium(net, inj.eval(0.0), mode)
        omega = np.full(net.n_buses, eq.omega_inf)
        return SystemState(omega, lam=eq.lam_inf.copy(), theta=eq.theta_inf.copy())
    if spec == "zero":
        return SystemState(np.zeros(net.n_buses), lam=np.zeros(net.n_lines), theta=np.zeros(net.n_buses))
    if isinstance(spec, dict):
        def arr(name):
            return None if name not in spec else np.array(spec[name], dtype=float)
        omega = arr("omega")
        if omega is None:
            raise _err("simulation.initial.omega: required", sf.lines, container=spec)
        return SystemState(omega, lam=arr("lam"), theta=arr("theta"))
    raise _err("simulation.initial: 'equilibrium', 'zero' or a mapping expected", sf.lines,
               "simulation", container=sf.simulation, key="initial")


def build(sf: ScenarioFile, *, case_override=None, open_loop: bool = False) -> Experiment:
    """Resolve a scenario file into a validated :class:`Experiment`.

    Raises:
        ScenarioFileError: for any malformed field or violated invariant.
    """
    try:
        return _build(sf, case_override, open_loop)
    except ScenarioFileError as exc:
        if exc.path is None and sf.source is not None:
            raise ScenarioFileError(exc.message, exc.lineno, sf.source) from None
        raise


def _build(sf: ScenarioFile, case_override, open_loop: bool) -> Experiment:
    from .simulation import Scenario

    try:
        net = _load_network(sf, case_override)
    except NetworkError as exc:
        raise _err(f"case: {exc}", sf.lines, "case", "network") from None
    units = sf.units
    unit = units.get("frequency", "rad/s")
    if unit not in ("rad/s", "Hz"):
        raise _err("units.frequency: 'rad/s' or 'Hz' expected", sf.lines, container=units, key="frequency")
    base_hz = _num(units, "base_hz", sf, "units", default=60.0, positive=True)

    inj = _injections(sf, net)
    cfg = _controller(sf, net)
    if open_loop and cfg is not None:
        cfg = ControllerConfig(cfg.buses, cfg.activation_time, False)
    sim = sf.simulation
    mode = sim.get("mode", LINEAR)
    if mode not in MODES:
        raise _err(f"simulation.mode: one of {MODES} expected", sf.lines, container=sim, key="mode")
    h = _num(sim, "h", sf, "simulation", default=1e-3, positive=True)
    T = _num(sim, "T", sf, "simulation", positive=True)
    zoh = sim.get("zero_order_hold", False)
    init = _initial(sf, net, inj, mode)
    unc, delta = _uncertainty(sf, net, cfg, inj)
    if open_loop:
        unc = None

    scenario = Scenario(net, inj, init, cfg, mode, h, T, unit, base_hz, bool(zoh),
                        {"name": sf.output.get("name", "run")})
    problems = scenario.problems()
    if problems:
        raise _err(f"invalid scenario: {'; '.join(problems)}", sf.lines, "simulation")

    chk = sf.checks
    run = chk.get("run", "all")
    names = CHECKS if run == "all" else (() if run == "none" else tuple(run))
    bad = [c for c in names if c not in CHECKS]
    if bad:
        raise _err(f"checks.run: unknown checks {bad}; known: {list(CHECKS)}", sf.lines,
                   container=chk, key="run")
    d = chk.get("delta", "auto")
    plan_delta = (delta or 0.0) if d == "auto" else _num(chk, "delta", sf, "checks", nonneg=True)
    plan = CheckPlan(names, plan_delta,
                     _num(chk, "zero_tol", sf, "checks", default=1e-6, positive=True),
                     _num(chk, "convergence_tol", sf, "checks", default=1e-4, positive=True),
                     _num(chk, "invariance_tol", sf, "checks", default=0.0, nonneg=True))
    return Experiment(scenario, unc, plan, dict(sf.output), sf.output.get("name", "run"))
