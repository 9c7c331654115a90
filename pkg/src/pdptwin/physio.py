"""Synthetic respiratory physiology for training data and closed-loop runs.

Each vital relaxes exponentially toward a target determined by the
ventilator settings and the worst active respiratory complication:

    TV* = TVOL*(1 - 0.5*sev)            if on, else 400*(1 - 0.8*sev)
    OS* = clamp(82 + 18*FIOX + 0.3*(PEEP-5) - 25*sev, 50, 100)  if on,
          clamp(97 - 30*sev, 50, 100)   otherwise
    CD* = 40 + 15*sev - 0.8*(RERA - 12 if on else 0)
    RR* = RERA if on else 14 + 8*sev
    HR* = 75 + 40*sev

with time constants TV 10 s, OS 30 s, CD 45 s, RR 5 s, HR 20 s and
additive zero-mean noise of 1% of the target per 1 Hz tick. The
constants are simulator parameters, not physiological claims: they are
chosen so the default safe ranges break at severity >= 0.3 and remain
recoverable by admissible ventilator settings.

Complication severity ramps linearly from onset over a kind-specific
ramp time; concurrent complications aggregate by max. Scenario scripts
are key-value files (`duration`, `inject = t,kind,severity`,
`set = t,param,value`, `init.<vital> = v`; `clear = t,kind` is also
accepted).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from .errors import UnknownKind
from .kvconfig import parse_kv, single
from .labeling import UNITS, Signal, SignalBundle
from .sha import PARAMETERS, VITALS

SETTING_RANGES = {
    "FIOX": (0.0, 1.0),
    "PEEP": (5.0, 25.0),
    "RERA": (6.0, 18.0),
    "TVOL": (300.0, 500.0),
}

TAU = {"TV": 10.0, "OS": 30.0, "CD": 45.0, "RR": 5.0, "HR": 20.0}

#: kind -> (default severity, ramp seconds)
COMPLICATION_KINDS = {
    "asthma": (0.5, 10.0),
    "pneumonia": (0.4, 60.0),
    "ards": (0.7, 30.0),
    "copd": (0.3, 120.0),
}


@dataclass
class VentilatorSettings:
    FIOX: float = 0.6
    PEEP: float = 10.0
    RERA: float = 14.0
    TVOL: float = 450.0
    on: bool = False

    def clamped(self) -> "VentilatorSettings":
        out = replace(self)
        for name, (lo, hi) in SETTING_RANGES.items():
            setattr(out, name, min(max(getattr(self, name), lo), hi))
        return out

    def reported(self) -> dict[str, float]:
        """Parameter values as a monitor would log them (0 while off)."""
        if not self.on:
            return {name: 0.0 for name in PARAMETERS}
        return {name: getattr(self, name) for name in PARAMETERS}


@dataclass
class Complication:
    kind: str
    severity: float
    onset: float

    def effective(self, t: float) -> float:
        ramp = COMPLICATION_KINDS[self.kind][1]
        if t <= self.onset:
            return 0.0
        if ramp <= 0:
            return self.severity
        return self.severity * min(1.0, (t - self.onset) / ramp)


@dataclass
class PatientState:
    TV: float = 400.0
    OS: float = 97.0
    CD: float = 40.0
    HR: float = 75.0
    RR: float = 14.0
    clock: float = 0.0
    complications: dict[str, Complication] = field(default_factory=dict)

    def sev_resp(self) -> float:
        if not self.complications:
            return 0.0
        return max(c.effective(self.clock) for c in self.complications.values())

    def vitals(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in VITALS}


def inject_complication(state: PatientState, kind: str, severity: float | None = None) -> None:
    if kind not in COMPLICATION_KINDS:
        raise UnknownKind(kind)
    if severity is None:
        severity = COMPLICATION_KINDS[kind][0]
    if not 0.0 <= severity <= 1.0:
        raise ValueError("severity must be in [0, 1]")
    state.complications[kind] = Complication(kind, severity, state.clock)


def clear_complication(state: PatientState, kind: str) -> None:
    if kind not in COMPLICATION_KINDS:
        raise UnknownKind(kind)
    state.complications.pop(kind, None)


def targets(state: PatientState, settings: VentilatorSettings) -> dict[str, float]:
    sev = state.sev_resp()
    s = settings
    if s.on:
        tv = s.TVOL * (1.0 - 0.5 * sev)
        os_ = min(max(82.0 + 18.0 * s.FIOX + 0.3 * (s.PEEP - 5.0) - 25.0 * sev, 50.0), 100.0)
        cd = 40.0 + 15.0 * sev - 0.8 * (s.RERA - 12.0)
        rr = s.RERA
    else:
        tv = 400.0 * (1.0 - 0.8 * sev)
        os_ = min(max(97.0 - 30.0 * sev, 50.0), 100.0)
        cd = 40.0 + 15.0 * sev
        rr = 14.0 + 8.0 * sev
    hr = 75.0 + 40.0 * sev
    return {"TV": tv, "OS": os_, "CD": cd, "RR": rr, "HR": hr}


def tick(
    state: PatientState,
    settings: VentilatorSettings,
    dt: float,
    rng: np.random.Generator | None = None,
    noise: bool = True,
) -> PatientState:
    """Advance the patient by dt seconds (exact exponential relaxation)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    goal = targets(state, settings)
    new = replace(state, clock=state.clock + dt,
                  complications=dict(state.complications))
    for name, target in goal.items():
        x = getattr(state, name)
        x += (target - x) * (1.0 - math.exp(-dt / TAU[name]))
        if noise and rng is not None:
            x += rng.normal(0.0, 0.01 * abs(target))
        x = max(x, 0.0)
        if name == "OS":
            x = min(max(x, 50.0), 100.0)
        setattr(new, name, x)
    return new


# ---------------------------------------------------------------------------
# scenario scripts


@dataclass
class ScenarioScript:
    duration: float
    injections: list[tuple[float, str, float]] = field(default_factory=list)
    clears: list[tuple[float, str]] = field(default_factory=list)
    settings_timeline: list[tuple[float, str, float]] = field(default_factory=list)
    initial: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for t, kind, _ in self.injections:
            if not 0 <= t <= self.duration:
                raise ValueError(f"injection at t={t} outside script duration")
            if kind not in COMPLICATION_KINDS:
                raise UnknownKind(kind)


def load_scenario(path: str | Path) -> ScenarioScript:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


def parse_scenario(text: str) -> ScenarioScript:
    kv = parse_kv(text)
    duration = float(single(kv, "duration"))
    injections = []
    for spec in kv.get("inject", []):
        t, kind, sev = (p.strip() for p in spec.split(","))
        injections.append((float(t), kind, float(sev)))
    clears = []
    for spec in kv.get("clear", []):
        t, kind = (p.strip() for p in spec.split(","))
        clears.append((float(t), kind))
    timeline = []
    for spec in kv.get("set", []):
        t, param, value = (p.strip() for p in spec.split(","))
        timeline.append((float(t), param, float(value)))
    initial = {}
    for key, values in kv.items():
        if key.startswith("init."):
            initial[key.split(".", 1)[1]] = float(values[-1])
    return ScenarioScript(duration, injections, clears, timeline, initial)


Controller = Callable[[float, dict[str, float], VentilatorSettings], VentilatorSettings | None]


def _apply_setting(settings: VentilatorSettings, param: str, value: float) -> VentilatorSettings:
    if param == "on":
        return replace(settings, on=value > 0)
    if param not in SETTING_RANGES:
        raise UnknownKind(f"unknown setting {param!r}")
    return replace(settings, **{param: value}).clamped()


def run_scenario(
    script: ScenarioScript,
    controller: Controller | Literal["script"] | None = None,
    rng: np.random.Generator | int | None = None,
    noise: bool = True,
    settings: VentilatorSettings | None = None,
) -> tuple[SignalBundle, PatientState, VentilatorSettings]:
    """Tick the scenario at 1 Hz, emitting all nine monitor series.

    controller=None leaves settings untouched, "script" replays the
    script's recorded timeline, and a callable is consulted every tick
    with (t, vitals, settings) and may return replacement settings.
    """
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    state = PatientState(**{k: v for k, v in script.initial.items() if k in VITALS})
    settings = settings if settings is not None else VentilatorSettings()
    series: dict[str, list[tuple[float, float]]] = {n: [] for n in VITALS + PARAMETERS}

    def emit(t: float):
        for name in VITALS:
            series[name].append((t, getattr(state, name)))
        for name, value in settings.reported().items():
            series[name].append((t, value))

    pending_inj = sorted(script.injections)
    pending_clr = sorted(script.clears)
    pending_set = sorted(script.settings_timeline, key=lambda s: s[0])
    t = 0.0
    emit(t)
    steps = int(round(script.duration))
    for _ in range(steps):
        while pending_inj and pending_inj[0][0] <= t:
            _, kind, sev = pending_inj.pop(0)
            inject_complication(state, kind, sev)
        while pending_clr and pending_clr[0][0] <= t:
            _, kind = pending_clr.pop(0)
            clear_complication(state, kind)
        if controller == "script":
            while pending_set and pending_set[0][0] <= t:
                _, param, value = pending_set.pop(0)
                settings = _apply_setting(settings, param, value)
        elif callable(controller):
            update = controller(t, state.vitals(), settings)
            if update is not None:
                settings = update.clamped()
        state = tick(state, settings, 1.0, rng, noise)
        t = state.clock
        emit(t)
    bundle = SignalBundle({n: Signal(n, UNITS[n], s) for n, s in series.items()})
    return bundle, state, settings
