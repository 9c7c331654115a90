"""Vital-sign labeling: timestamped signals to discrete event traces.

Events are emitted on threshold crossings of the five vitals against
their safe ranges (high / low on leaving, ok on re-entry, boundary
values counting as inside), on strict changes of the four ventilator
parameters with both endpoints nonzero (up / down), and on the joint
activation (`on`: every parameter 0 -> positive) or deactivation
(`off`) of the ventilator. No event is emitted at the first sample; the
initial in/out state is taken as given.

Crossings are detected on the resampled grid, mirroring a discrete
monitor. Multiple events at one timestamp are ordered vitals first,
then parameters, each in declaration order (CD HR OS RR TV; FIOX PEEP
RERA TVOL).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySignal, MissingSignal, OutOfSpan, ParseError, TooFewSamples
from .kvconfig import parse_kv, single
from .sha import DEFAULT_SAFE_RANGES, PARAMETERS, VITALS


@dataclass
class Signal:
    name: str
    unit: str
    samples: list[tuple[float, float]]  # (t nondecreasing, finite value)

    def times(self) -> np.ndarray:
        return np.asarray([t for t, _ in self.samples], dtype=float)

    def values(self) -> np.ndarray:
        return np.asarray([v for _, v in self.samples], dtype=float)


UNITS = {
    "CD": "mmHg",
    "HR": "1/min",
    "OS": "%",
    "RR": "1/min",
    "TV": "mL",
    "FIOX": "frac",
    "PEEP": "cmH2O",
    "RERA": "1/min",
    "TVOL": "mL",
}


@dataclass
class SignalBundle:
    """All nine series (five vitals, four ventilator parameters)."""

    signals: dict[str, Signal]

    def __post_init__(self):
        for name in VITALS + PARAMETERS:
            if name not in self.signals:
                raise MissingSignal(name)

    def __getitem__(self, name: str) -> Signal:
        try:
            return self.signals[name]
        except KeyError:
            raise MissingSignal(name) from None

    def span(self) -> tuple[float, float]:
        t = self.signals["TV"].times()
        return float(t[0]), float(t[-1])

    def resampled(self, step: float) -> "SignalBundle":
        return SignalBundle({k: resample(s, step) for k, s in self.signals.items()})


@dataclass
class LabelingConfig:
    safe_ranges: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_SAFE_RANGES)
    )
    resample_step: float = 1.0

    def __post_init__(self):
        for name, (lo, hi) in self.safe_ranges.items():
            if not lo < hi:
                raise ValueError(f"range for {name} must satisfy lo < hi")
        if self.resample_step <= 0:
            raise ValueError("resample step must be > 0")


def load_labeling_config(path: str | Path) -> LabelingConfig:
    kv = parse_kv(Path(path).read_text(encoding="utf-8"))
    ranges = dict(DEFAULT_SAFE_RANGES)
    for key, values in kv.items():
        if key.startswith("range."):
            vital = key.split(".", 1)[1]
            lo, hi = values[-1].split(",")
            ranges[vital] = (float(lo), float(hi))
    step = float(single(kv, "resample.step", "1.0"))
    return LabelingConfig(ranges, step)


@dataclass
class EventTrace:
    events: list[tuple[float, str]]  # (t nondecreasing, event name)

    def names(self) -> list[str]:
        return [e for _, e in self.events]

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


# ---------------------------------------------------------------------------
# transformations


def peak_hold(signal: Signal) -> Signal:
    """Hold the most recent local maximum (strictly above both neighbors).

    Before the first peak the first sample's value is held. Used to tame
    the breathing-induced oscillation of the CD series.
    """
    if len(signal.samples) < 3:
        raise TooFewSamples(f"{signal.name}: peak hold needs >= 3 samples")
    values = signal.values()
    held = np.empty_like(values)
    current = values[0]
    held[0] = current
    for i in range(1, len(values)):
        if 0 < i < len(values) - 1 and values[i] > values[i - 1] and values[i] > values[i + 1]:
            current = values[i]
        held[i] = current
    return Signal(signal.name, signal.unit, [(t, float(v)) for (t, _), v in zip(signal.samples, held)])


def resample(signal: Signal, step: float) -> Signal:
    """Linear interpolation onto a uniform grid from first to last timestamp."""
    if not signal.samples:
        raise EmptySignal(signal.name)
    if step <= 0:
        raise ValueError("step must be > 0")
    t = signal.times()
    v = signal.values()
    n = int(np.floor((t[-1] - t[0]) / step + 1e-9)) + 1
    grid = t[0] + step * np.arange(n)
    out = np.interp(grid, t, v)
    return Signal(signal.name, signal.unit, list(zip(grid.tolist(), out.tolist())))


def label(bundle: SignalBundle, config: LabelingConfig) -> EventTrace:
    """Apply the labeling rules to a bundle resampled onto a shared grid."""
    times = bundle["TV"].times()
    for name in VITALS + PARAMETERS:
        t = bundle[name].times()
        if len(t) != len(times) or not np.allclose(t, times):
            raise ValueError(f"signal {name} is not on the shared time grid")

    vit = {name: bundle[name].values() for name in VITALS}
    par = {name: bundle[name].values() for name in PARAMETERS}
    events: list[tuple[float, str]] = []
    for k in range(1, len(times)):
        t = float(times[k])
        for name in VITALS:
            lo, hi = config.safe_ranges[name]
            prev, cur = vit[name][k - 1], vit[name][k]
            if cur > hi and prev <= hi:
                events.append((t, f"{name}^high"))
            elif cur < lo and prev >= lo:
                events.append((t, f"{name}^low"))
            elif lo <= cur <= hi and not (lo <= prev <= hi):
                events.append((t, f"{name}^ok"))
        all_on = all(par[n][k] > 0 and par[n][k - 1] == 0 for n in PARAMETERS)
        all_off = all(par[n][k] == 0 and par[n][k - 1] > 0 for n in PARAMETERS)
        if all_on:
            events.append((t, "on"))
        elif all_off:
            events.append((t, "off"))
        else:
            for name in PARAMETERS:
                prev, cur = par[name][k - 1], par[name][k]
                if prev == 0 or cur == 0:
                    continue
                if cur > prev:
                    events.append((t, f"{name}^up"))
                elif cur < prev:
                    events.append((t, f"{name}^down"))
    return EventTrace(events)


def label_pair(
    prev: dict[str, float], cur: dict[str, float], t: float, config: LabelingConfig
) -> list[str]:
    """Incremental labeling of one consecutive sample pair (runtime path)."""
    events: list[str] = []
    for name in VITALS:
        lo, hi = config.safe_ranges[name]
        p, c = prev[name], cur[name]
        if c > hi and p <= hi:
            events.append(f"{name}^high")
        elif c < lo and p >= lo:
            events.append(f"{name}^low")
        elif lo <= c <= hi and not (lo <= p <= hi):
            events.append(f"{name}^ok")
    if all(cur[n] > 0 and prev[n] == 0 for n in PARAMETERS):
        events.append("on")
    elif all(cur[n] == 0 and prev[n] > 0 for n in PARAMETERS):
        events.append("off")
    else:
        for name in PARAMETERS:
            p, c = prev[name], cur[name]
            if p == 0 or c == 0:
                continue
            if c > p:
                events.append(f"{name}^up")
            elif c < p:
                events.append(f"{name}^down")
    return events


def vitals_flags(
    bundle: SignalBundle, config: LabelingConfig, t: float
) -> tuple[bool, bool, bool, bool, bool, bool]:
    """(r1..r5, r_on) at time t: in-range flags plus ventilation-active."""
    t0, t1 = bundle.span()
    if not (t0 - 1e-9 <= t <= t1 + 1e-9):
        raise OutOfSpan(f"t={t} outside [{t0}, {t1}]")
    flags = []
    times = bundle["TV"].times()
    k = int(np.searchsorted(times, t + 1e-9) - 1)
    k = max(k, 0)
    for name in VITALS:
        lo, hi = config.safe_ranges[name]
        v = bundle[name].values()[k]
        flags.append(bool(lo <= v <= hi))
    r_on = any(bundle[name].values()[k] > 0 for name in PARAMETERS)
    return (*flags, r_on)


# ---------------------------------------------------------------------------
# CSV interchange (long format: t,name,value)


def bundle_to_csv(bundle: SignalBundle) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["t", "name", "value"])
    for name in VITALS + PARAMETERS:
        for t, v in bundle[name].samples:
            w.writerow([format(t, "g"), name, format(v, ".6g")])
    return out.getvalue()


def bundle_from_csv(text: str) -> SignalBundle:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [c.strip() for c in rows[0]] != ["t", "name", "value"]:
        raise ParseError("signals CSV must start with header 't,name,value'", 1)
    series: dict[str, list[tuple[float, float]]] = {n: [] for n in VITALS + PARAMETERS}
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            t, name, value = float(row[0]), row[1].strip(), float(row[2])
        except (ValueError, IndexError):
            raise ParseError("expected 't,name,value' row", i) from None
        if name not in series:
            raise ParseError(f"unknown signal {name!r}", i)
        series[name].append((t, value))
    missing = [n for n, s in series.items() if not s]
    if missing:
        raise MissingSignal(", ".join(missing))
    return SignalBundle({n: Signal(n, UNITS[n], s) for n, s in series.items()})


def load_bundle(path: str | Path) -> SignalBundle:
    return bundle_from_csv(Path(path).read_text(encoding="utf-8"))


def save_bundle(bundle: SignalBundle, path: str | Path) -> None:
    Path(path).write_text(bundle_to_csv(bundle), encoding="utf-8")
