"""Loaders for the packaged running-example models and configurations."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .dsl import parse_automata
from .kvconfig import parse_kv
from .labeling import LabelingConfig
from .sha import Sha, ShaNetwork, compose_network
from .smc import Requirement, parse_requirements


def _asset_text(name: str) -> str:
    return resources.files("pdptwin.assets").joinpath(name).read_text(encoding="utf-8")


def asset_path(name: str) -> Path:
    return Path(str(resources.files("pdptwin.assets").joinpath(name)))


def physician_sha() -> Sha:
    """The elicited physician-device model (probabilistic choices, delays)."""
    return parse_automata(_asset_text("physician.sha"))[0]


def game_physician_sha() -> Sha:
    """The generalized physician model offering every controllable action."""
    return parse_automata(_asset_text("physician_game.sha"))[0]


def patient_sha() -> Sha:
    return parse_automata(_asset_text("patient.sha"))[0]


def running_example_network(labeling: LabelingConfig | None = None) -> ShaNetwork:
    """Physician-device plus patient, the seed of the exploration campaign."""
    ranges = (labeling or default_labeling_config()).safe_ranges
    return compose_network([physician_sha(), patient_sha()], ranges)


def game_network(labeling: LabelingConfig | None = None) -> ShaNetwork:
    """Generalized physician plus patient, the controller-synthesis input."""
    ranges = (labeling or default_labeling_config()).safe_ranges
    return compose_network([game_physician_sha(), patient_sha()], ranges)


def default_requirements() -> list[Requirement]:
    return parse_requirements(_asset_text("requirements.cfg"))


def default_labeling_config() -> LabelingConfig:
    kv = parse_kv(_asset_text("labeling.cfg"))
    ranges = {}
    for key, values in kv.items():
        if key.startswith("range."):
            lo, hi = values[-1].split(",")
            ranges[key.split(".", 1)[1]] = (float(lo), float(hi))
    step = float(kv.get("resample.step", ["1.0"])[-1])
    return LabelingConfig(ranges, step)


def default_realism_text() -> str:
    return _asset_text("realism.cfg")


def scenario_names() -> list[str]:
    base = resources.files("pdptwin.assets").joinpath("scenarios")
    return sorted(p.name for p in base.iterdir() if p.name.endswith(".cfg"))


def scenario_text(name: str) -> str:
    return resources.files("pdptwin.assets").joinpath("scenarios").joinpath(name).read_text(
        encoding="utf-8"
    )
