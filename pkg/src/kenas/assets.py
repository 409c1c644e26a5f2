"""Paths to data files shipped with the package (profiles, rules, examples)."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .errors import KenasError

PROFILE_NAMES = ("parallel8", "parallel16")


def _data_root() -> Path:
    return Path(str(resources.files("kenas").joinpath("data")))


def profile_path(name: str) -> Path:
    if name not in PROFILE_NAMES:
        raise KenasError(f"unknown bundled profile {name!r}, expected one of {PROFILE_NAMES}")
    return _data_root() / "profiles" / f"{name}.json"


def default_rules_path() -> Path:
    return _data_root() / "rules" / "default.rules"


def example_path(name: str) -> Path:
    path = _data_root() / "examples" / name
    if not path.exists():
        raise KenasError(f"no bundled example file {name!r}")
    return path
