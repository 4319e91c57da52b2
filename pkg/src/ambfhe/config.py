"""Versioned JSON configuration shared by the command-line tools.

Only path entries may be overridden from the environment
(``AMBFHE_KEYS_DIR``, ``AMBFHE_DB``, ``AMBFHE_STORE``, ``AMBFHE_REPORTS``).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .biometrics import DEFAULT_DIM, DEFAULT_SIGMA
from .ckks import PRESET_NAMES
from .fusion import NAMED_POLICIES

CONFIG_VERSION = 1

ENV_PATHS = {
    "keys_dir": "AMBFHE_KEYS_DIR",
    "db": "AMBFHE_DB",
    "store": "AMBFHE_STORE",
    "reports": "AMBFHE_REPORTS",
}


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    keys_dir: str = "keys"
    db: str = "data/synthetic.afdb"
    store: str = "data/references.log"
    reports: str = "reports"


@dataclass
class Config:
    preset: str = "PN12QP109"
    policy: str = "amb-fhe-1"
    fmr: float = 0.001  # fraction, used when thresholds are calibrated
    thresholds: list | None = None  # explicit per-stage taus override calibration
    template_len: int = DEFAULT_DIM
    subjects: int = 533
    sigma: dict = field(default_factory=lambda: dict(DEFAULT_SIGMA))
    seed: int = 42
    retry_limit: int = 5
    retry_window: float = 300.0
    host: str = "127.0.0.1"
    port: int = 7411
    paths: Paths = field(default_factory=Paths)
    version: int = CONFIG_VERSION

    def validate(self) -> "Config":
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if self.preset.upper() not in PRESET_NAMES:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.policy not in NAMED_POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if not 0 < self.fmr < 1:
            raise ConfigError("fmr must be a fraction in (0, 1)")
        if self.template_len < 1 or self.subjects < 2:
            raise ConfigError("template_len must be positive and subjects >= 2")
        if self.retry_limit < 1 or self.retry_window <= 0:
            raise ConfigError("retry limit and window must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path=None, env=None) -> Config:
    """Read ``path`` (defaults when None), then apply path overrides from ``env``."""
    env = os.environ if env is None else env
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        if "version" not in data:
            raise ConfigError(f"{path}: missing required key 'version'")
    known = {f.name for f in fields(Config)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    path_data = data.pop("paths", {}) or {}
    bad = set(path_data) - {f.name for f in fields(Paths)}
    if bad:
        raise ConfigError(f"unknown path keys: {', '.join(sorted(bad))}")
    paths = Paths(**path_data)
    for key, var in ENV_PATHS.items():
        if env.get(var):
            setattr(paths, key, env[var])
    try:
        cfg = Config(**data, paths=paths)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
