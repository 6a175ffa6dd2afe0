"""Application configuration: an INI file, overridden by command-line flags."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

from specloop.oracle import (
    HttpOracle, Oracle, RecordingOracle, ReplayOracle, StochasticOracle, load_profiles,
)
from specloop.verifier import KEY_PATTERNS, MockVerifier, PatternTable, SubprocessVerifier, Verifier


class ConfigError(Exception):
    pass


@dataclass
class AppConfig:
    oracle: str = "replay"  # replay | http | stochastic
    fixture: Optional[str] = None
    record: Optional[str] = None
    profiles: Optional[str] = None
    model: str = "gpt-4o"
    api_base: Optional[str] = None
    max_retries: int = 3
    oracle_timeout: float = 120.0
    context_window: Optional[int] = None
    params: dict = field(default_factory=dict)

    verifier: str = "mock"  # mock | subprocess
    rules: Optional[str] = None
    command: Optional[str] = None
    patterns: Optional[str] = None
    verifier_timeout: float = 300.0

    seed: int = 0
    parallelism: int = 1
    templates: Optional[str] = None

    @classmethod
    def load(cls, path: Optional[str] = None, **overrides: Any) -> "AppConfig":
        cfg = cls()
        if path:
            cfg._read_ini(Path(path))
        for key, value in overrides.items():
            if value is not None:
                if not hasattr(cfg, key):
                    raise ConfigError(f"unknown setting {key!r}")
                setattr(cfg, key, value)
        cfg.validate()
        return cfg

    def _read_ini(self, path: Path) -> None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base = path.parent

        def get(section, key, conv=str, attr=None, is_path=False):
            if parser.has_option(section, key):
                raw = parser.get(section, key).strip()
                try:
                    value = conv(raw)
                except ValueError as exc:
                    raise ConfigError(f"{path}: [{section}] {key}: {exc}") from None
                if is_path:
                    value = str((base / value).resolve())
                setattr(self, attr or key, value)

        get("oracle", "type", attr="oracle")
        get("oracle", "fixture", is_path=True)
        get("oracle", "record", is_path=True)
        get("oracle", "profiles", is_path=True)
        get("oracle", "model")
        get("oracle", "api_base")
        get("oracle", "max_retries", int)
        get("oracle", "timeout", float, attr="oracle_timeout")
        get("oracle", "context_window", int)
        get("oracle", "params", json.loads)
        get("verifier", "type", attr="verifier")
        get("verifier", "rules", is_path=True)
        get("verifier", "command")
        get("verifier", "patterns", is_path=True)
        get("verifier", "timeout", float, attr="verifier_timeout")
        get("run", "seed", int)
        get("run", "parallelism", int)
        get("run", "templates", is_path=True)

    def validate(self) -> None:
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if self.oracle not in ("replay", "http", "stochastic"):
            raise ConfigError(f"unknown oracle type {self.oracle!r}")
        if self.verifier not in ("mock", "subprocess"):
            raise ConfigError(f"unknown verifier type {self.verifier!r}")
        if self.oracle == "replay":
            _need_file(self.fixture, "replay oracle needs an existing fixture file")
        if self.oracle == "stochastic":
            _need_file(self.profiles, "stochastic oracle needs a profiles file")
        if self.verifier == "mock":
            _need_file(self.rules, "mock verifier needs a rules file")
        if self.verifier == "subprocess" and not self.command:
            raise ConfigError("subprocess verifier needs a command template")
        if self.patterns:
            _need_file(self.patterns, "pattern table file")
        if self.templates and not Path(self.templates).is_dir():
            raise ConfigError(f"template directory {self.templates} does not exist")

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()

    def build_oracle(self) -> Oracle:
        if self.oracle == "replay":
            return ReplayOracle(self.fixture, self.context_window)
        if self.oracle == "stochastic":
            return StochasticOracle(load_profiles(self.profiles), self.context_window)
        live = HttpOracle(
            self.model, api_base=self.api_base, max_retries=self.max_retries,
            timeout=self.oracle_timeout, context_window=self.context_window, params=self.params,
        )
        if self.record:
            return RecordingOracle(live, ReplayOracle(self.record))
        return live

    def build_verifier(self) -> Verifier:
        if self.verifier == "mock":
            return MockVerifier.load(self.rules)
        patterns = PatternTable.load(self.patterns) if self.patterns else KEY_PATTERNS
        return SubprocessVerifier(self.command, patterns, self.verifier_timeout)

    @property
    def template_dir(self) -> Optional[Path]:
        return Path(self.templates) if self.templates else None


def _need_file(path: Optional[str], what: str) -> None:
    if not path:
        raise ConfigError(what)
    if not Path(path).is_file():
        raise ConfigError(f"{what}: {path} does not exist")
