"""Pipeline configuration, stored as JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

DEFAULT_CANDIDATES = ["region", "attack_on", "dcolor", "complex_attack"]


@dataclass
class ValidationConfig:
    B: int = 200
    schemes: list[str] = field(default_factory=lambda: ["RRS", "SRS"])
    fraction: float = 5 / 6
    seed: int | None = None
    alpha: float = 1e-3
    min_segment: float | None = None
    max_lag: int = 10


@dataclass
class PipelineConfig:
    input: str = "reports.csv"
    input_format: str | None = None
    column_map: dict[str, str] = field(default_factory=dict)
    levels: dict[str, list[str] | None] = field(default_factory=dict)
    stoplist: str | None = None
    min_count: int = 5
    topics: int = 100
    kappa: float = 0.001
    lda_tol: float = 1e-5
    lda_max_iter: int = 100
    lda_seed: int | None = None
    candidates: list[str] = field(default_factory=lambda: list(DEFAULT_CANDIDATES))
    ordered: list[str] = field(default_factory=list)
    use_topics: bool = True
    alpha: float = 1e-4
    min_segment: float = 0.004
    max_depth: int | None = None
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    seed: int = 1
    threads: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        if isinstance(self.validation, dict):
            self.validation = _build(ValidationConfig, self.validation, "validation")
        self.check()

    def check(self):
        if self.topics < 1:
            raise ConfigError("topics must be >= 1")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.min_segment <= 0 or 1 <= self.min_segment < 2:
            raise ConfigError("min_segment must be a fraction in (0, 1) or a count >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        v = self.validation
        if v.B < 1:
            raise ConfigError("validation.B must be >= 1")
        if not 0 < v.fraction <= 1:
            raise ConfigError("validation.fraction must lie in (0, 1]")
        bad = set(v.schemes) - {"RRS", "SRS"}
        if bad:
            raise ConfigError(f"unknown resampling schemes {sorted(bad)}")

    def stage_seeds(self) -> tuple[int, int]:
        """``(lda_seed, validation_seed)``, derived from ``seed`` unless set explicitly."""
        children = np.random.SeedSequence(self.seed).spawn(2)
        derived = [int(c.generate_state(1)[0]) for c in children]
        lda = self.lda_seed if self.lda_seed is not None else derived[0]
        val = self.validation.seed if self.validation.seed is not None else derived[1]
        return lda, val

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        return _build(cls, obj, "config")

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(obj)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(text)


def _build(cls, obj: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    try:
        return cls(**obj)
    except TypeError as exc:
        raise ConfigError(f"bad {where}: {exc}") from None
