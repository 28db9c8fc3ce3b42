"""Run configuration: dataclasses, TOML loading, lossless round-trip."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .keyvalues import KEY_MODES, RADIAL_LAWS, VALUE_MODES, ValueModelConfig

CONDITIONING = ("auto", "plain", "whitened")
PROFILES = ("debug", "fast")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class KeySpec:
    """Key distribution: second-moment structure and radial law."""

    mode: str = "anisotropic-spd"
    cond: float = 10.0
    seed: int = 0  # structure seed for C; shared across run seeds
    radial: str = "fixed"
    pool_size: int = 0

    def validate(self) -> None:
        if self.mode not in KEY_MODES:
            raise ConfigError(f"key.mode must be one of {KEY_MODES}, got {self.mode!r}")
        if self.radial not in RADIAL_LAWS:
            raise ConfigError(f"key.radial must be one of {RADIAL_LAWS}, got {self.radial!r}")
        if self.cond < 1.0:
            raise ConfigError("key.cond must be >= 1")
        if self.mode == "fixed-pool" and self.pool_size < 1:
            raise ConfigError("key.pool_size must be >= 1 in fixed-pool mode")
        if self.seed < 0:
            raise ConfigError("key.seed must be non-negative")


@dataclass
class ValueSpec:
    """Target-value model constants plus the conditioning-norm choice."""

    mode: str = "statistical-linear"
    s_new: float = 0.0
    b_new: float = 1.0
    noise_std: float = 0.0
    direction_mix: float = 0.5
    readout_classes: int = 8
    opt_steps: int = 25
    opt_lr: float = 0.5
    readout_seed: int = 0
    condition_on: str = "auto"

    def validate(self) -> None:
        if self.mode not in VALUE_MODES:
            raise ConfigError(f"value.mode must be one of {VALUE_MODES}, got {self.mode!r}")
        if self.condition_on not in CONDITIONING:
            raise ConfigError(
                f"value.condition_on must be one of {CONDITIONING}, got {self.condition_on!r}"
            )
        try:
            self.to_model_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_model_config(self) -> ValueModelConfig:
        return ValueModelConfig(
            mode=self.mode,
            s_new=self.s_new,
            b_new=self.b_new,
            noise_std=self.noise_std,
            direction_mix=self.direction_mix,
            readout_classes=self.readout_classes,
            opt_steps=self.opt_steps,
            opt_lr=self.opt_lr,
            readout_seed=self.readout_seed,
        )


@dataclass
class NasSpec:
    """Anchor rescaling: the one-line toggle plus pilot settings."""

    enabled: bool = False
    pilot_n: int = 1000
    anchor_override: float | None = None

    def validate(self) -> None:
        if self.pilot_n < 1:
            raise ConfigError("nas.pilot_n must be >= 1")
        if self.anchor_override is not None and self.anchor_override <= 0:
            raise ConfigError("nas.anchor_override must be positive")


@dataclass
class ProbeSpec:
    """Checkpoint cadence and probe batch sizes."""

    checkpoint_every: int = 50
    value_probe_batch: int = 32
    max_edit_probes: int = 256
    paraphrases_per_edit: int = 2
    neighborhood: int = 64
    holdout: int = 128
    sigma_p: float = 0.05
    cos_floor: float = 0.9

    def validate(self) -> None:
        if self.checkpoint_every < 1:
            raise ConfigError("probes.checkpoint_every must be >= 1")
        if self.value_probe_batch < 2:
            raise ConfigError("probes.value_probe_batch must be >= 2")
        if self.neighborhood < 1 or self.holdout < 2:
            raise ConfigError("probes.neighborhood >= 1 and probes.holdout >= 2 required")
        if self.paraphrases_per_edit < 0:
            raise ConfigError("probes.paraphrases_per_edit must be >= 0")
        if not 0 <= self.cos_floor <= 1:
            raise ConfigError("probes.cos_floor must lie in [0, 1]")
        if self.sigma_p < 0:
            raise ConfigError("probes.sigma_p must be >= 0")


@dataclass
class TolSpec:
    """Metric tolerances; eff_tol is the value-space retrieval tolerance."""

    eff_tol: float = 0.05
    gen_relax: float = 1.0
    spe_tol: float = 0.1
    constraint_rtol: float = 1e-8
    score_threshold: float = 60.0

    def validate(self) -> None:
        for name in ("eff_tol", "gen_relax", "spe_tol", "constraint_rtol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"tolerances.{name} must be positive")


@dataclass
class RunConfig:
    """Full experiment configuration; serializes losslessly to/from dicts."""

    d_v: int = 64
    d_k: int = 32
    w0_sigma: float = 1.0
    n_edits: int = 5000
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    out_dir: str | None = None
    profile: str = "fast"
    workers: int = 1
    key: KeySpec = field(default_factory=KeySpec)
    value: ValueSpec = field(default_factory=ValueSpec)
    nas: NasSpec = field(default_factory=NasSpec)
    probes: ProbeSpec = field(default_factory=ProbeSpec)
    tolerances: TolSpec = field(default_factory=TolSpec)

    def validate(self) -> "RunConfig":
        if self.d_v < 1 or self.d_k < 1:
            raise ConfigError("d_v and d_k must be >= 1")
        if self.n_edits < 1:
            raise ConfigError("n_edits must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.w0_sigma <= 0:
            raise ConfigError("w0_sigma must be positive")
        if self.key.mode == "fixed-pool" and self.key.pool_size < self.n_edits:
            raise ConfigError("key.pool_size must cover n_edits in fixed-pool mode")
        self.key.validate()
        self.value.validate()
        self.nas.validate()
        self.probes.validate()
        self.tolerances.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "RunConfig":
        return _build(RunConfig, dict(data), context="config").validate()

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_nas(self, enabled: bool) -> "RunConfig":
        clone = RunConfig.from_dict(self.to_dict())
        clone.nas.enabled = enabled
        return clone

    def resolve_conditioning(self) -> str:
        if self.value.condition_on != "auto":
            return self.value.condition_on
        return "whitened" if self.key.mode != "isotropic" else "plain"


_SECTIONS = {
    "key": KeySpec,
    "value": ValueSpec,
    "nas": NasSpec,
    "probes": ProbeSpec,
    "tolerances": TolSpec,
}


def _build(cls, data: dict[str, Any], context: str):
    """Instantiate a config dataclass, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for raw_key, value in data.items():
        key = raw_key.replace("-", "_")
        if key not in names:
            raise ConfigError(f"unknown key {raw_key!r} in {context}")
        if key in _SECTIONS and cls is RunConfig:
            if not isinstance(value, dict):
                raise ConfigError(f"{raw_key!r} must be a table")
            kwargs[key] = _build(_SECTIONS[key], value, context=raw_key)
        elif key == "seeds" and cls is RunConfig:
            kwargs[key] = [int(s) for s in value]
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {context} section: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    return RunConfig.from_dict(data)
