"""Run configuration: one flat ``section.key = value`` file plus ``--set`` overrides."""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .encoder import EncoderConfig
from .learn.ppo import PPOConfig
from .learn.trainer import TrainConfig
from .peds import OrcaParams, SfmParams
from .shaping import ExtrinsicConfig, ShapingConfig
from .sim import ScenarioConfig, SimParams
from .world import ArenaConfig, Controller


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeSettings:
    n_min: int = 11
    n_max: int = 16
    horizon: int = 100
    pedestrian_controller: Controller = Controller.SFM
    seed: int = 0


@dataclass(frozen=True)
class TrainExtras:
    checkpoint_interval: int = 10  # PPO iterations between checkpoints


@dataclass(frozen=True)
class SweepSettings:
    densities: tuple[int, ...] = (11, 13, 15, 17, 19, 21)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    episodes_per_seed: int = 100
    workers: int = 1


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "runs"


def _encoder_default() -> EncoderConfig:
    base = EncoderConfig()
    return dataclasses.replace(base, pad_sentinel=tuple(base.pad.tolist()))


@dataclass(frozen=True)
class RunConfig:
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    episode: EpisodeSettings = field(default_factory=EpisodeSettings)
    sim: SimParams = field(default_factory=SimParams)
    encoder: EncoderConfig = field(default_factory=_encoder_default)
    shaping: ShapingConfig = field(default_factory=ShapingConfig)
    extrinsic: ExtrinsicConfig = field(default_factory=ExtrinsicConfig)
    orca: OrcaParams = field(default_factory=OrcaParams)
    sfm: SfmParams = field(default_factory=SfmParams)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    checkpoint: TrainExtras = field(default_factory=TrainExtras)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    # -- derived objects -------------------------------------------------

    def controller_params(self):
        return self.orca if self.episode.pedestrian_controller is Controller.ORCA else self.sfm

    def scenario(self) -> ScenarioConfig:
        return ScenarioConfig(
            arena=self.arena,
            n_range=(self.episode.n_min, self.episode.n_max),
            horizon=self.episode.horizon,
            pedestrian_controller=self.episode.pedestrian_controller,
            controller_params=self.controller_params(),
        )

    # -- flat view -------------------------------------------------------

    def flat(self) -> dict[str, Any]:
        out = {}
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                out[f"{sec.name}.{f.name}"] = _plain(getattr(obj, f.name))
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {_toml_value(v)}\n" for k, v in self.flat().items())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def _plain(v: Any) -> Any:
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialise {v!r}")


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, default: Any, value: Any) -> Any:
    try:
        if isinstance(default, enum.Enum):
            return type(default)(value)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError("expected an integer")
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError("expected a number")
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
        if isinstance(default, tuple):
            if not isinstance(value, list):
                raise TypeError("expected a list")
            kind = type(default[0]) if default else float
            return tuple(_coerce(key, kind(), x) for x in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc} (got {value!r})") from None
    raise ConfigError(f"{key}: unsupported field type")


def from_flat(values: dict[str, Any], base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    sections = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    changes: dict[str, dict[str, Any]] = {}
    for key, value in values.items():
        sec, _, name = key.partition(".")
        if sec not in sections or not name:
            raise ConfigError(f"unknown config key '{key}'")
        obj = sections[sec]
        known = {f.name for f in dataclasses.fields(obj)}
        if name not in known:
            raise ConfigError(f"unknown config key '{key}'")
        changes.setdefault(sec, {})[name] = _coerce(key, getattr(obj, name), value)
    try:
        new = {sec: dataclasses.replace(obj, **changes.get(sec, {})) for sec, obj in sections.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(**new)


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    return from_flat(_flatten(data), base)


def load(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    cfg = loads(Path(path).read_text()) if path else RunConfig()
    return apply_overrides(cfg, overrides or [])


def parse_override(item: str) -> tuple[str, Any]:
    key, sep, raw = item.partition("=")
    if not sep:
        raise ConfigError(f"override '{item}' is not key=value")
    key, raw = key.strip(), raw.strip()
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare word, e.g. shaping.mode=none
    return key, value


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    if not overrides:
        return cfg
    return from_flat(dict(parse_override(o) for o in overrides), cfg)
