"""Run configuration: defaults, file parsing and validation.

Config files are line oriented::

    # comment
    scene.wall_reflectivity = 0.7
    channel.carrier_hz = 28e9
    scene.gnb_position_m = 18.0, 275.0, 6.0

Unknown sections or keys are errors.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .channel import ArrayGeometry, ChannelConfig, Scene
from .errors import ConfigError
from .lstm import TrainConfig
from .mobility import FsmcConfig, MobilityConfig
from .pipeline import SimulationConfig

# dataset-range -> instance target used by the ablation benchmarks
DEFAULT_TARGETS = {250: 8860, 500: 17733, 750: 27805}


@dataclass(frozen=True)
class DatasetConfig:
    ranges: tuple[int, ...] = (250, 500, 750)
    target_instances: int = 0  # 0 = per-range default
    ref_subcarrier: int = 0
    train_fraction: float = 0.7
    max_steps: int = 100_000

    def target_for(self, max_row_distance: int) -> int:
        if self.target_instances > 0:
            return self.target_instances
        try:
            return DEFAULT_TARGETS[max_row_distance]
        except KeyError:
            raise ConfigError(f"no default instance target for range {max_row_distance}; "
                              "set dataset.target_instances") from None


@dataclass(frozen=True)
class ModelConfig:
    window: int = 10
    hidden_size: int = 10


@dataclass
class RunConfig:
    scene: Scene = field(default_factory=Scene)
    array: ArrayGeometry = field(default_factory=ArrayGeometry)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    fsmc: FsmcConfig = field(default_factory=FsmcConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 42

    def simulation(self) -> SimulationConfig:
        return SimulationConfig(self.scene, self.array, self.channel, self.mobility, self.fsmc,
                                self.dataset.ref_subcarrier, self.dataset.max_steps)

    def validate(self) -> "RunConfig":
        k = self.dataset.ref_subcarrier
        if not 0 <= k < self.channel.num_subcarriers:
            raise ConfigError(f"dataset.ref_subcarrier={k} outside [0, {self.channel.num_subcarriers})")
        if not 0.0 < self.dataset.train_fraction < 1.0:
            raise ConfigError("dataset.train_fraction must lie in (0, 1)")
        if self.model.window < 1 or self.model.hidden_size < 1:
            raise ConfigError("model.window and model.hidden_size must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return self


_SECTIONS = ("scene", "array", "channel", "mobility", "fsmc", "dataset", "model", "train")
# derived from the master seed by each subcommand, so not settable on its own
_HIDDEN = {("train", "seed")}


def _coerce(raw: str, current: Any, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [s for s in raw.replace(",", " ").split()]
            kind = type(current[0]) if current else float
            return tuple(kind(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None


def apply_overrides(cfg: RunConfig, pairs: dict[str, str]) -> RunConfig:
    """Return a new config with dotted ``section.key`` string overrides applied."""
    updates: dict[str, dict[str, Any]] = {}
    seed = cfg.seed
    for dotted, raw in pairs.items():
        if dotted in ("seed", "run.seed"):
            seed = _coerce(raw, 0, dotted)
            continue
        section, _, key = dotted.partition(".")
        if section not in _SECTIONS or not key:
            raise ConfigError(f"unknown config key {dotted!r}")
        obj = getattr(cfg, section)
        names = {f.name for f in dataclasses.fields(obj)}
        if key not in names or (section, key) in _HIDDEN:
            raise ConfigError(f"unknown config key {dotted!r}")
        updates.setdefault(section, {})[key] = _coerce(raw, getattr(obj, key), dotted)
    kwargs = {}
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        if section in updates:
            try:
                obj = dataclasses.replace(obj, **updates[section])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{section}: {exc}") from None
        kwargs[section] = obj
    return RunConfig(seed=seed, **kwargs).validate()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = RunConfig()
    pairs: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        pairs.update(parse_config_text(text, str(p)))
    pairs.update(overrides or {})
    return apply_overrides(cfg, pairs)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"seed = {cfg.seed}"]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            if (section, f.name) in _HIDDEN:
                continue
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{section}.{f.name} = {value}")
    return "\n".join(lines) + "\n"
