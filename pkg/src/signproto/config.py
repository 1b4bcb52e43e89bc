"""Run configuration: INI file with one section per concern, ``section.key=value`` overrides."""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class PathsConfig:
    manifest: str = ""
    output_dir: str = "runs/default"
    checkpoint: str = ""
    target_manifest: str = ""
    predictions: str = ""


@dataclass
class ModelConfig:
    d_model: int = 768
    channels: tuple[int, ...] = (64, 64, 128, 256)
    face_channels: tuple[int, ...] = (32, 32, 64, 128)
    temporal_kernel: int = 9
    frames: int = 64
    tau: float = 0.3
    distance: str = "squared"
    dtype: str = "float32"


@dataclass
class EpisodeConfig:
    n_way: int = 200
    k_shot: int = 3
    q_query: int = 2
    num_episodes: int = 50_000
    augment: bool = True
    speed_factors: tuple[float, ...] = (0.8, 1.0, 1.25)
    split: str = "train"


@dataclass
class OptimConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class BaselineSection:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3


@dataclass
class EvalConfig:
    k_list: tuple[int, ...] = (1, 5, 10)
    split: str = "test"
    prototype_split: str = "train"
    val_split: str = "val"
    val_interval: int = 1000
    top_m: int = 15
    target_split: str = ""
    render: bool = False


@dataclass
class SyntheticConfig:
    n_classes: int = 10
    samples_per_class: tuple[int, ...] = (20,)
    tail_min: int = 0
    t_min: int = 40
    t_max: int = 80
    noise_scale: float = 0.02
    template_seed: int = -1
    offset_x: float = 0.0
    offset_y: float = 0.0
    screen_scale: float = 1.0
    split_fractions: tuple[float, ...] = (0.6, 0.2, 0.2)
    dropout_rate: float = 0.0
    gloss_prefix: str = "sign"


@dataclass
class RunSection:
    seed: int = 0


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    episodes: EpisodeConfig = field(default_factory=EpisodeConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    run: RunSection = field(default_factory=RunSection)

    @property
    def seed(self) -> int:
        return self.run.seed

    def validate(self) -> "RunConfig":
        e, m = self.episodes, self.model
        if e.n_way < 2 or e.k_shot < 1 or e.q_query < 1:
            raise ConfigError(f"need N >= 2, K >= 1, Q >= 1 (got N={e.n_way}, K={e.k_shot}, Q={e.q_query})")
        if e.num_episodes < 0:
            raise ConfigError("episodes.num_episodes must be >= 0")
        if m.d_model < 4 or m.d_model % 4:
            raise ConfigError(f"model.d_model must be a positive multiple of 4, got {m.d_model}")
        if not 0 < m.tau < 1:
            raise ConfigError(f"model.tau must lie in (0, 1), got {m.tau}")
        if m.frames < 2:
            raise ConfigError("model.frames must be >= 2")
        if m.distance not in ("squared", "unsquared"):
            raise ConfigError(f"model.distance must be squared or unsquared, got {m.distance!r}")
        if m.dtype not in ("float32", "float64"):
            raise ConfigError(f"model.dtype must be float32 or float64, got {m.dtype!r}")
        if not e.speed_factors or min(e.speed_factors) <= 0:
            raise ConfigError("episodes.speed_factors must be positive")
        if self.eval.val_interval < 1 or not self.eval.k_list or min(self.eval.k_list) < 1:
            raise ConfigError("eval.val_interval and eval.k_list entries must be >= 1")
        if self.baseline.epochs < 0 or self.baseline.batch_size < 1:
            raise ConfigError("baseline.epochs must be >= 0 and baseline.batch_size >= 1")
        return self

    def require_paths(self, *names: str) -> None:
        for name in names:
            value = getattr(self.paths, name)
            if not value:
                raise ConfigError(f"paths.{name} is required for this command")
            if not Path(value).exists():
                raise ConfigError(f"paths.{name} does not exist: {value}")


def _sections(cfg: RunConfig):
    for f in dataclasses.fields(cfg):
        yield f.name, getattr(cfg, f.name)


def _convert(raw: str, hint, where: str):
    raw = raw.strip()
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typing.get_origin(hint) is tuple:
            (inner, *_) = typing.get_args(hint)
            return tuple(inner(x) for x in raw.replace(" ", "").split(",") if x)
        return hint(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)


def set_value(cfg: RunConfig, dotted: str, raw: str) -> None:
    if "." not in dotted:
        raise ConfigError(f"override key must look like section.key, got {dotted!r}")
    section_name, key = dotted.split(".", 1)
    section = getattr(cfg, section_name, None)
    if section is None or not dataclasses.is_dataclass(section):
        raise ConfigError(f"unknown config section {section_name!r}")
    hints = typing.get_type_hints(type(section))
    if key not in hints:
        raise ConfigError(f"unknown config key {dotted!r}")
    setattr(section, key, _convert(raw, hints[key], dotted))


def parse_config(text: str, overrides=()) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    cfg = RunConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            set_value(cfg, f"{section}.{key}", raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        set_value(cfg, key.strip(), raw)
    return cfg.validate()


def load_config(path, overrides=(), seed: int | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(encoding="utf-8"), overrides)
    if seed is not None:
        cfg.run.seed = seed
    return cfg


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    for name, section in _sections(cfg):
        parser[name] = {f.name: _format(getattr(section, f.name)) for f in dataclasses.fields(section)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
