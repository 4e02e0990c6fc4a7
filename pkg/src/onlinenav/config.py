"""Run configuration: dataclasses plus a line-oriented ``key = value`` file format.

Files have ``[sim]``, ``[sensor]``, ``[policy]``, ``[planner]`` and ``[trainer]``
sections. Omitted keys keep their defaults; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field, fields, replace

from .policy.model import PolicyConfig
from .sim import SafetyConfig, SensorConfig, SimConfig


class ConfigFileError(ValueError):
    def __init__(self, line: int | None, message: str):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


@dataclass(frozen=True)
class PlannerConfig:
    radius: float = 0.25
    spacing: float = 0.25
    search_dist: float = 0.1
    line_search: bool = True
    smoothing: float = 0.05
    margin: float = 0.1


@dataclass(frozen=True)
class TrainConfig:
    T: int = 64
    E: int = 32
    rho: float = 0.8
    epochs: int = 5
    batch_size: int = 256
    lr: float = 1e-4  # paper-scale preset uses 1e-5
    lam: float = 1.0
    F: int = 2
    max_keypoints: int = -1  # -1: no upper bound
    iterations: int = 60
    seed: int = 0
    scenes: tuple[str, ...] = tuple(f"maze:{i}" for i in range(8))
    d_safe: float = 0.5
    alpha: float = 0.1
    checkpoint_every: int = 10
    randomize: bool = True

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigFileError(None, f"rho = {self.rho} is outside [0, 1]")
        for name in ("T", "E", "batch_size", "iterations", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigFileError(None, f"{name} must be >= 1")
        if self.epochs < 0 or self.F < 0 or self.lam < 0 or self.lr <= 0:
            raise ConfigFileError(None, "epochs, F and lam must be >= 0 and lr > 0")
        if not self.scenes:
            raise ConfigFileError(None, "scenes must not be empty")
        object.__setattr__(self, "scenes", tuple(self.scenes))

    @property
    def safety(self) -> SafetyConfig:
        return SafetyConfig(self.d_safe, self.alpha)


PAPER_SCALE = {"E": 256, "T": 128, "batch_size": 2048, "epochs": 10, "lr": 1e-5, "rho": 0.8,
               "iterations": 1000, "F": 5}


@dataclass(frozen=True)
class Config:
    sim: SimConfig = field(default_factory=SimConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)

    def paper_scale(self) -> "Config":
        return replace(self, trainer=replace(self.trainer, **PAPER_SCALE))


SECTIONS = {"sim": SimConfig, "sensor": SensorConfig, "policy": PolicyConfig,
            "planner": PlannerConfig, "trainer": TrainConfig}


def _field_types(cls) -> dict[str, typing.Any]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls) if f.init}


def _parse_value(text: str, tp, key: str, line: int):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    try:
        if tp is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        if origin is tuple:
            item = args[0]
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(_parse_value(p, item, key, line) for p in parts)
    except ValueError:
        raise ConfigFileError(line, f"{key}: cannot parse {text!r} as {getattr(tp, '__name__', tp)}") \
            from None
    raise ConfigFileError(line, f"{key}: unsupported type {tp}")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str, paper_scale: bool = False, base_dir: str | None = None,
                 check_scenes: bool = True) -> Config:
    values: dict[str, dict] = {s: {} for s in SECTIONS}
    lines: dict[tuple[str, str], int] = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigFileError(no, f"unknown section [{section}]")
            continue
        if "=" not in s:
            raise ConfigFileError(no, f"expected 'key = value', got {s!r}")
        if section is None:
            raise ConfigFileError(no, "key outside of any section")
        key, val = (p.strip() for p in s.split("=", 1))
        types = _field_types(SECTIONS[section])
        if key not in types:
            raise ConfigFileError(no, f"unknown key {key!r} in [{section}]")
        values[section][key] = _parse_value(val, types[key], key, no)
        lines[(section, key)] = no

    built = {}
    for name, cls in SECTIONS.items():
        try:
            built[name] = cls(**values[name])
        except (ConfigFileError, ValueError) as exc:
            bad = next(iter(values[name]), None)
            for key in values[name]:
                if key in str(exc):
                    bad = key
            line = lines.get((name, bad)) if bad else None
            raise ConfigFileError(line, f"[{name}] {exc}") from None
    cfg = Config(**built)
    if paper_scale:
        cfg = cfg.paper_scale()
    if check_scenes:
        for scene in cfg.trainer.scenes:
            if not scene.startswith("maze:"):
                path = scene if base_dir is None else os.path.join(base_dir, scene)
                if not os.path.exists(path):
                    raise ConfigFileError(lines.get(("trainer", "scenes")),
                                          f"scene file not found: {scene}")
    return cfg


def read_config(path, paper_scale: bool = False) -> Config:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, paper_scale, base_dir=os.path.dirname(os.path.abspath(path)))


def config_to_text(cfg: Config) -> str:
    out = []
    for name in SECTIONS:
        obj = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in fields(obj):
            if f.init:
                out.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)


def config_to_dict(cfg: Config) -> dict:
    return {name: dataclasses.asdict(getattr(cfg, name)) for name in SECTIONS}
