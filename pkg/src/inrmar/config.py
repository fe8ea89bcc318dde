"""Run configuration: an INI file with fixed sections; unknown keys are errors."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .inr import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    kind: str = "dental"  # dental | two_disk | disk
    n_teeth: int = 14
    crowns: tuple = (3, 5, 10)
    wall_mm: float = 0.8
    radius: float = 10.0
    separation: float = 40.0
    material: str = "titanium"
    metal: tuple = ("titanium",)


@dataclass(frozen=True)
class GridConfig:
    nx: int = 128
    ny: int = 128
    pixel_mm: float = 0.6


@dataclass(frozen=True)
class GeometryConfig:
    mode: str = "parallel"
    n_views: int = 180
    n_bins: int = 256
    source_axis_distance: float = 500.0


@dataclass(frozen=True)
class SpectrumConfig:
    kind: str = "bundled"  # bundled | file | mono | uniform
    path: str = ""
    energy: float = 0.0  # 0 = spectrum mean (reference energy for mono data and truth images)
    half_width: float = 10.0
    n_lines: int = 2001


@dataclass(frozen=True)
class NoiseConfig:
    enabled: bool = True
    photons: float = 1e5
    electronic_sd: float = 10.0


@dataclass(frozen=True)
class MethodsConfig:
    run: tuple = ("fbp", "mbhc", "inr")


@dataclass(frozen=True)
class MBHCConfig:
    threshold: str = "auto"
    kappa: str = "auto"
    floor: str = "bone"  # material name or number


@dataclass(frozen=True)
class StarvationConfig:
    threshold_mm: float = 0.0


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    out: str = "run"
    deterministic: bool = True


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    methods: MethodsConfig = field(default_factory=MethodsConfig)
    mbhc: MBHCConfig = field(default_factory=MBHCConfig)
    inr: TrainConfig = field(default_factory=TrainConfig)
    starvation: StarvationConfig = field(default_factory=StarvationConfig)
    run: RunSection = field(default_factory=RunSection)

    def with_section(self, name: str, **kw) -> "RunConfig":
        from dataclasses import replace
        return replace(self, **{name: replace(getattr(self, name), **kw)})


_CHOICES = {
    ("scene", "kind"): ("dental", "two_disk", "disk"),
    ("geometry", "mode"): ("parallel", "fan"),
    ("spectrum", "kind"): ("bundled", "file", "mono", "uniform"),
}
_METHODS = ("fbp", "mbhc", "inr")


def _parse_value(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(t) for t in items)
            return tuple(items)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if default is None:
            return None if text.lower() in ("", "none") else float(text)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)


def _section_defaults(cls):
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    known = {f.name: f.default_factory for f in fields(RunConfig)}
    sections = {}
    for name in cp.sections():
        if name not in known:
            raise ConfigError(f"{source}: unknown section [{name}]")
        cls = type(known[name]())
        defaults = _section_defaults(cls)
        values = {}
        for key, raw in cp.items(name):
            if key not in defaults:
                raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
            values[key] = _parse_value(raw, defaults[key], f"{source} [{name}] {key}")
            choices = _CHOICES.get((name, key))
            if choices and values[key] not in choices:
                raise ConfigError(f"{source} [{name}] {key}: expected one of {choices}")
        try:
            sections[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source} [{name}]: {exc}") from None
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    bad = [m for m in cfg.methods.run if m not in _METHODS]
    if bad or not cfg.methods.run:
        raise ConfigError(f"[methods] run: unknown or empty method list {cfg.methods.run}")
    for name in ("nx", "ny"):
        if getattr(cfg.grid, name) < 1:
            raise ConfigError(f"[grid] {name} must be >= 1")
    if not cfg.grid.pixel_mm > 0:
        raise ConfigError("[grid] pixel_mm must be positive")
    if cfg.geometry.n_views < 1 or cfg.geometry.n_bins < 1:
        raise ConfigError("[geometry] n_views and n_bins must be >= 1")
    if cfg.noise.enabled and not cfg.noise.photons > 0:
        raise ConfigError("[noise] photons must be positive")
    if cfg.spectrum.kind == "file" and not cfg.spectrum.path:
        raise ConfigError("[spectrum] kind = file needs a path")
    for key in ("threshold", "kappa"):
        v = getattr(cfg.mbhc, key)
        if v != "auto":
            try:
                if not float(v) > 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"[mbhc] {key} must be 'auto' or a positive number") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    """Every key with its effective value, in a fixed order (round-trips through parse_config)."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for f in fields(RunConfig):
        section = getattr(cfg, f.name)
        cp[f.name] = {g.name: _format_value(getattr(section, g.name)) for g in fields(section)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
