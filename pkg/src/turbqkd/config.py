"""INI-style run configuration shared by every command.

Each section maps to a dataclass whose field defaults are the library
defaults; values in a file override them and unknown sections or keys are
errors.  The effective configuration is echoed into outputs together with a
hash.  ``workers`` lives in the ``[run]`` section but is left out of the
hash, since it changes speed and never results.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


def _choose(section: str, key: str, value, allowed) -> None:
    if value not in allowed:
        raise ConfigError(f"[{section}] {key} must be one of {list(allowed)}, got {value!r}")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class DataSection:
    weather: str = ""
    scint: str = ""
    fill_horizon: int = 60
    average_window: int = 60
    max_gap_fraction: float = 0.25
    average_alignment: str = "trailing"  # or "centered"
    average_domain: str = "log"  # or "linear"

    def __post_init__(self):
        _choose("data", "average_alignment", self.average_alignment, ("trailing", "centered"))
        _choose("data", "average_domain", self.average_domain, ("log", "linear"))


@dataclass(frozen=True)
class WindowSection:
    in_len: int = 720
    out_len: int = 360
    out_res: int = 15
    stride: int = 15
    features: tuple = ("temperature", "solar_radiation", "relative_humidity", "log10_cn2", "t_x", "t_y")
    split_mode: str = "B"
    split_month: int = 10

    def __post_init__(self):
        _choose("windows", "split_mode", self.split_mode, ("A", "B"))


@dataclass(frozen=True)
class ModelSection:
    kind: str = "gru"
    hidden_sizes: tuple = (64, 64)

    def __post_init__(self):
        _choose("model", "kind", self.kind, ("gru", "mlp"))


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 32
    initial_lr: float = 1e-4
    patience: int = 15
    reduction_factor: float = 0.1
    plateau_threshold: float = 1e-5
    min_lr: float = 0.0
    max_epochs: int = 300
    micro_batch: int = 8


@dataclass(frozen=True)
class PfiSection:
    repeats: int = 3
    subset: int = 1000
    split: str = "validation"
    groups: tuple = ("meteo=pressure+temperature+relative_humidity+wind_speed",)


@dataclass(frozen=True)
class QkdSection:
    w0: float = 8e-2
    wavelength: float = 810e-9
    length: float = 5400.0
    aperture: float = 0.30
    grid_side: float = 1.2
    grid_n: int = 1024
    d: int = 8
    j_max: int = 36
    d_eff: float = 0.0  # 0 selects max(2 w0, aperture)
    n_realizations: int = 100
    independent_modes: bool = False
    levels: tuple = (1e-16, 2e-16, 5e-16, 1e-15, 1e-14)
    bases: tuple = ("OAM", "ANGLE")
    dump_worst_levels: tuple = (1e-16,)  # Cn2 levels whose worst realization is exported


@dataclass(frozen=True)
class SynthSection:
    start: str = "2023-07-01T00:00:00Z"
    days: int = 30
    log10_min: float = -16.0
    log10_max: float = -14.0
    noise_std: float = 0.08
    noise_corr_minutes: float = 90.0
    gap_fraction: float = 0.0
    weather_cadence: int = 60


_SECTIONS = {
    "run": RunSection,
    "data": DataSection,
    "windows": WindowSection,
    "model": ModelSection,
    "train": TrainSection,
    "pfi": PfiSection,
    "qkd": QkdSection,
    "synth": SynthSection,
}
_UNHASHED = {("run", "workers")}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    windows: WindowSection = field(default_factory=WindowSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    pfi: PfiSection = field(default_factory=PfiSection)
    qkd: QkdSection = field(default_factory=QkdSection)
    synth: SynthSection = field(default_factory=SynthSection)

    def as_dict(self) -> dict:
        return {name: _jsonable(asdict(getattr(self, name))) for name in _SECTIONS}

    def hashed_dict(self) -> dict:
        d = self.as_dict()
        for sec, key in _UNHASHED:
            d[sec].pop(key, None)
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.hashed_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def override(self, section: str, **values) -> "RunConfig":
        sec = getattr(self, section)
        valid = {f.name for f in fields(sec)}
        bad = set(values) - valid
        if bad:
            raise ConfigError(f"unknown key(s) {sorted(bad)} in [{section}]")
        return replace(self, **{section: replace(sec, **values)})

    def write(self, path: str | Path) -> None:
        cp = configparser.ConfigParser()
        for name, values in self.as_dict().items():
            cp[name] = {k: _format(v) for k, v in values.items()}
        with open(path, "w") as fh:
            cp.write(fh)


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _format(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def _parse(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(t) for t in items)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(default).__name__}") from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = RunConfig()
    for name in cp.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]")
        sec = getattr(cfg, name)
        defaults = {f.name: getattr(sec, f.name) for f in fields(sec)}
        values = {}
        for key, raw in cp[name].items():
            if key not in defaults:
                raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
            values[key] = _parse(raw, defaults[key], f"{source} [{name}] {key}")
        cfg = cfg.override(name, **values)
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def parse_groups(entries) -> dict[str, tuple[str, ...]]:
    """``["name=a+b+c", ...]`` to ``{"name": ("a", "b", "c")}``."""
    out = {}
    for e in entries:
        name, sep, members = e.partition("=")
        if not sep or not members.strip():
            raise ConfigError(f"feature group {e!r} must look like name=a+b")
        out[name.strip()] = tuple(m.strip() for m in members.split("+") if m.strip())
    return out
