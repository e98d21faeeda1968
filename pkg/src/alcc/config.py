"""Run configuration stored as INI text.

Every dataclass config maps onto one section whose keys are its field names.
Missing keys keep their defaults, unknown sections or keys are rejected, and
:func:`dump_config` writes the complete effective configuration so a run can
be repeated from its echo alone.  Tuples are written comma-separated.

The single ``[run] seed`` feeds every seeded component.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .calibration import DEFAULT_BOUNDS, GaConfig
from .ddpg import DdpgConfig
from .environment import EnvConfig
from .vehicle import EnergyCoefficients, IdmParams, VehicleParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    """Synthetic fixture sizes and profile seeds."""

    population_size: int = 923
    corpus_episodes: int = 50
    corpus_accel_noise: float = 0.0
    pv_seed: int = 100
    # Training draws a PV profile per episode from pv_seed plus train_profiles - 1
    # extra profiles seeded train_pool_seed, train_pool_seed + 1, ...
    train_profiles: int = 20
    train_pool_seed: int = 1000
    heldout_pv_seeds: tuple = (101, 102)
    speed_band: tuple = (5.0, 20.0)
    smoothness: float = 2.0

    def __post_init__(self):
        if self.population_size < 1 or self.corpus_episodes < 1:
            raise ValueError("population_size and corpus_episodes must be positive")
        if self.train_profiles < 1:
            raise ValueError("train_profiles must be positive")
        pool = range(self.train_pool_seed, self.train_pool_seed + self.train_profiles - 1)
        if any(s in pool or s == self.pv_seed for s in self.heldout_pv_seeds):
            raise ValueError("held-out PV seeds overlap the training profiles")


@dataclass(frozen=True)
class EvalConfig:
    drivers: int = 100
    # Evaluation noise seeds are offsets added to the run seed.
    seed_offsets: tuple = (0, 1, 2)
    noise: bool = True

    def __post_init__(self):
        if self.drivers < 0 or not self.seed_offsets:
            raise ValueError("drivers must be >= 0 and at least one evaluation seed is needed")


@dataclass(frozen=True)
class PathsConfig:
    """Artifact locations; relative paths resolve against the output directory."""

    corpus: str = "corpus"
    population: str = "population.csv"
    checkpoints: str = "checkpoints"
    reports: str = "reports"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    vehicle: VehicleParams = VehicleParams()
    energy: EnergyCoefficients = EnergyCoefficients()
    idm: IdmParams = IdmParams()
    ga: GaConfig = field(default_factory=GaConfig)
    env: EnvConfig = EnvConfig()
    ddpg: DdpgConfig = field(default_factory=DdpgConfig.desk)
    data: DataConfig = DataConfig()
    evaluation: EvalConfig = EvalConfig()
    paths: PathsConfig = PathsConfig()

    def seeded(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, ga=replace(self.ga, seed=seed), ddpg=replace(self.ddpg, seed=seed))

    def resolve(self, out_dir, name: str) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else Path(out_dir) / p


# Field names handled outside the generic codec, per section.
_SKIP = {"ga": {"fixed", "bounds", "seed"}, "ddpg": {"seed"}, "energy": {"p"}, "env": {"reward_mode"}}
_SECTIONS = ("vehicle", "energy", "idm", "ga", "env", "ddpg", "data", "evaluation", "paths")
_POWER_KEYS = [f"p{i}{j}" for i in range(4) for j in range(3)]


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s for s in (p.strip() for p in text.split(",")) if s]
            kind = type(default[0]) if default else float
            return tuple(kind(s) for s in items)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(default).__name__}") from None


def _section_values(obj, section: str) -> dict:
    skip = _SKIP.get(section, set())
    return {f.name: getattr(obj, f.name) for f in fields(obj) if f.name not in skip}


def _apply_section(obj, section: str, items: dict):
    known = _section_values(obj, section)
    updates = {}
    for key, text in items.items():
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        updates[key] = _parse(text, known[key], f"[{section}] {key}")
    return replace(obj, **updates) if updates else obj


def loads_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = set(parser.sections()) - set(_SECTIONS) - {"run", "ga.bounds"}
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}")
    cfg = RunConfig()
    try:
        run = dict(parser["run"]) if parser.has_section("run") else {}
        extra = set(run) - {"seed"}
        if extra:
            raise ConfigError(f"[run] unknown key(s) {sorted(extra)}")
        seed = _parse(run.get("seed", "0"), 0, "[run] seed")

        parts = {}
        for name in _SECTIONS:
            current = getattr(cfg, name)
            items = dict(parser[name]) if parser.has_section(name) else {}
            if name == "energy":
                table = [list(row) for row in current.p]
                for key in [k for k in items if k in _POWER_KEYS]:
                    table[int(key[1])][int(key[2])] = _parse(items.pop(key), 0.0, f"[energy] {key}")
                current = replace(current, p=tuple(tuple(r) for r in table))
            parts[name] = _apply_section(current, name, items)

        bounds = dict(DEFAULT_BOUNDS)
        if parser.has_section("ga.bounds"):
            for gene, text in parser["ga.bounds"].items():
                if gene not in bounds:
                    raise ConfigError(f"[ga.bounds] unknown gene {gene!r}")
                bounds[gene] = _parse(text, (0.0, 0.0), f"[ga.bounds] {gene}")
        parts["ga"] = replace(parts["ga"], fixed=parts["idm"], bounds=bounds)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{source}: {exc}") from None
    return RunConfig(seed=seed, **parts).seeded(seed)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads_config(text, str(path))


def dump_config(cfg: RunConfig) -> str:
    """Full effective configuration, readable back by :func:`loads_config`."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {"seed": str(cfg.seed)}
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        values = {k: _format(v) for k, v in _section_values(obj, name).items()}
        if name == "energy":
            for key in _POWER_KEYS:
                values[key] = _format(obj.p[int(key[1])][int(key[2])])
        parser[name] = values
    parser["ga.bounds"] = {g: _format(tuple(b)) for g, b in cfg.ga.bounds.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
