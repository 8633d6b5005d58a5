"""Run configuration: strict TOML parsing, defaults, round-trip emission.

Unknown keys are fatal (with a nearest-match hint) because silently ignored
settings are the main reproducibility hazard.  Semantic errors are addressed
by the dotted key path; syntax errors carry the parser's line number.
"""

from __future__ import annotations

import difflib
from dataclasses import asdict, dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .coefficients import CoefficientSet, load_coefficients_csv, make_model
from .errors import ConfigError
from .grid import GridSpec
from .mckean import SdeConfig
from .resolvent import ResolventConfig


@dataclass(frozen=True)
class ModelConfig:
    name: str = "heat"
    m: float = 2.0
    a: float = 1.0
    p: float = 3.0
    b_mode: str = "zero"
    b_value: float = 1.0
    drift: str = "none"
    drift_scale: float = 1.0
    csv_path: str = ""

    def build(self) -> CoefficientSet:
        if self.name == "custom_csv":
            if not self.csv_path:
                raise ConfigError("model.name = 'custom_csv' requires model.csv_path")
            return load_coefficients_csv(
                self.csv_path, drift=self.drift, drift_scale=self.drift_scale
            )
        return make_model(
            self.name,
            m=self.m,
            a=self.a,
            p=self.p,
            b_mode=self.b_mode,
            b_value=self.b_value,
            drift=self.drift,
            drift_scale=self.drift_scale,
        )


@dataclass(frozen=True)
class GridConfig:
    d: int = 1
    half_width: float = 8.0
    n: int = 256
    boundary: str = "no_flux"

    def build(self) -> GridSpec:
        return GridSpec(self.d, self.half_width, self.n, self.boundary)


@dataclass(frozen=True)
class TimeConfig:
    T: float = 0.1
    h: float = 1e-3


@dataclass(frozen=True)
class InitialConfig:
    kind: str = "gaussian"  # gaussian | barenblatt | csv
    mean: float = 0.0
    sigma0: float = 0.5
    t0: float = 0.01
    path: str = ""


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs/out"
    formats: tuple[str, ...] = ("csv",)
    stride: int = 1


@dataclass(frozen=True)
class SdeSection:
    n_particles: int = 10_000
    dt: float = 1e-3
    seed: int = 0
    bandwidth_rule: str = "silverman"
    bandwidth_value: float = 0.0
    reflect_at_boundary: bool = True

    def build(self) -> SdeConfig:
        rule: str | float = self.bandwidth_rule
        if self.bandwidth_rule == "fixed":
            rule = self.bandwidth_value
        return SdeConfig(
            n_particles=self.n_particles,
            dt=self.dt,
            seed=self.seed,
            bandwidth_rule=rule,
            reflect_at_boundary=self.reflect_at_boundary,
        )


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    resolvent: ResolventConfig = field(default_factory=ResolventConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    sde: SdeSection = field(default_factory=SdeSection)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0


_SECTIONS = {
    "model": ModelConfig,
    "grid": GridConfig,
    "resolvent": ResolventConfig,
    "time": TimeConfig,
    "initial": InitialConfig,
    "sde": SdeSection,
    "output": OutputConfig,
}
_TOP_SCALARS = {"seed": int}


def _coerce(cls, key: str, value, path: str):
    ftypes = {f.name: f.type for f in fields(cls)}
    want = ftypes[key]
    if want in ("int",) or want is int:
        if isinstance(value, bool) or not isinstance(value, (int,)):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if want in ("float",) or want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if want in ("bool",) or want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if want in ("str",) or want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if "tuple" in str(want):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    raise ConfigError(f"{path}: unsupported value {value!r}")


def _reject_unknown(given: dict, allowed, path: str) -> None:
    for key in given:
        if key not in allowed:
            hint = difflib.get_close_matches(key, list(allowed), n=1)
            suffix = f" (did you mean '{hint[0]}'?)" if hint else ""
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown key '{where}'{suffix}")


def parse_config(text: str) -> RunConfig:
    """Parse a TOML run configuration with strict unknown-key rejection."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from exc
    if not doc:
        raise ConfigError(
            "empty configuration; at minimum provide [model] with name = \"...\" "
            f"(known sections: {', '.join(_SECTIONS)}; top-level keys: "
            f"{', '.join(_TOP_SCALARS)})"
        )
    allowed_top = set(_SECTIONS) | set(_TOP_SCALARS)
    _reject_unknown(doc, allowed_top, "")
    if "model" not in doc or "name" not in doc.get("model", {}):
        raise ConfigError("missing required key 'model.name'")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        given = doc.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section [{section}] must be a table")
        names = {f.name for f in fields(cls)}
        _reject_unknown(given, names, section)
        values = {k: _coerce(cls, k, v, f"{section}.{k}") for k, v in given.items()}
        try:
            kwargs[section] = cls(**values)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed: expected an integer")
    cfg = RunConfig(seed=seed, **kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    try:
        cfg.model.build()
        cfg.grid.build()
        cfg.sde.build()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc
    if not (cfg.time.T > 0 and cfg.time.h > 0):
        raise ConfigError("time.T and time.h must be positive")
    if cfg.time.h > cfg.time.T + 1e-15:
        raise ConfigError("time.h must not exceed time.T")
    if cfg.initial.kind not in ("gaussian", "barenblatt", "csv"):
        raise ConfigError(f"initial.kind '{cfg.initial.kind}' not recognized")
    if cfg.initial.kind == "csv" and not cfg.initial.path:
        raise ConfigError("initial.kind = 'csv' requires initial.path")
    if cfg.output.stride < 1:
        raise ConfigError("output.stride must be at least 1")


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, tuple):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    raise ConfigError(f"cannot emit value {value!r}")


def emit_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig to TOML; parse_config(emit_config(c)) == c."""
    lines = [f"seed = {cfg.seed}", ""]
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        lines.append(f"[{section}]")
        for k, v in asdict(obj).items():
            lines.append(f"{k} = {_toml_scalar(v)}")
        lines.append("")
    return "\n".join(lines)
