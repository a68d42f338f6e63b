"""Run configuration: TOML schema, validation and environment overrides.

A config file has the tables ``[model]``, ``[bath]``, ``[truncation]``,
``[rbm]``, ``[integrator]`` and ``[output]`` plus an optional top-level
``mode``. Every key is optional and unknown keys are rejected. Environment
variables named ``DQN_<TABLE>_<KEY>`` (for example ``DQN_RBM_N_HIDDEN=8``)
override file values; ``DQN_MODE`` overrides ``mode``. Override strings are
parsed as TOML values, falling back to a bare string.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

MODES = ("dense", "rbm", "both")


@dataclass
class ModelConfig:
    kind: str = "anderson"
    eps0: float = 2.0
    U0: float = 4.0
    d_eps: float = -7.0
    d_U: float = 6.0
    J: float = 8.0

    def validate(self):
        if self.kind not in ("anderson", "two_impurity"):
            raise ConfigError(f"model.kind must be 'anderson' or 'two_impurity', got {self.kind!r}")


@dataclass
class BathConfig:
    temperature: float = 3.0
    coupling: float = 1.0
    bandwidth: float = 10.0
    bias: float = 0.2
    scheme: str = "pade"
    poles: int = 1

    def validate(self):
        for name in ("temperature", "coupling", "bandwidth"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"bath.{name} must be positive")
        if self.scheme not in ("pade", "matsubara"):
            raise ConfigError(f"bath.scheme must be 'pade' or 'matsubara', got {self.scheme!r}")
        if self.poles < 0:
            raise ConfigError("bath.poles must be non-negative")


@dataclass
class TruncationConfig:
    max_tier: int = 2
    parity_filter: bool = True

    def validate(self):
        if self.max_tier < 0:
            raise ConfigError("truncation.max_tier must be non-negative")


@dataclass
class RbmConfig:
    n_hidden: int = 8
    n_aux: int = 8
    seed: int = 0
    lam: float = 1e-4
    eps: float = 1e-10
    init_scale: float = 0.01
    init_bias: float = 2.0
    init_staged: bool = True
    share_weights: bool = False
    init_tol: float = 1e-4
    init_max_iter: int = 400
    init_restarts: int = 3
    balanced: bool = True
    estimator: str = "exact"
    n_samples: int = 20000
    ds2_ceiling: float = 0.1

    def validate(self):
        if self.n_hidden < 1 or self.n_aux < 0:
            raise ConfigError("rbm.n_hidden must be >= 1 and rbm.n_aux >= 0")
        if self.estimator not in ("exact", "sampled"):
            raise ConfigError("rbm.estimator must be 'exact' or 'sampled'")
        if self.lam < 0 or self.eps < 0:
            raise ConfigError("rbm.lam and rbm.eps must be non-negative")
        if self.init_restarts < 1:
            raise ConfigError("rbm.init_restarts must be >= 1")


@dataclass
class IntegratorConfig:
    dt: float = 0.005
    t_end: float = 0.5
    t0: float = 0.0
    equilibrate_tol: float = 1e-10
    initial: str = "equilibrium"

    def validate(self):
        if self.initial not in ("equilibrium", "vacuum"):
            raise ConfigError("integrator.initial must be 'equilibrium' or 'vacuum'")
        if not self.dt > 0:
            raise ConfigError("integrator.dt must be positive")
        if not self.t_end > 0:
            raise ConfigError("integrator.t_end must be positive")
        if self.t0 < 0 or self.t0 > self.t_end:
            raise ConfigError("integrator.t0 must lie in [0, t_end]")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


@dataclass
class OutputConfig:
    dir: str = "out"
    prefix: str = "run"
    svg: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    bath: BathConfig = field(default_factory=BathConfig)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    rbm: RbmConfig = field(default_factory=RbmConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    mode: str = "both"

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for f in fields(self):
            sub = getattr(self, f.name)
            if hasattr(sub, "validate"):
                sub.validate()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_toml(self):
        """Resolved config as TOML text (used in artifact headers)."""
        lines = [f"mode = {_toml_value(self.mode)}"]
        for f in fields(self):
            sub = getattr(self, f.name)
            if dataclasses.is_dataclass(sub):
                lines.append(f"[{f.name}]")
                lines += [f"{k} = {_toml_value(v)}" for k, v in dataclasses.asdict(sub).items()]
        return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf") if math.isinf(v) else "nan"
    return str(v)


def _coerce(section, name, target_type, value):
    where = f"{section}.{name}" if section else name
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string, got {value!r}")
    return value


_TYPES = {"float": float, "int": int, "bool": bool, "str": str}


def _build_section(cls, section, table):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: _TYPES[f.type] for f in fields(cls)}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    return cls(**{k: _coerce(section, k, known[k], v) for k, v in table.items()})


def from_dict(data):
    """Build and validate a :class:`RunConfig` from a parsed TOML mapping."""
    sections = {f.name: f.default_factory for f in fields(RunConfig) if f.name != "mode"}
    unknown = sorted(set(data) - set(sections) - {"mode"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {name: _build_section(factory().__class__, name, data.get(name, {}))
              for name, factory in sections.items()}
    if "mode" in data:
        kwargs["mode"] = _coerce("", "mode", str, data["mode"])
    return RunConfig(**kwargs).validate()


def _parse_override(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_env(data, environ=None):
    """Merge ``DQN_*`` environment overrides into a raw config mapping."""
    environ = os.environ if environ is None else environ
    sections = [f.name for f in fields(RunConfig) if f.name != "mode"]
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for key, text in sorted(environ.items()):
        if not key.startswith("DQN_"):
            continue
        rest = key[4:].lower()
        if rest == "mode":
            out["mode"] = text
            continue
        for sec in sorted(sections, key=len, reverse=True):
            if rest.startswith(sec + "_"):
                out.setdefault(sec, {})[rest[len(sec) + 1:]] = _parse_override(text)
                break
        else:
            raise ConfigError(f"environment override {key} matches no config table")
    return out


def load_config(path=None, environ=None):
    """Read a TOML file (or defaults when ``path`` is None), apply overrides, validate."""
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(apply_env(data, environ))
