"""Experiment configuration: one dataclass per experiment, loaded from strict
TOML.  Unknown keys are rejected with a best-effort line number so a typo in a
config file fails loudly instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field, fields

try:  # 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as _toml

__all__ = [
    "ConfigError",
    "TaylorConfig",
    "RateSweepConfig",
    "LowerBoundConfig",
    "MomentumConfig",
    "SensingConfig",
    "ConvexRateConfig",
    "CONFIG_TYPES",
    "load_config",
    "config_to_dict",
]


class ConfigError(Exception):
    """Malformed or out-of-range experiment configuration."""


@dataclass
class TaylorConfig:
    seed: int = 0
    objective: str = "quartic"  # quartic | quadratic | sensing
    dim: int = 2
    m: int = 100_000
    dist: str = "gaussian"
    sigma_grid: tuple[float, ...] = (
        0.02, 0.038, 0.056, 0.074, 0.092, 0.11, 0.128, 0.146, 0.164, 0.182, 0.2,
    )
    # sensing-objective parameters (used only when objective == "sensing")
    d: int = 8
    r: int = 2
    n: int = 120

    def validate(self):
        if self.objective not in ("quartic", "quadratic", "sensing"):
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.m < 2:
            raise ConfigError("m must be >= 2")
        if not self.sigma_grid or any(s < 0 for s in self.sigma_grid):
            raise ConfigError("sigma_grid must be nonempty and nonnegative")
        if self.objective == "sensing" and not 1 <= self.r <= self.d:
            raise ConfigError("need 1 <= r <= d for the sensing objective")


@dataclass
class RateSweepConfig:
    seed: int = 0
    C: float = 1.0
    D: float = 1.0
    sigma: float = 1.0
    sigma_p: float = 1.0
    dist: str = "gaussian"
    dim: int = 8
    k_list: tuple[int, ...] = (1, 4)
    T_list: tuple[int, ...] = (16, 64, 256)
    repetitions: int = 200

    def validate(self):
        if self.C <= 0 or self.D <= 0 or self.sigma < 0 or self.sigma_p < 0:
            raise ConfigError("C, D must be positive; sigma, sigma_p nonnegative")
        if self.dim < 1 or self.repetitions < 2:
            raise ConfigError("dim >= 1 and repetitions >= 2 required")
        if not all(isinstance(k, int) and k >= 1 for k in self.k_list):
            raise ConfigError("k_list entries must be integers >= 1")
        if not all(isinstance(t, int) and t >= 2 for t in self.T_list):
            raise ConfigError("T_list entries must be integers >= 2")


@dataclass
class LowerBoundConfig:
    seed: int = 0
    regime: int = 1
    C: float = 1.0
    D: float = 1.0
    sigma: float = 1.0
    # regime 1 (hard chain, per-run guarantee)
    k_list: tuple[int, ...] = (1, 4)
    T_list: tuple[int, ...] = (8, 16, 32)
    runs: int = 50
    eta_frac: float = 0.9  # fraction of the step-sum budget the schedule uses
    # regime 2 (fixed-eta well instance, guarantee in expectation)
    eta: float = 0.25
    T: int = 32
    k: int = 1
    repetitions: int = 200
    sigma_p: float = 0.05

    def validate(self):
        if self.regime not in (1, 2):
            raise ConfigError("regime must be 1 or 2")
        if self.C <= 0 or self.D <= 0 or self.sigma <= 0:
            raise ConfigError("C, D, sigma must be positive")
        if self.regime == 1:
            if not (0 < self.eta_frac <= 1):
                raise ConfigError("eta_frac must lie in (0, 1]")
            if self.runs < 1:
                raise ConfigError("runs must be >= 1")
            if not all(isinstance(k, int) and k >= 1 for k in self.k_list):
                raise ConfigError("k_list entries must be integers >= 1")
            if not all(isinstance(t, int) and t >= 1 for t in self.T_list):
                raise ConfigError("T_list entries must be integers >= 1")
        else:
            if self.eta <= 0 or self.eta > 1.0 / self.C:
                raise ConfigError("regime 2 needs a fixed eta in (0, 1/C]")
            if self.T < 1 or self.k < 1 or self.repetitions < 2:
                raise ConfigError("T, k >= 1 and repetitions >= 2 required")
            # the regime's step-sum condition: sum eta_i >= sqrt(D^2 k T / (2 sigma^2 C))
            need = math.sqrt(self.D**2 * self.k * self.T / (2 * self.sigma**2 * self.C))
            if self.T * self.eta < need:
                raise ConfigError(
                    f"regime 2 needs T*eta >= {need:.6g} (got {self.T * self.eta:.6g})"
                )
            if self.sigma_p < 0:
                raise ConfigError("sigma_p must be >= 0")


@dataclass
class MomentumConfig:
    seed: int = 0
    C: float = 1.0
    D: float = 1.0
    sigma: float = 1.0
    # k = 2 keeps the pair-averaged noise genuinely random (at k = 1 the
    # coordinate-noise magnitude is constant and every run is identical)
    k: int = 2
    T: int = 16
    eta: float = 0.25
    mu_list: tuple[float, ...] = (0.0, 0.5, 0.9)
    repetitions: int = 200
    sigma_p: float = 0.2
    dist: str = "binomial"
    floor_const: float = 1.0 / math.sqrt(32.0)  # c in c * D * sqrt(C sigma^2/(kT))

    def validate(self):
        if self.C <= 0 or self.D <= 0 or self.sigma < 0 or self.sigma_p < 0:
            raise ConfigError("C, D must be positive; sigma, sigma_p nonnegative")
        if self.eta <= 0 or self.eta >= 1.0 / self.C:
            raise ConfigError("eta must lie in (0, 1/C)")
        if not all(0.0 <= m < 1.0 for m in self.mu_list):
            raise ConfigError("mu values must lie in [0, 1)")
        if self.k < 1 or self.T < 2 or self.repetitions < 2:
            raise ConfigError("k >= 1, T >= 2, repetitions >= 2 required")
        if self.floor_const <= 0:
            raise ConfigError("floor_const must be positive")


@dataclass
class SensingConfig:
    seed: int = 0
    d: int = 30
    r: int = 3
    # n = 0 resolves to d(d+1)/4: half the degrees of freedom of a symmetric
    # d x d matrix.  That keeps the measurement system underdetermined, so
    # plain GD interpolates without recovering the planted matrix and the
    # implicit-regularization gap between the methods is visible.  (At n close
    # to d(d+1)/2 interpolation forces recovery and every method generalizes.)
    n: int = 0
    repetitions: int = 5
    steps: int = 10_000
    eta: float = 2e-3
    sigma_p: float = 0.05
    k: int = 1
    validation: int = 1000
    val_every: int = 200
    full: bool = False

    def resolved(self) -> "SensingConfig":
        cfg = dataclasses.replace(self)
        if cfg.full:
            cfg.d, cfg.r = 100, 5
            if cfg.n == 0:
                cfg.n = 5 * cfg.d * cfg.r
        if cfg.n == 0:
            cfg.n = (cfg.d * (cfg.d + 1)) // 4
        return cfg

    def validate(self):
        cfg = self.resolved()
        if not 1 <= cfg.r <= cfg.d:
            raise ConfigError("need 1 <= r <= d")
        if cfg.n < 1 or cfg.validation < 1:
            raise ConfigError("n and validation must be >= 1")
        if cfg.repetitions < 1 or cfg.steps < 1:
            raise ConfigError("repetitions and steps must be >= 1")
        if cfg.eta <= 0 or cfg.sigma_p < 0 or cfg.k < 1:
            raise ConfigError("eta > 0, sigma_p >= 0, k >= 1 required")
        if cfg.val_every < 1:
            raise ConfigError("val_every must be >= 1")


@dataclass
class ConvexRateConfig:
    seed: int = 0
    dim: int = 16
    R: float = 1.0
    G_bound: float = 1.0
    # keep the quadratic core and the smoothing width small so the averaged
    # iterate's gap stays in the linear branch where the sqrt(T) rate is real
    core_frac: float = 0.0005
    sigma_p: float = 0.0001
    T_list: tuple[int, ...] = (25, 100, 400, 1600)
    repetitions: int = 5

    def validate(self):
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.R <= 0 or self.G_bound <= 0:
            raise ConfigError("R and G_bound must be positive")
        if not 0 < self.core_frac < 1:
            raise ConfigError("core_frac must lie in (0, 1)")
        if self.sigma_p < 0:
            raise ConfigError("sigma_p must be >= 0")
        if len(self.T_list) < 2 or not all(isinstance(t, int) and t >= 2 for t in self.T_list):
            raise ConfigError("T_list needs >= 2 integer entries >= 2")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")


CONFIG_TYPES = {
    "taylor": TaylorConfig,
    "rate_sweep": RateSweepConfig,
    "lower_bound": LowerBoundConfig,
    "momentum_lb": MomentumConfig,
    "sensing": SensingConfig,
    "convex_rate": ConvexRateConfig,
}


def _find_line(text: str, key: str) -> int | None:
    pat = re.compile(r"^\s*" + re.escape(key) + r"\s*=")
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return i
    return None


def _coerce(value, target_type, key):
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    return value


def _build(cls, data: dict, text: str):
    spec = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(spec))
    if unknown:
        parts = []
        for key in unknown:
            line = _find_line(text, key)
            where = f" (line {line})" if line else ""
            parts.append(f"{key}{where}")
        raise ConfigError(f"unknown config keys: {', '.join(parts)}")
    kwargs = {}
    for key, value in data.items():
        f = spec[key]
        if f.type.startswith("tuple"):
            if not isinstance(value, list):
                raise ConfigError(f"{key} must be an array")
            inner = int if "int" in f.type else float
            kwargs[key] = tuple(_coerce(v, inner, key) for v in value)
        else:
            base = {"int": int, "float": float, "str": str, "bool": bool}.get(f.type)
            kwargs[key] = _coerce(value, base, key) if base else value
    return cls(**kwargs)


def load_config(experiment: str, path=None, text: str | None = None, seed: int | None = None):
    """Build the experiment's config from a TOML file (or raw text).

    The optional ``experiment`` key inside the file must match the requested
    experiment.  ``seed`` (the CLI flag) overrides the file's value.
    """
    if experiment not in CONFIG_TYPES:
        raise ConfigError(f"unknown experiment {experiment!r}")
    if text is None:
        if path is None:
            data, text = {}, ""
        else:
            try:
                with open(path, "rb") as fh:
                    raw = fh.read()
            except OSError as e:
                raise ConfigError(f"cannot read config: {e}") from e
            text = raw.decode("utf-8", errors="replace")
            try:
                data = _toml.loads(text)
            except _toml.TOMLDecodeError as e:
                raise ConfigError(f"TOML parse error: {e}") from e
    else:
        try:
            data = _toml.loads(text)
        except _toml.TOMLDecodeError as e:
            raise ConfigError(f"TOML parse error: {e}") from e

    declared = data.pop("experiment", None)
    if declared is not None and declared != experiment:
        line = _find_line(text, "experiment")
        where = f" (line {line})" if line else ""
        raise ConfigError(
            f"config is for experiment {declared!r}, not {experiment!r}{where}"
        )
    try:
        cfg = _build(CONFIG_TYPES[experiment], data, text)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        cfg.seed = seed
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")
    cfg.validate()
    return cfg


def config_to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out
