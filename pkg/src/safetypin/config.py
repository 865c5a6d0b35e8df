"""Flat ``key = value`` configuration shared by the simulator and the CLI."""

from dataclasses import dataclass, fields, replace
from fractions import Fraction
from typing import Dict

from .lhe import LheParams
from .punc import BloomParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    N: int = 100
    n: int = 40
    t: int = 20
    pin_space: int = 10 ** 6
    f_live: float = 1 / 64
    f_secret: float = 1 / 16
    lambda_bits: int = 128
    punc_P: int = 64              # desk profile; the punc module itself defaults to 2**10
    punc_fail_exp: int = 8
    audit_count: int = 16
    chunk_mode: str = "random"
    gc_bound: int = 4
    guess_limit: int = 1
    signature: str = "concat"
    epoch_seconds: int = 600
    seed: int = 0

    def __post_init__(self):
        if self.chunk_mode not in ("random", "deterministic"):
            raise ConfigError(f"chunk_mode must be random or deterministic, not {self.chunk_mode!r}")
        if self.signature not in ("concat", "bls"):
            raise ConfigError(f"signature must be concat or bls, not {self.signature!r}")
        for name in ("punc_P", "punc_fail_exp", "audit_count", "guess_limit", "epoch_seconds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.gc_bound < 0:
            raise ConfigError("gc_bound must be non-negative")
        try:
            self.lhe_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def lhe_params(self) -> LheParams:
        return LheParams(self.N, self.n, self.t, self.pin_space, self.f_live, self.f_secret,
                         self.lambda_bits)

    def bloom_params(self) -> BloomParams:
        return BloomParams.for_punctures(self.punc_P, self.punc_fail_exp)

    def with_(self, **changes) -> "ClusterConfig":
        return replace(self, **changes)


_TYPES = {f.name: f.type for f in fields(ClusterConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind in (int, "int"):
            return int(raw.replace("_", ""))
        if kind in (float, "float"):
            return float(Fraction(raw))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config(text: str) -> ClusterConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    values: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return ClusterConfig(**values)


def load_config(path) -> ClusterConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def dump_config(cfg: ClusterConfig) -> str:
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in fields(cfg))
