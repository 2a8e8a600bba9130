"""Run configuration: flat key=value files with command-line overrides.

The effective config is written verbatim into every output directory so
a run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import asdict, dataclass, field, fields


class ConfigError(Exception):
    pass


def parse_fraction(text: str) -> float:
    """Float literal or exact fraction like 4/6."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [parse_fraction(x) for x in text.split(",") if x.strip()]


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


@dataclass
class RunConfig:
    data: str = ""
    out: str = "runs/out"
    behaviors: list[str] = field(default_factory=lambda: ["view", "cart", "buy"])
    dim: int = 64
    layers: list[int] | None = None  # default depends on K, see resolve()
    lambdas: list[float] | None = None
    gamma: float = 0.1
    mu: float = 1e-4
    lr: float = 1e-3
    epochs: int = 200
    batch: int = 1024
    patience: int = 10
    seed: int = 0
    fusion: str = "projection"
    head: str = "pme"
    variant: str = "full"
    tower: str = "sum"
    k: int = 10
    eval_every: int = 1

    def resolve(self) -> "RunConfig":
        """Fill K-dependent defaults and validate."""
        num = len(self.behaviors)
        if num < 1:
            raise ConfigError("need at least one behavior")
        if self.layers is None:
            self.layers = [4] + [1] * (num - 1) if num == 3 else [1] * num
        if self.lambdas is None:
            self.lambdas = [0.0, 4 / 6, 2 / 6] if num == 3 else [1.0 / num] * num
        if len(self.layers) != num:
            raise ConfigError(f"{len(self.layers)} layer counts for {num} behaviors")
        if len(self.lambdas) != num:
            raise ConfigError(f"{len(self.lambdas)} loss weights for {num} behaviors")
        if any(l < 1 for l in self.layers):
            raise ConfigError(f"layer counts must be >= 1: {self.layers}")
        for name in ("dim", "epochs", "batch", "patience", "k", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr <= 0 or self.gamma < 0 or self.mu < 0:
            raise ConfigError("lr must be positive, gamma and mu non-negative")
        return self


_PARSERS = {
    "behaviors": _str_list,
    "layers": _int_list,
    "lambdas": _float_list,
    "dim": int,
    "epochs": int,
    "batch": int,
    "patience": int,
    "seed": int,
    "k": int,
    "eval_every": int,
    "gamma": parse_fraction,
    "mu": parse_fraction,
    "lr": parse_fraction,
}


def read_config_file(path: str) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def build_config(file_path: str | None, overrides: dict) -> RunConfig:
    """Config file values first, then non-None overrides on top."""
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    if file_path:
        if not os.path.exists(file_path):
            raise ConfigError(f"config file not found: {file_path}")
        for key, raw in read_config_file(file_path).items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} in {file_path}")
            setattr(cfg, key, _PARSERS.get(key, str)(raw) if isinstance(raw, str) else raw)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown config override {key!r}")
        setattr(cfg, key, value)
    return cfg.resolve()


def write_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        for key, value in asdict(cfg).items():
            if isinstance(value, list):
                value = ",".join(str(x) for x in value)
            fh.write(f"{key} = {value}\n")


def config_from_file_roundtrip(path: str) -> RunConfig:
    """Load a config snapshot previously produced by write_config."""
    return build_config(path, {})


# ---------------------------------------------------------------------------
# grid helpers for the loss-weight and layer sweeps


def lambda_grid(num_behaviors: int, denominator: int = 6):
    """All weight vectors on the 1/denominator grid that sum to 1."""
    out = []
    for combo in itertools.product(range(denominator + 1), repeat=num_behaviors - 1):
        rest = denominator - sum(combo)
        if rest < 0:
            continue
        weights = [c / denominator for c in combo] + [rest / denominator]
        out.append(weights)
    return out


def layer_grid(num_behaviors: int, choices=(1, 2, 3, 4)):
    return [list(c) for c in itertools.product(choices, repeat=num_behaviors)]
