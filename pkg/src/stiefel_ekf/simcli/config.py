"""Experiment configuration: flat ``key = value`` files with ``#`` comments."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from typing import Optional, Tuple

ENV_OUTPUT_DIR = "SIMCLI_OUT"
DEFAULT_OUTPUT_DIR = "simcli_out"

MEASUREMENT_MODELS = ("section4", "eq-filtering")
MAXVAR_SOURCES = ("closed_form", "mc", "file")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """One figure family: a manifold, a grid of prior and noise variances.

    ``sigma0_2`` holds one value per figure panel; ``xi2_list`` holds the
    curves drawn in every panel.
    """

    n: int
    k: int
    sigma0_2: Tuple[float, ...] = (1.0, 0.5, 0.1)
    xi2_list: Tuple[float, ...] = (0.1, 0.5)
    num_steps: int = 200
    num_replicates: int = 50
    seed: int = 0
    maxvar_source: Optional[str] = None
    mc_samples: int = 100_000
    measurement_model: str = "section4"
    output_dir: Optional[str] = None
    name: Optional[str] = None

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise ConfigError(f"need 1 <= k <= n, got n={self.n}, k={self.k}")
        if self.n * self.k - self.k * (self.k + 1) // 2 <= 0:
            raise ConfigError(f"St({self.n},{self.k}) has dimension 0")
        if self.num_steps < 1:
            raise ConfigError("num_steps must be >= 1")
        if self.num_replicates < 1:
            raise ConfigError("num_replicates must be >= 1")
        if not self.sigma0_2 or not self.xi2_list:
            raise ConfigError("sigma0_2 and xi2_list must be non-empty")
        for v in self.sigma0_2 + self.xi2_list:
            if not v > 0:
                raise ConfigError(f"variances must be positive, got {v}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.measurement_model not in MEASUREMENT_MODELS:
            raise ConfigError(f"measurement_model must be one of {MEASUREMENT_MODELS}")
        if self.maxvar_source is None:
            object.__setattr__(self, "maxvar_source", "closed_form" if self.k == 1 else "file")
        if self.maxvar_source not in MAXVAR_SOURCES:
            raise ConfigError(f"maxvar_source must be one of {MAXVAR_SOURCES}")
        if self.maxvar_source == "closed_form" and self.k != 1:
            raise ConfigError("closed_form maxvar exists only for k = 1 (spheres)")
        if self.mc_samples < 2:
            raise ConfigError("mc_samples must be >= 2")

    def replace(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        try:
            return dataclasses.replace(self, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def result_fields(self):
        """Fields that determine the numerical output."""
        d = dataclasses.asdict(self)
        for key in ("output_dir", "name"):
            d.pop(key)
        if d["maxvar_source"] != "mc":
            d.pop("mc_samples")
        return d

    @property
    def config_hash(self):
        blob = json.dumps(self.result_fields(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resolve_output_dir(self, override=None):
        return (override or self.output_dir or os.environ.get(ENV_OUTPUT_DIR)
                or DEFAULT_OUTPUT_DIR)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_INT_KEYS = {"n", "k", "num_steps", "num_replicates", "seed", "mc_samples"}
_LIST_KEYS = {"sigma0_2", "xi2_list"}
_STR_KEYS = {"maxvar_source", "measurement_model", "output_dir", "name"}


def _convert(key, raw, lineno):
    try:
        if key in _INT_KEYS:
            return int(raw, 0)
        if key in _LIST_KEYS:
            return tuple(float(x) for x in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value for {key}: {raw!r}") from None
    return raw


def parse_config(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _INT_KEYS | _LIST_KEYS | _STR_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, lineno)
    for key in ("n", "k"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    return ExperimentConfig(**values)


def load_config(path):
    """Read a config file. ``OSError`` propagates for I/O problems."""
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
