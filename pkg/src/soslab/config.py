"""Experiment configuration for the command-line harness."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .lattice import GeometryError, parse_region
from .measure import MOVE_SETS

SUBCOMMANDS = ("exact", "simulate", "scan-lambda", "bottleneck", "layers", "contour-dump")
EXACT_WHAT = ("Z", "Zel", "Zrn", "Ztr", "gap", "cheeger", "congestion", "tv", "family", "mean_height")
METRICS = ("gap_exact", "coupling_time", "escape_time")
SIGNINGS = ("plus", "minus", "pinned", "free")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration; names the offending field."""

    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    """Everything needed to rerun one experiment.

    ``ceiling`` of None means no ceiling.  ``lam`` and ``lambda_grid`` are
    mutually exclusive; sweeps need the grid, the other subcommands ``lam``.
    """

    subcommand: str
    region: str = "box:1"
    beta: float = 2.0
    lam: float | None = None
    lambda_grid: list[float] | None = None
    ceiling: float | None = 2
    height: int = 0
    signing: str = "free"
    kernel: str = "pm_one"
    seed: int = 0
    reps: int = 1
    out: str = "soslab_out"
    report: bool = False
    censor_file: str | None = None
    # exact
    what: str = "Z"
    # simulate / layers
    t_horizon: float = 100.0
    t_burn: float = 0.0
    dt: float = 1.0
    observable: str = "mean_height"
    start: str = "floor"
    # scan-lambda
    metric: str = "gap_exact"
    escape_r: int = 2
    t_max: float = 1e6
    # bottleneck / layers / contour-dump
    k: int = 1
    r_values: list[float] = field(default_factory=lambda: [0, 1, 2, 4])
    field_file: str | None = None
    allow_large_field: bool = False

    # -- validation ------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError("subcommand", f"must be one of {SUBCOMMANDS}")
        try:
            parse_region(self.region)
        except (GeometryError, ValueError, KeyError) as e:
            raise ConfigError("region", str(e)) from None
        if not (isinstance(self.beta, (int, float)) and self.beta > 0):
            raise ConfigError("beta", "must be a positive number")
        if self.lam is not None and self.lambda_grid is not None:
            raise ConfigError("lambda", "--lambda and --lambda-grid are mutually exclusive")
        if self.subcommand == "scan-lambda":
            if not self.lambda_grid:
                raise ConfigError("lambda_grid", "scan-lambda needs a lambda grid")
        elif self.lam is None:
            self.lam = 0.0
        for v in ([self.lam] if self.lam is not None else []) + list(self.lambda_grid or []):
            if not (isinstance(v, (int, float)) and v >= 0 and math.isfinite(v)):
                raise ConfigError("lambda", "values must be finite and >= 0")
            if v > 1 and not self.allow_large_field:
                raise ConfigError("lambda", "values above 1 need allow_large_field")
        if self.ceiling is not None and (self.ceiling < 0 or self.ceiling != int(self.ceiling)):
            raise ConfigError("ceiling", "must be a nonnegative integer or null")
        if self.signing not in SIGNINGS:
            raise ConfigError("signing", f"must be one of {SIGNINGS}")
        if self.kernel not in MOVE_SETS:
            raise ConfigError("kernel", f"must be one of {MOVE_SETS}")
        if self.what not in EXACT_WHAT:
            raise ConfigError("what", f"must be one of {EXACT_WHAT}")
        if self.metric not in METRICS:
            raise ConfigError("metric", f"must be one of {METRICS}")
        if self.reps < 1:
            raise ConfigError("reps", "must be >= 1")
        if self.t_horizon <= 0 or self.dt <= 0 or self.t_burn < 0:
            raise ConfigError("t_horizon", "times must be positive")
        if self.subcommand in ("exact", "bottleneck") and self.ceiling is None:
            raise ConfigError("ceiling", f"{self.subcommand} needs a finite ceiling")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", "must be a nonnegative integer")
        return self

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        if "subcommand" not in d:
            raise ConfigError("subcommand", "missing")
        return cls(**d).validate()

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"not valid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ConfigError("config", "top level must be an object")
        return cls.from_dict(d)

    def digest(self) -> str:
        """sha256 of the canonical JSON form (output path excluded)."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()
