"""Experiment configuration, unit conversions and validation.

All config files carry dB/dBm and degrees; everything downstream of the
loader works in linear watts and radians.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Inconsistent or unsupported experiment configuration."""


class DegenerateGeometryError(RuntimeError):
    """UE drop could not satisfy the minimum-distance constraint."""


class IllPosedModelError(RuntimeError):
    """A statistical operator cannot be formed (e.g. singular pilot covariance)."""


FADING_MODES = ("rician-probabilistic", "all-los", "rayleigh-only", "uncorrelated")
RICIAN_SPLITS = ("paper", "power")


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float:
    return 10.0 * math.log10(value)


def dbm_to_watts(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Scenario parameters for one simulation campaign.

    Field names match the JSON schema exactly. Powers are dBm, `delta` is dB,
    `asd` is degrees, `antenna_spacing` is in wavelengths.
    """

    num_cells_per_side: int = 4
    cell_side: float = 250.0
    K: int = 10
    M: int = 100
    tau_c: int = 200
    tau_p: int = 10
    tau_u: int = 190
    tau_d: int = 0
    reuse_factor: int = 1
    p_max_ul: float = 10.0
    delta: float = 10.0
    noise_power_ul: float = -94.0
    noise_power_dl: float = -94.0
    bandwidth: float = 20e6
    min_bs_distance: float = 35.0
    asd: float = 5.0
    num_clusters: int = 6
    antenna_spacing: float = 0.5
    seed: int = 42
    fading_mode: str = "rician-probabilistic"
    rician_split: str = "paper"

    def __post_init__(self):
        if self.num_cells_per_side < 1:
            raise ConfigError("num_cells_per_side must be >= 1")
        if self.cell_side <= 0:
            raise ConfigError("cell_side must be positive")
        if self.K < 0:
            raise ConfigError("K must be >= 0")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.tau_u < 0 or self.tau_d < 0 or self.tau_p < 0:
            raise ConfigError("tau_u, tau_d and tau_p must be >= 0")
        if self.tau_p + self.tau_u + self.tau_d != self.tau_c:
            raise ConfigError(
                f"tau_p + tau_u + tau_d = {self.tau_p + self.tau_u + self.tau_d} "
                f"must equal tau_c = {self.tau_c}"
            )
        if self.tau_p != self.reuse_factor * self.K:
            raise ConfigError(
                f"tau_p = {self.tau_p} must equal reuse_factor * K = "
                f"{self.reuse_factor * self.K}"
            )
        self._validate_reuse_factor()
        if not 0.0 < self.antenna_spacing <= 0.5:
            raise ConfigError("antenna_spacing must be in (0, 0.5] wavelengths")
        if self.num_clusters < 1:
            raise ConfigError("num_clusters must be >= 1")
        if self.fading_mode not in FADING_MODES:
            raise ConfigError(f"unknown fading_mode {self.fading_mode!r}")
        if self.rician_split not in RICIAN_SPLITS:
            raise ConfigError(f"unknown rician_split {self.rician_split!r}")
        if self.min_bs_distance < 0:
            raise ConfigError("min_bs_distance must be >= 0")

    def _validate_reuse_factor(self):
        f = self.reuse_factor
        n = self.num_cells_per_side
        if f == 1 or f == n * n:
            return
        if f in (2, 4):
            # checkerboard / 2x2 tiling only wrap cleanly on an even grid
            if n % 2 != 0:
                raise ConfigError(
                    f"reuse_factor {f} needs an even grid side, got {n}"
                )
            return
        raise ConfigError(
            f"unsupported reuse_factor {f}: supported are 1, 2, 4 or {n * n} "
            f"(one group per cell)"
        )

    # -- derived quantities (linear units) --

    @property
    def num_cells(self) -> int:
        return self.num_cells_per_side**2

    @property
    def num_ues(self) -> int:
        return self.num_cells * self.K

    @property
    def area_side(self) -> float:
        return self.num_cells_per_side * self.cell_side

    @property
    def p_max_watts(self) -> float:
        return dbm_to_watts(self.p_max_ul)

    @property
    def delta_linear(self) -> float:
        return db_to_linear(self.delta)

    @property
    def noise_ul_watts(self) -> float:
        return dbm_to_watts(self.noise_power_ul)

    @property
    def noise_dl_watts(self) -> float:
        return dbm_to_watts(self.noise_power_dl)

    @property
    def asd_rad(self) -> float:
        return math.radians(self.asd)

    @property
    def prelog_ul(self) -> float:
        return self.tau_u / self.tau_c

    @property
    def prelog_dl(self) -> float:
        return self.tau_d / self.tau_c

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # -- JSON round trip --

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
