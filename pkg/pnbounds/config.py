"""
Experiment Configuration Module

Contains the SweepSpec dataclass describing one experiment axis with its
fixed context, and the loader for flat `key = value` config files.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from pnbounds.errors import ConfigError
from pnbounds.estimator import SymbolPolicy
from pnbounds.ofdm_frame import (
    SPEED_OF_LIGHT, NoiseModel, OfdmConfig, TargetTruth, check_model_validity
)
from pnbounds.phase_noise import OscillatorKind, OscillatorModel
from pnbounds.utils import config_digest

logger = logging.getLogger(__name__)


class SweepAxis(str, Enum):
    SNR = "snr"
    RANGE = "range"
    F3DB = "f3db"
    FLOOP = "floop"


class BoundRequest(str, Enum):
    """
    Bound families a sweep can ask for.

    CRB takes prior information on xi only. CRB_DELAY_PRIOR also keeps the
    tau-tau prior entry of the delay-dependent PN covariance; it can fall below
    the PN-free CRB and is reported as a sensitivity column.
    """

    CRB_FREE = "crb_free"
    CRB = "crb"
    CRB_DELAY_PRIOR = "crb_dp"
    LB = "lb"


DEFAULT_SWEEP_VALUES = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0)


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ConfigFile(BaseModel):
    """Validated contents of a config file, keyed by the documented dotted names."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    fc_hz: float = Field(28e9, gt=0, alias="ofdm.fc_hz")
    delta_f_hz: float = Field(120e3, gt=0, alias="ofdm.delta_f_hz")
    n: int = Field(256, ge=1, alias="ofdm.n")
    m: int = Field(10, ge=1, alias="ofdm.m")
    tcp_s: float = Field(0.58e-6, gt=0, alias="ofdm.tcp_s")
    range_m: float = Field(50.0, ge=0, alias="target.range_m")
    velocity_mps: float = Field(20.0, alias="target.velocity_mps")
    gain: float = Field(1.0, gt=0, alias="target.gain")
    gain_phase_rad: float = Field(0.0, alias="target.gain_phase_rad")
    osc_kind: OscillatorKind = Field(OscillatorKind.FRO, alias="osc.kind")
    f3db_hz: float = Field(100e3, gt=0, alias="osc.f3db_hz")
    floop_hz: float = Field(1e6, gt=0, alias="osc.floop_hz")
    snr_db: float = Field(20.0, alias="channel.snr_db")
    axis: SweepAxis = Field(SweepAxis.SNR, alias="sweep.axis")
    values: List[float] = Field(list(DEFAULT_SWEEP_VALUES), alias="sweep.values")
    families: List[BoundRequest] = Field(
        [BoundRequest.CRB_FREE, BoundRequest.CRB, BoundRequest.LB], alias="sweep.families"
    )
    n_realizations: int = Field(100, ge=1, alias="mc.n_realizations")
    seed: int = Field(0, ge=0, lt=2 ** 64, alias="mc.seed")
    window_cells: float = Field(3.0, gt=0, alias="mc.window_cells")
    campaign_trials: int = Field(0, ge=0, alias="mc.campaign_trials")
    symbols_policy: SymbolPolicy = Field(SymbolPolicy.FIXED, alias="symbols.policy")

    @field_validator("osc_kind", mode="before")
    @classmethod
    def _parse_kind(cls, value: Any) -> OscillatorKind:
        return OscillatorKind.parse(value)

    @field_validator("values", "families", mode="before")
    @classmethod
    def _parse_list(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("values")
    @classmethod
    def _check_values(cls, values: List[float]) -> List[float]:
        if not values:
            raise ValueError("sweep.values must not be empty")
        if not all(math.isfinite(v) for v in values):
            raise ValueError("sweep.values must be finite")
        if any(b < a for a, b in zip(values, values[1:])):
            raise ValueError("sweep.values must be sorted ascending")
        return values

    @field_validator("families")
    @classmethod
    def _check_families(cls, families: List[BoundRequest]) -> List[BoundRequest]:
        if not families:
            raise ValueError("sweep.families must not be empty")
        return list(dict.fromkeys(families))


CONFIG_KEYS: Tuple[str, ...] = tuple(info.alias for info in ConfigFile.model_fields.values())


@dataclass(frozen=True)
class SweepPoint:
    """Everything one axis value needs: frame, target, oscillator and noise."""

    axis_value: float
    ofdm: OfdmConfig
    truth: TargetTruth
    osc: OscillatorModel
    noise: NoiseModel
    snr_db: float


@dataclass(frozen=True)
class SweepSpec:
    """
    One experiment axis with the fixed context of every other parameter.

    Defaults reproduce the reference scenario: 28 GHz carrier, 120 kHz spacing,
    N = 256, M = 10, target at 50 m and 20 m/s, f3dB = 100 kHz, floop = 1 MHz,
    SNR 20 dB, 100 PN realizations.
    """

    axis: SweepAxis = SweepAxis.SNR
    values: Tuple[float, ...] = DEFAULT_SWEEP_VALUES
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    range_m: float = 50.0
    velocity_mps: float = 20.0
    gain: complex = 1.0 + 0.0j
    osc: OscillatorModel = field(default_factory=OscillatorModel)
    snr_db: float = 20.0
    families: Tuple[BoundRequest, ...] = (BoundRequest.CRB_FREE, BoundRequest.CRB, BoundRequest.LB)
    n_realizations: int = 100
    seed: int = 0
    window_cells: float = 3.0
    campaign_trials: int = 0
    symbols_policy: SymbolPolicy = SymbolPolicy.FIXED

    @property
    def truth(self) -> TargetTruth:
        """Target at the fixed range and velocity."""
        return TargetTruth.from_range_velocity(self.range_m, self.velocity_mps, self.gain)

    @property
    def num_rows(self) -> int:
        return len(self.values)

    def point(self, value: float) -> SweepPoint:
        """Resolve the context of one axis value; only the swept quantity changes."""
        truth, osc, snr_db = self.truth, self.osc, self.snr_db
        if self.axis is SweepAxis.SNR:
            snr_db = value
        elif self.axis is SweepAxis.RANGE:
            truth = TargetTruth.from_range_velocity(value, self.velocity_mps, self.gain)
        elif self.axis is SweepAxis.F3DB:
            osc = replace(osc, f3db_hz=value)
        elif self.axis is SweepAxis.FLOOP:
            osc = replace(osc, floop_hz=value)
        return SweepPoint(axis_value=value, ofdm=self.ofdm, truth=truth, osc=osc,
                          noise=NoiseModel.from_snr_db(snr_db, self.gain), snr_db=snr_db)

    def with_overrides(self, seed: Optional[int] = None,
                       families: Optional[Tuple[BoundRequest, ...]] = None) -> "SweepSpec":
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if families is not None:
            changes["families"] = tuple(families)
        return replace(self, **changes)

    def to_flat_lines(self) -> List[str]:
        """Resolved config as `key = value` lines in documented key order."""
        values = {
            "ofdm.fc_hz": self.ofdm.carrier_freq_hz,
            "ofdm.delta_f_hz": self.ofdm.subcarrier_spacing_hz,
            "ofdm.n": self.ofdm.num_subcarriers,
            "ofdm.m": self.ofdm.num_symbols,
            "ofdm.tcp_s": self.ofdm.cp_duration_s,
            "target.range_m": self.range_m,
            "target.velocity_mps": self.velocity_mps,
            "target.gain": abs(self.gain),
            "target.gain_phase_rad": float(np.angle(self.gain)),
            "osc.kind": self.osc.kind.value,
            "osc.f3db_hz": self.osc.f3db_hz,
            "osc.floop_hz": self.osc.floop_hz,
            "channel.snr_db": self.snr_db,
            "sweep.axis": self.axis.value,
            "sweep.values": ",".join(repr(float(v)) for v in self.values),
            "sweep.families": ",".join(f.value for f in self.families),
            "mc.n_realizations": self.n_realizations,
            "mc.seed": self.seed,
            "mc.window_cells": self.window_cells,
            "mc.campaign_trials": self.campaign_trials,
            "symbols.policy": self.symbols_policy.value,
        }
        return [f"{key} = {_format_value(values[key])}" for key in CONFIG_KEYS]

    @property
    def digest(self) -> str:
        """sha256 of the resolved config lines."""
        return config_digest("\n".join(self.to_flat_lines()) + "\n")


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """
    Split flat config text into a key -> raw value dict.

    Raises:
        ConfigError: On malformed lines, duplicate or unknown keys
    """
    raw: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {stripped!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in raw:
            raise ConfigError(f"{source}:{number}: duplicate key '{key}'")
        raw[key] = value

    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"{source}: unknown config keys: {', '.join(unknown)}")
    return raw


def build_spec(raw: Dict[str, Any], source: str = "<config>") -> SweepSpec:
    """
    Validate raw values and resolve them into a SweepSpec.

    Raises:
        ConfigError: If a value does not parse or is out of range
        ModelValidityError: If the fixed target violates the model assumptions
    """
    try:
        parsed = ConfigFile.model_validate(raw)
    except ValidationError as err:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in err.errors()
        )
        raise ConfigError(f"{source}: {problems}") from err

    try:
        ofdm = OfdmConfig(parsed.fc_hz, parsed.delta_f_hz, parsed.n, parsed.m, parsed.tcp_s)
        osc = OscillatorModel(parsed.osc_kind, parsed.f3db_hz, parsed.floop_hz)
    except ValueError as err:
        raise ConfigError(f"{source}: {err}") from err

    spec = SweepSpec(
        axis=parsed.axis,
        values=tuple(float(v) for v in parsed.values),
        ofdm=ofdm,
        range_m=parsed.range_m,
        velocity_mps=parsed.velocity_mps,
        gain=complex(parsed.gain * np.exp(1j * parsed.gain_phase_rad)),
        osc=osc,
        snr_db=parsed.snr_db,
        families=tuple(parsed.families),
        n_realizations=parsed.n_realizations,
        seed=parsed.seed,
        window_cells=parsed.window_cells,
        campaign_trials=parsed.campaign_trials,
        symbols_policy=parsed.symbols_policy,
    )

    check_model_validity(spec.ofdm, spec.truth)
    if spec.axis is SweepAxis.RANGE:
        beyond = [v for v in spec.values if 2.0 * v / SPEED_OF_LIGHT > ofdm.cp_duration_s]
        if beyond:
            logger.warning(f"Ranges {beyond} m exceed the CP limit; those rows are bound-only")
    if spec.axis is SweepAxis.FLOOP and osc.kind is OscillatorKind.FRO:
        logger.warning("floop sweep with a free-running oscillator: floop has no effect")
    return spec


def default_spec() -> SweepSpec:
    return build_spec({}, "<defaults>")


def load_config(path: Union[str, Path]) -> SweepSpec:
    """
    Load and resolve a flat `key = value` config file.

    Args:
        path: UTF-8 text file; '#' starts a comment line

    Returns:
        Fully resolved SweepSpec with defaults applied

    Raises:
        ConfigError: Unreadable file, unknown keys, bad values or unknown variants
        ModelValidityError: Physically inconsistent fixed target (e.g. delay beyond the CP)
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"Cannot read config {path}: {err}") from err
    spec = build_spec(parse_config_text(text, str(path)), str(path))
    logger.info(f"Loaded {path}: axis {spec.axis.value}, {spec.num_rows} points")
    return spec
