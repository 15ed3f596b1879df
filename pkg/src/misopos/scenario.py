"""Scenario files.

A scenario is a YAML (or JSON) mapping with the sections below; every key is
optional and unknown keys are rejected with their dotted path in the error.

.. code-block:: yaml

    system:                      # SystemConfig fields
      carrier_frequency_hz: 60.0e+9
      bandwidth_hz: 40.0e+6
      n_subcarriers: 20
      n_transmissions: 10
      n_bs_antennas: 10
      n_beams: 1
      tx_power_watts: 1.0
      element_spacing_m: null    # null -> half wavelength
      noise_temperature_k: 290
      atmospheric_attenuation_db_per_km: 16
      pilot_norm: 1.0            # norm of every effective pilot vector
    geometry:
      ms_position_m: [30, 20]    # or distance_m + angle_deg
      d_max_m: 100               # service radius, also the tau search span
    multipath:
      n_nlos: 0
      lmr_db: null               # null: LMR follows geometry; .inf: LOS only
      scatterers_m: null         # explicit [[x, y], ...] reflector positions
      reflector_density_per_m: 0.142857
      reflection_loss_db: -10
      reflection_loss_spread_db: 4
    noise:
      snr_db: 5                  # null: thermal noise k_B T_0 B and geometric path loss
    channel:
      gain_phase_deg: null       # null: uniform random phase per trial
    estimation:
      grid_points: 150
      lags: 1
      refine: false
    seeds:
      master: 0
      freeze_pilots: false
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .model import (DEFAULT_REFLECTION_LOSS_DB, DEFAULT_REFLECTION_SPREAD_DB,
                    DEFAULT_REFLECTOR_DENSITY, SystemConfig)


@dataclass(frozen=True)
class Scenario:
    system: SystemConfig = field(default_factory=SystemConfig)
    ms_position_m: tuple[float, float] = (30.0, 20.0)
    d_max_m: float = 100.0
    snr_db: float | None = 5.0
    n_nlos: int = 0
    lmr_db: float | None = None
    scatterers_m: tuple[tuple[float, float], ...] | None = None
    reflector_density_per_m: float = DEFAULT_REFLECTOR_DENSITY
    reflection_loss_db: float = DEFAULT_REFLECTION_LOSS_DB
    reflection_loss_spread_db: float = DEFAULT_REFLECTION_SPREAD_DB
    gain_phase_rad: float | None = None
    grid_points: int = 150
    lags: int = 1
    refine: bool = False
    master_seed: int = 0
    freeze_pilots: bool = False

    def __post_init__(self):
        pos = tuple(float(v) for v in self.ms_position_m)
        if len(pos) != 2:
            raise ConfigError("geometry.ms_position_m must have two coordinates")
        object.__setattr__(self, "ms_position_m", pos)
        dist = math.hypot(*pos)
        if dist == 0:
            raise ConfigError("geometry: MS cannot sit at the BS")
        if pos[0] <= 0:
            raise ConfigError("geometry: MS must lie in the front half-plane (x > 0) of the array")
        if dist >= self.system.range_support_m:
            raise ConfigError(
                f"geometry: MS distance {dist:.1f} m exceeds the unambiguous range "
                f"c*N*T_s = {self.system.range_support_m:.1f} m")
        if not 0 < self.d_max_m < self.system.range_support_m:
            raise ConfigError("geometry.d_max_m must be positive and inside the unambiguous range")
        if dist > self.d_max_m:
            raise ConfigError("geometry: MS distance exceeds d_max_m (outside the delay search span)")
        if self.scatterers_m is not None:
            sc = tuple(tuple(float(v) for v in s) for s in self.scatterers_m)
            if any(len(s) != 2 for s in sc):
                raise ConfigError("multipath.scatterers_m entries must be [x, y] pairs")
            object.__setattr__(self, "scatterers_m", sc)
            if self.n_nlos not in (0, len(sc)):
                raise ConfigError("multipath.n_nlos disagrees with the number of scatterers")
            object.__setattr__(self, "n_nlos", len(sc))
        if int(self.n_nlos) != self.n_nlos or self.n_nlos < 0:
            raise ConfigError("multipath.n_nlos must be a nonnegative integer")
        if int(self.grid_points) != self.grid_points or self.grid_points < 2:
            raise ConfigError("estimation.grid_points must be an integer >= 2")
        # L < N is checked by the MM estimator itself, so N = 1 designs stay loadable
        if int(self.lags) != self.lags or self.lags < 1:
            raise ConfigError("estimation.lags must be an integer >= 1")

    @property
    def distance_m(self) -> float:
        return math.hypot(*self.ms_position_m)

    @property
    def angle_rad(self) -> float:
        return math.atan2(self.ms_position_m[1], self.ms_position_m[0])

    def to_dict(self) -> dict[str, Any]:
        """Nested mapping in the scenario-file schema (round-trips through ``from_dict``)."""
        return {
            "system": asdict(self.system),
            "geometry": {"ms_position_m": list(self.ms_position_m), "d_max_m": self.d_max_m},
            "multipath": {
                "n_nlos": self.n_nlos,
                "lmr_db": self.lmr_db,
                "scatterers_m": None if self.scatterers_m is None else [list(s) for s in self.scatterers_m],
                "reflector_density_per_m": self.reflector_density_per_m,
                "reflection_loss_db": self.reflection_loss_db,
                "reflection_loss_spread_db": self.reflection_loss_spread_db,
            },
            "noise": {"snr_db": self.snr_db},
            "channel": {"gain_phase_deg": None if self.gain_phase_rad is None
                        else math.degrees(self.gain_phase_rad)},
            "estimation": {"grid_points": self.grid_points, "lags": self.lags, "refine": self.refine},
            "seeds": {"master": self.master_seed, "freeze_pilots": self.freeze_pilots},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "Scenario":
        return _parse(data or {})

    def override(self, **changes) -> "Scenario":
        """``dataclasses.replace`` that also accepts SystemConfig field names."""
        sys_names = {f.name for f in fields(SystemConfig)}
        sys_changes = {k: changes.pop(k) for k in list(changes) if k in sys_names}
        system = replace(self.system, **sys_changes) if sys_changes else self.system
        return replace(self, system=system, **changes)


# --------------------------------------------------------------------------

_SECTIONS = {
    "system": {f.name for f in fields(SystemConfig)},
    "geometry": {"ms_position_m", "distance_m", "angle_deg", "d_max_m"},
    "multipath": {"n_nlos", "lmr_db", "scatterers_m", "reflector_density_per_m",
                  "reflection_loss_db", "reflection_loss_spread_db"},
    "noise": {"snr_db"},
    "channel": {"gain_phase_deg"},
    "estimation": {"grid_points", "lags", "refine"},
    "seeds": {"master", "freeze_pilots"},
}
_INT_KEYS = {"n_subcarriers", "n_transmissions", "n_bs_antennas", "n_beams",
             "n_nlos", "grid_points", "lags", "master"}
_BOOL_KEYS = {"refine", "freeze_pilots"}


def _number(path: str, value, integer: bool = False):
    if value is None:
        return None
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got a boolean")
    try:
        # PyYAML reads 60e9 (no dot) as a string.
        num = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if integer:
        if not num.is_integer():
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(num)
    return num


def _coerce(section: str, key: str, value):
    path = f"{section}.{key}"
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if key in ("ms_position_m",):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(f"{path}: expected [x, y]")
        return tuple(_number(path, v) for v in value)
    if key == "scatterers_m":
        if value is None:
            return None
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list of [x, y] pairs")
        return tuple(_coerce(section, "ms_position_m", v) for v in value)
    return _number(path, value, integer=key in _INT_KEYS)


def _parse(data: Mapping[str, Any]) -> Scenario:
    if not isinstance(data, Mapping):
        raise ConfigError("scenario file must contain a mapping at top level")
    clean: dict[str, dict[str, Any]] = {}
    for section, body in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown scenario key '{section}'")
        body = body or {}
        if not isinstance(body, Mapping):
            raise ConfigError(f"section '{section}' must be a mapping")
        for key, value in body.items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown scenario key '{section}.{key}'")
            clean.setdefault(section, {})[key] = _coerce(section, key, value)

    system = SystemConfig(**clean.get("system", {}))
    kwargs: dict[str, Any] = {"system": system}
    geo = clean.get("geometry", {})
    if "ms_position_m" in geo and ("distance_m" in geo or "angle_deg" in geo):
        raise ConfigError("geometry: give either ms_position_m or distance_m/angle_deg, not both")
    if "distance_m" in geo or "angle_deg" in geo:
        if "distance_m" not in geo or "angle_deg" not in geo:
            raise ConfigError("geometry: distance_m and angle_deg must be given together")
        ang = math.radians(geo["angle_deg"])
        kwargs["ms_position_m"] = (geo["distance_m"] * math.cos(ang), geo["distance_m"] * math.sin(ang))
    elif "ms_position_m" in geo:
        kwargs["ms_position_m"] = geo["ms_position_m"]
    if "d_max_m" in geo:
        kwargs["d_max_m"] = geo["d_max_m"]
    kwargs.update(clean.get("multipath", {}))
    if "snr_db" in clean.get("noise", {}):
        kwargs["snr_db"] = clean["noise"]["snr_db"]
    phase = clean.get("channel", {}).get("gain_phase_deg")
    if phase is not None:
        kwargs["gain_phase_rad"] = math.radians(phase)
    kwargs.update(clean.get("estimation", {}))
    seeds = clean.get("seeds", {})
    if "master" in seeds:
        kwargs["master_seed"] = seeds["master"]
    if "freeze_pilots" in seeds:
        kwargs["freeze_pilots"] = seeds["freeze_pilots"]
    return Scenario(**kwargs)


def load_scenario(path: str | Path) -> Scenario:
    """Read a YAML/JSON scenario file (never modified)."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse scenario file: {exc}") from None
    return Scenario.from_dict(data)


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(json.loads(json.dumps(scenario.to_dict(), default=float)),
                          sort_keys=False)
