# Copyright 2022 Janos Czentye
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at:
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
import dataclasses
import math
import pathlib

import numpy as np

from mimo.common import *

# Short aliases accepted in key=value config files and on the command line
ALIASES = dict(M='num_raus', N='antennas_per_rau', K='num_users', tau='num_pilots', r='cell_radius_m',
               zeta='pathloss_exponent', p_tot='pilot_power_total', noise='noise_power', dmin='min_link_distance_m',
               seed='rng_seed')


@dataclasses.dataclass(frozen=True)
class SystemConfig:
    """Scenario constants of one multi-user distributed massive MIMO cell"""
    num_raus: int = NUM_RAUS  # M remote antenna units
    antennas_per_rau: int = ANTENNAS_PER_RAU  # N antennas per RAU
    num_users: int = NUM_USERS  # K single-antenna users
    num_pilots: int = NUM_PILOTS  # tau orthonormal pilot basis vectors
    cell_radius_m: float = CELL_RADIUS  # circumradius of the hexagonal cell
    pathloss_exponent: float = PATHLOSS_EXP
    shadow_std_db: float = SHADOW_STD_DB  # std of 10*log10(s_km)
    pilot_power_total: tuple[float, ...] | float = PILOT_POWER  # p_k^tot in W, broadcast if scalar
    noise_power: float = NOISE_POWER  # sigma_n^2 in W
    min_link_distance_m: float = MIN_LINK_DISTANCE
    rng_seed: int = SEED
    freeze_geometry: bool = False  # reuse one geometry for every instance
    max_resampling: int = MAX_RESAMPLING

    def __post_init__(self):
        p_tot = np.atleast_1d(np.asarray(self.pilot_power_total, dtype=np.float64))
        if p_tot.size == 1:
            p_tot = np.full(self.num_users, p_tot[0])
        object.__setattr__(self, 'pilot_power_total', tuple(float(p) for p in p_tot))
        self.validate()

    def validate(self):
        for name in ('num_raus', 'antennas_per_rau', 'num_users', 'num_pilots', 'max_resampling'):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)!r}")
        if self.num_pilots >= self.num_users:
            raise ConfigError(f"Pilot shortage is assumed: tau={self.num_pilots} must be less than K={self.num_users}")
        for name in ('cell_radius_m', 'pathloss_exponent', 'noise_power', 'min_link_distance_m'):
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) > 0):
                raise ConfigError(f"{name} must be strictly positive, got {getattr(self, name)!r}")
        if not (math.isfinite(self.shadow_std_db) and self.shadow_std_db >= 0):
            raise ConfigError(f"shadow_std_db must be nonnegative, got {self.shadow_std_db!r}")
        if len(self.pilot_power_total) != self.num_users:
            raise ConfigError(f"Expected {self.num_users} pilot powers, got {len(self.pilot_power_total)}")
        if not all(math.isfinite(p) and p > 0 for p in self.pilot_power_total):
            raise ConfigError(f"Pilot powers must be strictly positive, got {self.pilot_power_total}")

    @property
    def M(self) -> int:
        return self.num_raus

    @property
    def N(self) -> int:
        return self.antennas_per_rau

    @property
    def K(self) -> int:
        return self.num_users

    @property
    def tau(self) -> int:
        return self.num_pilots

    @property
    def p_tot(self) -> np.ndarray:
        """Per-user total pilot power as a float64 vector"""
        return np.array(self.pilot_power_total, dtype=np.float64)

    def replace(self, **changes) -> 'SystemConfig':
        # Broadcast the power again if K changes without explicit powers
        if 'num_users' in changes and 'pilot_power_total' not in changes:
            if len(set(self.pilot_power_total)) == 1:
                changes['pilot_power_total'] = self.pilot_power_total[0]
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def parse_key_values(path: str | pathlib.Path) -> dict[str, str]:
    """Read *key=value* lines of a config file skipping blank lines and # comments"""
    values = {}
    with open(path) as f:
        for i, line in enumerate(f, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition('=')
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{i}: expected key=value, got {line!r}")
            values[key.strip()] = value.strip()
    return values


def _convert(field: dataclasses.Field, value: str):
    if field.name == 'pilot_power_total':
        return tuple(float(v) for v in value.replace(',', ' ').split())
    if field.type in (bool, 'bool'):
        if value.lower() not in ('1', '0', 'true', 'false', 'yes', 'no'):
            raise ValueError(value)
        return value.lower() in ('1', 'true', 'yes')
    if field.type in (int, 'int'):
        return int(value)
    return float(value)


def config_from_mapping(values: dict[str, str | int | float], base: SystemConfig = None) -> SystemConfig:
    """Override *base* config with raw or typed values keyed by field names or short aliases"""
    fields = {f.name: f for f in dataclasses.fields(SystemConfig)}
    changes = {}
    for key, value in values.items():
        if key == 'shadow_var_db':
            changes['shadow_std_db'] = math.sqrt(float(value))
            continue
        name = ALIASES.get(key, key)
        if name not in fields:
            raise ConfigError(f"Unknown scenario parameter: {key!r}")
        try:
            changes[name] = _convert(fields[name], value) if isinstance(value, str) else value
        except ValueError as e:
            raise ConfigError(f"Invalid value for {key!r}: {value!r}") from e
    base = base if base is not None else SystemConfig()
    return base.replace(**changes)


def load_config(path: str | pathlib.Path, base: SystemConfig = None) -> SystemConfig:
    """Load a key=value scenario file on top of the defaults"""
    return config_from_mapping(parse_key_values(path), base)
