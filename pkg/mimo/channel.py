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
import functools
import logging
import multiprocessing
import pathlib
import typing

import numpy as np

from mimo.common import *
from mimo.config import SystemConfig

log = logging.getLogger(__name__)

SQRT3 = np.sqrt(3.0)


class Geometry(typing.NamedTuple):
    """Positions of RAUs and users in meters, the cell is centered at the origin"""
    rau_positions: np.ndarray  # M x 2
    user_positions: np.ndarray  # K x 2


class SmallScaleDraw(typing.NamedTuple):
    """Small-scale fading realization h_k of all users stacked as columns"""
    h: np.ndarray  # (M*N) x K complex


def instance_rng(seed: int, index: int = 0, stream: int = INSTANCE_STREAM) -> np.random.Generator:
    """Derive an independent generator for the given (seed, stream, index) triplet"""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, stream, index])


def in_hexagon(points: np.ndarray, r: float) -> np.ndarray:
    """Mask of *points* inside the flat-top regular hexagon of circumradius *r* centered at the origin"""
    x, y = np.abs(points[..., 0]), np.abs(points[..., 1])
    return (y <= SQRT3 / 2 * r) & (SQRT3 * x + y <= SQRT3 * r)


def sample_hexagon(rng: np.random.Generator, n: int, r: float) -> np.ndarray:
    """Draw *n* i.i.d. points uniformly over the hexagon by rejection from the bounding box"""
    points = np.empty((0, 2))
    while len(points) < n:
        # Acceptance ratio of the box is 3/4
        cand = rng.uniform((-r, -SQRT3 / 2 * r), (r, SQRT3 / 2 * r), size=(2 * (n - len(points)) + 4, 2))
        points = np.concatenate((points, cand[in_hexagon(cand, r)]))
    return points[:n]


def link_distances(geometry: Geometry) -> np.ndarray:
    """Return the K x M matrix of user-RAU distances"""
    diff = geometry.user_positions[:, None, :] - geometry.rau_positions[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def sample_geometry(config: SystemConfig, rng: np.random.Generator) -> Geometry:
    """
    Place RAUs and users i.i.d. uniformly in the hexagonal cell and resample users that are closer than the minimal
    link distance to any RAU.

    :param config:  scenario parameters
    :param rng:     random generator
    :return:        valid geometry
    """
    raus = sample_hexagon(rng, config.M, config.cell_radius_m)
    users = sample_hexagon(rng, config.K, config.cell_radius_m)
    for _ in range(config.max_resampling):
        close = (link_distances(Geometry(raus, users)) < config.min_link_distance_m).any(axis=1)
        if not close.any():
            return Geometry(raus, users)
        users[close] = sample_hexagon(rng, int(close.sum()), config.cell_radius_m)
    raise GeometryError(f"Cannot place {config.K} users at least {config.min_link_distance_m} m away from "
                        f"{config.M} RAUs after {config.max_resampling} resampling rounds")


def large_scale_fading(geometry: Geometry, config: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Calculate lambda_km = d_km^-zeta * s_km with log-normal shadowing s_km of the given dB-domain std.

    :param geometry:    positions satisfying the minimal link distance
    :param config:      scenario parameters
    :param rng:         random generator
    :return:            K x M matrix of large-scale fading coefficients
    """
    d = link_distances(geometry)
    if (d < config.min_link_distance_m).any():
        raise GeometryError(f"Link distance {d.min():.3f} m below minimum {config.min_link_distance_m} m")
    shadow_db = rng.normal(0.0, config.shadow_std_db, size=d.shape)
    lam = d ** -config.pathloss_exponent * 10.0 ** (shadow_db / 10.0)
    if not (np.isfinite(lam).all() and (lam > 0).all()):
        raise GeometryError("Large-scale fading must be strictly positive and finite")
    return lam


def sample_small_scale(config: SystemConfig, rng: np.random.Generator, size: int = None) -> SmallScaleDraw:
    """Draw circularly symmetric unit-variance complex Gaussian fading, optionally *size* draws stacked in front"""
    shape = (config.M * config.N, config.K) if size is None else (size, config.M * config.N, config.K)
    return SmallScaleDraw((rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0))


def frozen_geometry(config: SystemConfig) -> Geometry:
    """Geometry shared by every instance when the config freezes the positions"""
    return sample_geometry(config, instance_rng(config.rng_seed, 0, GEOMETRY_STREAM))


def generate_instance(config: SystemConfig, index: int, stream: int = INSTANCE_STREAM,
                      seed: int = None) -> np.ndarray:
    """Generate the *index*-th channel instance from its own derived stream"""
    rng = instance_rng(config.rng_seed if seed is None else seed, index, stream)
    geometry = frozen_geometry(config) if config.freeze_geometry else sample_geometry(config, rng)
    return large_scale_fading(geometry, config, rng)


def generate_dataset(config: SystemConfig, count: int, stream: int = INSTANCE_STREAM, start: int = 0,
                     seed: int = None, processes: int = None) -> np.ndarray:
    """
    Generate *count* independent channel instances. Each instance has its own stream derived from the seed and its
    index, hence serial and parallel generation give identical results.

    :param config:      scenario parameters
    :param count:       number of instances
    :param stream:      stream tag separating training, held-out and other datasets
    :param start:       index of the first instance
    :param seed:        override of the config seed
    :param processes:   number of worker processes (serial if None or 1)
    :return:            array of shape (count, K, M)
    """
    if count < 0:
        raise ConfigError(f"Instance count must be nonnegative, got {count}")
    gen = functools.partial(generate_instance, config, stream=stream, seed=seed)
    indices = range(start, start + count)
    if processes and processes > 1 and count > 1:
        with multiprocessing.Pool(processes) as pool:
            instances = pool.map(gen, indices, chunksize=max(1, count // (4 * processes)))
    else:
        instances = [gen(i) for i in indices]
    log.debug(f"Generated {count} instances of stream {stream} from index {start}")
    return np.stack(instances) if instances else np.empty((0, config.K, config.M))


def write_dataset(path: str | pathlib.Path, instances: np.ndarray):
    """Write instances as a header line 'K M' followed by one k-major row of K*M floats per instance"""
    instances = np.asarray(instances, dtype=np.float64)
    if instances.ndim != 3:
        raise DimensionError(f"Instances must share a common (K, M), got array of shape {instances.shape}")
    count, K, M = instances.shape
    with open(path, 'w') as f:
        f.write(f"{K} {M}\n")
        # 17 significant digits make the text round trip exact
        np.savetxt(f, instances.reshape(count, K * M), fmt='%.17g', delimiter=' ')


def read_dataset(path: str | pathlib.Path) -> np.ndarray:
    """Read a dataset file written by write_dataset and return an array of shape (count, K, M)"""
    with open(path) as f:
        header = f.readline().split()
        try:
            K, M = (int(v) for v in header)
        except ValueError:
            raise DatasetFormatError(f"{path}: invalid header {' '.join(header)!r}, expected 'K M'") from None
        if K < 1 or M < 1:
            raise DatasetFormatError(f"{path}: invalid dimensions K={K}, M={M}")
        rows = []
        for i, line in enumerate(f, start=2):
            values = line.split()
            if not values:
                continue
            if len(values) != K * M:
                raise DatasetFormatError(f"{path}:{i}: expected {K * M} values for K={K}, M={M}, got {len(values)}")
            try:
                rows.append([float(v) for v in values])
            except ValueError:
                raise DatasetFormatError(f"{path}:{i}: non-numeric value") from None
    data = np.array(rows, dtype=np.float64).reshape(len(rows), K, M)
    if not np.isfinite(data).all():
        raise DatasetFormatError(f"{path}: dataset contains non-finite values")
    if (data <= 0).any():
        raise DatasetFormatError(f"{path}: large-scale fading must be strictly positive")
    return data
