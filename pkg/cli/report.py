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
import datetime
import json
import pathlib
import sys

import numpy as np
import pandas as pd

import mimo
from alg.msecore import MseReport
from alg.trainer import cdf_table
from mimo.common import *
from mimo.config import SystemConfig

MANIFEST_SUFFIX = '.manifest.json'


def timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec='seconds')


@dataclasses.dataclass
class RunManifest:
    """Provenance of one command run: scenario snapshot, seeds, code version, command line, timestamps and outputs"""
    command: str
    config: dict
    seeds: dict = dataclasses.field(default_factory=dict)
    argv: list[str] = dataclasses.field(default_factory=lambda: sys.argv[1:])
    version: str = mimo.__version__
    started: str = dataclasses.field(default_factory=timestamp)
    finished: str = None
    outputs: list[str] = dataclasses.field(default_factory=list)
    extra: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def start(cls, command: str, config: SystemConfig, argv: list[str] = None, **seeds) -> 'RunManifest':
        manifest = cls(command, config.to_dict(), dict(scenario=config.rng_seed, **seeds))
        if argv is not None:
            manifest.argv = list(argv)
        return manifest

    def add_output(self, path: str | pathlib.Path) -> pathlib.Path:
        self.outputs.append(str(path))
        return pathlib.Path(path)

    def write(self, path: str | pathlib.Path):
        """Finish the run and write the manifest, the manifest file itself is listed among the outputs"""
        self.add_output(path)
        self.finished = timestamp()
        with open(path, 'w') as f:
            json.dump(dataclasses.asdict(self), f, indent=2, default=_jsonify)
            f.write('\n')


def _jsonify(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, (np.ndarray, tuple)):
        return list(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def per_instance_frame(reports: list[MseReport], assignments: list[np.ndarray] = None,
                       indices: list[int] = None) -> pd.DataFrame:
    """Per-instance sum MSE with per-user MSE columns and, for one-hot methods, the 1-based pilot of each user"""
    indices = range(len(reports)) if indices is None else indices
    per_user = np.array([r.per_user for r in reports])
    frame = pd.DataFrame({INDEX: list(indices), SUM_MSE: [r.sum_mse for r in reports]})
    for k in range(per_user.shape[1]):
        frame[f'mse_user{k + 1}'] = per_user[:, k]
    if assignments is not None:
        pilots = np.array(assignments) + 1
        for k in range(pilots.shape[1]):
            frame[f'pilot_user{k + 1}'] = pilots[:, k]
    return frame


def write_method_reports(out_dir: pathlib.Path, method: str, reports: list[MseReport], manifest: RunManifest,
                         assignments: list[np.ndarray] = None, indices: list[int] = None):
    """Write {method}_per_instance.csv and {method}_cdf.csv"""
    frame = per_instance_frame(reports, assignments, indices)
    frame.to_csv(manifest.add_output(out_dir / f'{method}_per_instance.csv'), index=False, float_format='%.17g')
    cdf_table(frame[SUM_MSE]).to_csv(manifest.add_output(out_dir / f'{method}_cdf.csv'), index=False,
                                     float_format='%.17g')


def timing_frame(timings: dict[str, tuple[int, float]]) -> pd.DataFrame:
    """Total and per-instance elapsed seconds of each method"""
    return pd.DataFrame([(m, n, total, total / n if n else np.nan) for m, (n, total) in timings.items()],
                        columns=[METHOD, 'count', 'total_s', 'per_instance_s'])


def summary_frame(results: dict[str, list[MseReport]]) -> pd.DataFrame:
    """Count, mean, median and extremes of the per-instance sum MSE of each method"""
    rows = []
    for method, reports in results.items():
        values = pd.Series([r.sum_mse for r in reports])
        rows.append((method, len(values), values.mean(), values.median(), values.min(), values.max()))
    return pd.DataFrame(rows, columns=[METHOD, 'count', 'mean', 'median', 'min', 'max'])

