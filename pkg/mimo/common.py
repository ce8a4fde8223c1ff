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
import math

# Scenario defaults of the reference simulation setup
NUM_RAUS = 4
ANTENNAS_PER_RAU = 2
NUM_USERS = 12
NUM_PILOTS = 4
CELL_RADIUS = 500.0
PATHLOSS_EXP = 3.0
SHADOW_STD_DB = math.sqrt(6.0)
PILOT_POWER = 6.0
NOISE_POWER = 1e-8
MIN_LINK_DISTANCE = 30.0
SEED = 42
MAX_RESAMPLING = 1000

# Hidden layer sizes of the reference network
HIDDEN_LAYERS = (64, 128, 128, 128, 64)

# Default number of one-hot assignments ESPA may evaluate
ESPA_BUDGET = 20_000_000

# Tolerance of the per-user power constraint sum_b p_k^b = p_k^tot
POWER_RTOL = 1e-9

# RNG stream tags, each random consumer derives its generator from (seed, stream, index)
INSTANCE_STREAM = 0
GEOMETRY_STREAM = 1
MC_STREAM = 3
TRAIN_STREAM = 4
HOLDOUT_STREAM = 5
INIT_STREAM = 6
ASSIGN_STREAM = 7
PERTURB_STREAM = 8

# Report columns
INDEX = 'index'
SUM_MSE = 'sum_mse'
QUANTILE = 'quantile'
METHOD = 'method'


class PilotDesignError(Exception):
    """Base class of every error raised by the pilot design modules"""


class ConfigError(PilotDesignError, ValueError):
    """Invalid scenario, training or command-line parameter"""


class GeometryError(PilotDesignError, RuntimeError):
    """Cell geometry cannot satisfy the minimal link distance"""


class DatasetFormatError(PilotDesignError, ValueError):
    """Malformed dataset file"""


class DimensionError(PilotDesignError, ValueError):
    """Inconsistent array shapes between fading, allocations and configs"""


class NonDifferentiableError(PilotDesignError, ValueError):
    """Gradient requested at a boundary point of the allocation simplex"""


class BudgetExceededError(PilotDesignError, RuntimeError):
    """Exhaustive search space larger than the allowed evaluation budget"""


class CheckpointError(PilotDesignError, ValueError):
    """Unreadable or incompatible network checkpoint"""


class DivergenceError(PilotDesignError, RuntimeError):
    """Non-finite objective encountered, keeps the last good state for the caller"""

    def __init__(self, msg: str, params=None, log=None):
        super().__init__(msg)
        self.params = params
        self.log = log
