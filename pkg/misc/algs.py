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
import numpy as np

from mimo.config import SystemConfig


def appa(config: SystemConfig) -> np.ndarray:
    """
    Average pilot power allocation: each user's total pilot power is split equally among the tau pilot sequences.

    :param config:  scenario parameters
    :return:        K x tau allocation with entries p_k^tot / tau
    """
    return np.repeat(config.p_tot[:, None] / config.tau, config.tau, axis=1)


def rpa(config: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Random pilot assignment: every user is fully assigned to one pilot drawn uniformly and independently.

    :param config:  scenario parameters
    :param rng:     random generator
    :return:        length-K vector of 0-based pilot indices
    """
    return rng.integers(0, config.tau, size=config.K)
