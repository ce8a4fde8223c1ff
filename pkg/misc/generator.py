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

from mimo.channel import generate_dataset
from mimo.config import SystemConfig


def get_random_config(K: int = 3, M: int = 2, N: int = 2, tau: int = 2, seed: int = 42, **kwargs) -> SystemConfig:
    """Small scenario with the reference cell parameters"""
    return SystemConfig(num_raus=M, antennas_per_rau=N, num_users=K, num_pilots=tau, rng_seed=seed, **kwargs)


def get_random_instance(config: SystemConfig, index: int = 0) -> np.ndarray:
    """One K x M fading instance of the scenario"""
    return generate_dataset(config, 1, start=index)[0]


def get_random_allocation(config: SystemConfig, rng: np.random.Generator, low: float = 0.05) -> np.ndarray:
    """Strictly positive K x tau allocation drawn from a Dirichlet distribution and scaled to p_k^tot"""
    w = rng.dirichlet(np.ones(config.tau), size=config.K)
    w = (w + low) / (1 + config.tau * low)
    return config.p_tot[:, None] * w

