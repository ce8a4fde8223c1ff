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
import time

import numpy as np

from alg.msecore import MseReport, check_allocation, check_fading, correlation_matrix
from mimo.channel import instance_rng, sample_small_scale
from mimo.common import MC_STREAM, ConfigError
from mimo.config import SystemConfig

# Upper bound on complex entries held in memory per realization chunk
CHUNK_ENTRIES = 1 << 22


def mc_mse_oracle(lam: np.ndarray, alloc: np.ndarray, config: SystemConfig, num_realizations: int = 100_000,
                  seed: int = None) -> MseReport:
    """
    Monte-Carlo estimate of the per-link MMSE estimation error by simulating the received pilot signal
    Y = sum_j g_j phi_j^H + N, correlating it with each user's pilot and applying g_k = p_k Lambda_k Q_k^-1 y_k.
    Q_k is diagonal, so the estimator inverts elementwise. Realizations are drawn in chunks, each from its own derived
    stream, and reduced in chunk order.

    :param lam:                 K x M large-scale fading
    :param alloc:               K x tau power allocation
    :param config:              scenario parameters
    :param num_realizations:    number of fading and noise realizations
    :param seed:                seed of the derived streams (config seed if None)
    :return:                    report with empirical pi_km and their standard errors
    """
    if num_realizations < 1:
        raise ConfigError(f"Number of realizations must be positive, got {num_realizations}")
    t_start = time.perf_counter()
    lam, alloc = check_fading(lam, config), check_allocation(alloc, config)
    K, M, N, tau = config.K, config.M, config.N, config.tau
    seed = config.rng_seed if seed is None else seed
    sigma2 = config.noise_power
    phi = np.sqrt(alloc)  # K x tau, real pilot signals phi_k = sum_b sqrt(p_k^b) s_b
    rho = correlation_matrix(alloc)
    power = alloc.sum(axis=1)
    # Per-antenna variances: row k of lam repeated N times along the M*N antennas
    lam_ant = np.repeat(lam, N, axis=1)  # K x MN
    q = (rho ** 2) @ lam_ant + (sigma2 * power)[:, None]  # diagonal of Q_k
    weight = (power[:, None] * lam_ant / q).T  # MN x K
    sqrt_lam = np.sqrt(lam_ant).T  # MN x K
    chunk = max(1, CHUNK_ENTRIES // (M * N * max(K, tau)))
    err_sum, err_sq_sum = np.zeros((M, K)), np.zeros((M, K))
    for i, start in enumerate(range(0, num_realizations, chunk)):
        size = min(chunk, num_realizations - start)
        rng = instance_rng(seed, i, MC_STREAM)
        g = sample_small_scale(config, rng, size).h * sqrt_lam  # size x MN x K
        noise = np.sqrt(sigma2 / 2) * (rng.standard_normal((size, M * N, tau))
                                        + 1j * rng.standard_normal((size, M * N, tau)))
        Y = g @ phi.astype(np.complex128) + noise  # size x MN x tau
        y = Y @ phi.T  # column k is Y phi_k
        err = np.abs(g - weight * y) ** 2
        # Sum the N antennas of each RAU
        err = err.reshape(size, M, N, K).sum(axis=2)
        err_sum += err.sum(axis=0)
        err_sq_sum += (err ** 2).sum(axis=0)
    mean = err_sum / num_realizations
    var = np.maximum(err_sq_sum / num_realizations - mean ** 2, 0.0)
    std_err = np.sqrt(var / num_realizations)
    return MseReport(mean.T, float(mean.sum()), 'monte_carlo', time.perf_counter() - t_start, seed, std_err.T)
