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
import logging
import time

import numpy as np

from alg.msecore import MseReport, check_allocation, check_fading, closed_form_gradient, per_link_mse
from alg.util import grouped_softmax, softmax_backward
from mimo.channel import instance_rng
from mimo.common import PERTURB_STREAM, ConfigError, DivergenceError
from mimo.config import SystemConfig

log = logging.getLogger(__name__)

STEPS = 500
STEP_SIZE = 1e-1
# Std of the logit perturbation breaking the pilot-permutation symmetry of the uniform start
PERTURBATION = 1e-2


def default_logits(config: SystemConfig, seed: int = None) -> np.ndarray:
    """APPA logits (all zero) with a small seeded perturbation"""
    rng = instance_rng(config.rng_seed if seed is None else seed, 0, PERTURB_STREAM)
    return rng.normal(0.0, PERTURBATION, size=(config.K, config.tau))


def continuous_opt(lam: np.ndarray, config: SystemConfig, init: np.ndarray = None, steps: int = STEPS,
                   step_size: float = STEP_SIZE, seed: int = None) -> tuple[np.ndarray, MseReport]:
    """
    Per-instance reference optimizer of the continuous allocation problem. The allocation is parametrized as
    p_k = p_k^tot * softmax(u_k) and the logits u follow normalized gradient steps of length *step_size*, the gradient
    chained from the analytic sum MSE gradient through the softmax Jacobian.

    :param lam:         K x M large-scale fading
    :param config:      scenario parameters
    :param init:        strictly positive K x tau starting allocation (perturbed APPA if None)
    :param steps:       number of gradient steps
    :param step_size:   Euclidean length of one step in logit space
    :param seed:        seed of the default start perturbation
    :return:            best allocation seen and its report
    """
    t_start = time.perf_counter()
    lam = check_fading(lam, config)
    p_tot = config.p_tot
    if init is None:
        u = default_logits(config, seed)
    else:
        init = check_allocation(init, config)
        if (init <= 0).any():
            raise ConfigError("Initial allocation must be strictly positive")
        u = np.log(init / p_tot[:, None])
    best_p, best_val = None, np.inf
    for i in range(steps + 1):
        s = grouped_softmax(u)
        p = p_tot[:, None] * s
        if i == 0 and init is not None:
            # Keep the exact starting point for the best-seen contract
            p = init
        val, grad = closed_form_gradient(lam, np.maximum(p, np.finfo(float).tiny), config.N, config.noise_power)
        if not np.isfinite(val):
            raise DivergenceError(f"Non-finite objective at step {i}", params=best_p)
        if val < best_val:
            best_p, best_val = p.copy(), val
        if i == steps:
            break
        du = softmax_backward(s, p_tot[:, None] * grad)
        if not np.isfinite(du).all():
            raise DivergenceError(f"Non-finite gradient at step {i}", params=best_p)
        norm = np.linalg.norm(du)
        if norm == 0.0:
            log.debug(f"Zero gradient reached at step {i}")
            break
        u = u - step_size * du / norm
    report = per_link_mse(lam, best_p, config, 'contopt')
    report.elapsed = time.perf_counter() - t_start
    return best_p, report
