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
import time

import numpy as np

from mimo.common import *
from mimo.config import SystemConfig


@dataclasses.dataclass
class MseReport:
    """Per-link estimation errors of one channel instance and their provenance"""
    pi: np.ndarray  # K x M matrix of pi_km
    sum_mse: float
    method: str = 'closed_form'
    elapsed: float = 0.0
    seed: int = None
    std_err: np.ndarray = None  # K x M Monte-Carlo standard errors if estimated

    @property
    def per_user(self) -> np.ndarray:
        """MSE_k = sum_m pi_km"""
        return self.pi.sum(axis=1)


def check_fading(lam: np.ndarray, config: SystemConfig) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape[-2:] != (config.K, config.M):
        raise DimensionError(f"Fading shape {lam.shape} does not match K={config.K}, M={config.M}")
    if not np.isfinite(lam).all() or (lam <= 0).any():
        raise DimensionError("Large-scale fading must be finite and strictly positive")
    return lam


def check_allocation(alloc: np.ndarray, config: SystemConfig, rtol: float = POWER_RTOL) -> np.ndarray:
    """Validate nonnegativity and the per-user power constraint sum_b p_k^b = p_k^tot"""
    alloc = np.asarray(alloc, dtype=np.float64)
    if alloc.shape[-2:] != (config.K, config.tau):
        raise DimensionError(f"Allocation shape {alloc.shape} does not match K={config.K}, tau={config.tau}")
    if not np.isfinite(alloc).all():
        raise DimensionError("Allocation must be finite")
    if (alloc < 0).any():
        raise ValueError("Allocation entries must be nonnegative")
    p_tot = config.p_tot
    if (np.abs(alloc.sum(axis=-1) - p_tot) > rtol * p_tot).any():
        raise ValueError(f"Allocation rows must sum to p_tot={p_tot} within relative {rtol}")
    return alloc


def cross_correlation(p_k: np.ndarray, p_j: np.ndarray) -> float:
    """Pilot cross-correlation rho_kj = sum_b sqrt(p_k^b * p_j^b) = phi_k^H phi_j"""
    p_k, p_j = np.asarray(p_k, dtype=np.float64), np.asarray(p_j, dtype=np.float64)
    if p_k.shape != p_j.shape:
        raise DimensionError(f"Allocation rows differ in length: {p_k.shape} != {p_j.shape}")
    if (p_k < 0).any() or (p_j < 0).any():
        raise ValueError("Allocation entries must be nonnegative")
    return float(np.sqrt(p_k * p_j).sum())


def correlation_matrix(alloc: np.ndarray) -> np.ndarray:
    """All pairwise rho_kj of (..., K, tau) allocations, the diagonal is the literal sum_b p_k^b"""
    sq = np.sqrt(alloc)
    rho = sq @ np.swapaxes(sq, -1, -2)
    diag = np.arange(alloc.shape[-2])
    rho[..., diag, diag] = alloc.sum(axis=-1)
    return rho


def _mse_terms(lam: np.ndarray, rho2: np.ndarray, power: np.ndarray, sigma2: float) -> tuple:
    """Return interference-plus-noise A and denominator D of pi_km = N lam_km A_km / D_km"""
    diag = np.arange(rho2.shape[-1])
    rho2_kk = rho2[..., diag, diag].copy()
    rho2 = rho2.copy()
    rho2[..., diag, diag] = 0.0
    A = rho2 @ lam + (sigma2 * power)[..., None]
    D = A + rho2_kk[..., None] * lam
    return A, D


def closed_form_pi(lam: np.ndarray, alloc: np.ndarray, N: int, sigma2: float) -> np.ndarray:
    """
    Closed-form MMSE estimation error of every (user, RAU) link without constraint checks. Works on single
    instances (K x M, K x tau) or stacked batches (S x K x M, S x K x tau).

    :param lam:     large-scale fading coefficients
    :param alloc:   pilot power allocation
    :param N:       antennas per RAU
    :param sigma2:  noise power
    :return:        pi_km with the shape of *lam*
    """
    rho = correlation_matrix(alloc)
    A, D = _mse_terms(lam, rho ** 2, alloc.sum(axis=-1), sigma2)
    return N * lam * A / D


def per_link_mse(lam: np.ndarray, alloc: np.ndarray, config: SystemConfig, method: str = 'closed_form') -> MseReport:
    """Evaluate pi_km of one instance and the sum MSE objective"""
    t_start = time.perf_counter()
    lam, alloc = check_fading(lam, config), check_allocation(alloc, config)
    pi = closed_form_pi(lam, alloc, config.N, config.noise_power)
    return MseReport(pi, float(pi.sum()), method, time.perf_counter() - t_start)


def sum_mse(lam: np.ndarray, alloc: np.ndarray, config: SystemConfig) -> float:
    """Sum MSE objective of the pilot power allocation problem"""
    return per_link_mse(lam, alloc, config).sum_mse


def batch_sum_mse(lam: np.ndarray, alloc: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Sum MSE of every instance of stacked (S, K, M) fading and (S, K, tau) allocations"""
    lam, alloc = check_fading(lam, config), check_allocation(alloc, config)
    return closed_form_pi(lam, alloc, config.N, config.noise_power).sum(axis=(-2, -1))


def closed_form_gradient(lam: np.ndarray, alloc: np.ndarray, N: int, sigma2: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Analytic partial derivatives of sum_km pi_km with respect to every p_k^b, chained through rho_kj.
    Allocations must be strictly positive. Batched inputs are supported as in closed_form_pi.

    :return:    tuple of per-instance sum MSE and the gradient with the shape of *alloc*
    """
    sq = np.sqrt(alloc)
    rho = correlation_matrix(alloc)
    power = rho[..., np.arange(alloc.shape[-2]), np.arange(alloc.shape[-2])]
    A, D = _mse_terms(lam, rho ** 2, power, sigma2)
    pi = N * lam * A / D
    c = N * lam / D ** 2
    # d pi_km / d A_km, noise and interference enter A linearly
    dA = c * (power ** 2)[..., None] * lam
    # d F / d rho_kj^2 for k != j and d F / d rho_kk^2
    g_off = dA @ np.swapaxes(lam, -1, -2)
    g_diag = -(c * A * lam).sum(axis=-1)
    g_noise = sigma2 * dA.sum(axis=-1)
    H = 2.0 * rho * g_off
    diag = np.arange(alloc.shape[-2])
    H[..., diag, diag] = 0.0
    # rho_kj and rho_jk share the same partial 1/2 sqrt(p_j^b / p_k^b)
    H = H + np.swapaxes(H, -1, -2)
    grad = 0.5 * (H @ sq) / sq + (2.0 * power * g_diag + g_noise)[..., None]
    return pi.sum(axis=(-2, -1)), grad


def sum_mse_gradient(lam: np.ndarray, alloc: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Gradient of the sum MSE with respect to the K x tau allocation at an interior point"""
    lam, alloc = check_fading(lam, config), check_allocation(alloc, config)
    if (alloc <= 0).any():
        raise NonDifferentiableError("sqrt in rho_kj is not differentiable at p_k^b = 0")
    _, grad = closed_form_gradient(lam, alloc, config.N, config.noise_power)
    return grad


def assignment_sum_mse(lam: np.ndarray, assignments: np.ndarray, config: SystemConfig) -> np.ndarray:
    """
    Sum MSE of one-hot allocations specialized to rho_kj^2 = p_k^tot p_j^tot if users share a pilot, else 0.

    :param lam:         K x M fading of one instance
    :param assignments: B x K pilot indices (0-based)
    :param config:      scenario parameters
    :return:            sum MSE of every assignment
    """
    p_tot = config.p_tot
    assignments = np.atleast_2d(assignments)
    same = assignments[:, :, None] == assignments[:, None, :]
    rho2 = np.where(same, np.outer(p_tot, p_tot)[None], 0.0)
    A, D = _mse_terms(lam, rho2, p_tot, config.noise_power)
    return (config.N * lam * A / D).sum(axis=(-2, -1))
