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
import itertools

import numpy as np
import pytest

from alg.mc_oracle import mc_mse_oracle
from alg.msecore import (assignment_sum_mse, batch_sum_mse, closed_form_pi, correlation_matrix, cross_correlation,
                         per_link_mse, sum_mse, sum_mse_gradient)
from alg.util import assignment_to_allocation, iassignments
from mimo.channel import generate_dataset, instance_rng
from mimo.common import *
from misc.algs import appa
from misc.generator import get_random_allocation, get_random_config, get_random_instance
from misc.util import check_msecore_gradient, print_report


def run_test(lam: np.ndarray, alloc: np.ndarray, config, realizations: int = 100_000):
    report = per_link_mse(lam, alloc, config)
    print_report(report)
    mc = mc_mse_oracle(lam, alloc, config, realizations)
    print_report(mc)
    return report, mc


def test_correlation():
    p = np.array([[4.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
    rho = correlation_matrix(p)
    assert np.allclose(np.diag(rho), p.sum(axis=1))
    assert rho[0, 2] == 0.0
    assert rho[0, 1] == pytest.approx(cross_correlation(p[0], p[1])) == pytest.approx(2.0)
    assert np.array_equal(rho, rho.T)
    # Uniform split gives fully correlated pilots
    config = get_random_config(K=3, tau=2)
    assert np.allclose(correlation_matrix(appa(config)), 6.0)


def test_orthogonal_user():
    config = get_random_config(K=3, M=2, N=2, tau=2)
    lam = get_random_instance(config)
    alloc = assignment_to_allocation(np.array([0, 1, 1]), config.p_tot, config.tau)
    pi = per_link_mse(lam, alloc, config).pi
    sigma2, P = config.noise_power, config.p_tot[0]
    # User 0 owns pilot 0 alone, its error is the interference-free MMSE
    assert np.allclose(pi[0], config.N * lam[0] * sigma2 / (sigma2 + P * lam[0]), rtol=1e-12)
    assert (pi[1:] > 0).all()


def test_mse_bounds():
    config = get_random_config(K=6, M=4, N=2, tau=3)
    rng = instance_rng(1)
    for lam in generate_dataset(config, 20):
        report = per_link_mse(lam, get_random_allocation(config, rng), config)
        assert ((report.pi >= 0) & (report.pi <= config.N * lam)).all()
        assert report.sum_mse == pytest.approx(report.per_user.sum())
        assert report.per_user.shape == (6,)


def test_permutation_symmetry():
    config = get_random_config(K=6, M=4, N=2, tau=3)
    rng = instance_rng(2)
    for lam in generate_dataset(config, 10):
        alloc = get_random_allocation(config, rng)
        value = sum_mse(lam, alloc, config)
        for perm in itertools.permutations(range(config.tau)):
            assert sum_mse(lam, alloc[:, list(perm)], config) == pytest.approx(value, rel=1e-12)
        users = rng.permutation(config.K)
        assert sum_mse(lam[users], alloc[users], config) == pytest.approx(value, rel=1e-12)


def test_interference_monotonicity():
    config = get_random_config(K=4, M=3, N=2, tau=2)
    lam = get_random_instance(config)
    alloc = get_random_allocation(config, instance_rng(3))
    pi = per_link_mse(lam, alloc, config).pi
    for j, m in itertools.product(range(config.K), range(config.M)):
        louder = lam.copy()
        louder[j, m] *= 1.5
        other = per_link_mse(louder, alloc, config).pi
        rest = np.arange(config.K) != j
        # Every other user sees a stronger interferer on RAU m only
        assert (other[rest, m] > pi[rest, m]).all()
        assert np.allclose(np.delete(other[rest], m, axis=1), np.delete(pi[rest], m, axis=1), rtol=1e-14, atol=0.0)


def test_invalid_inputs():
    config = get_random_config(K=3, M=2, tau=2)
    lam = get_random_instance(config)
    with pytest.raises(ValueError):
        sum_mse(lam, np.array([[6.0, 0.0], [3.0, 3.0], [3.0, 2.0]]), config)
    with pytest.raises(ValueError):
        sum_mse(lam, np.array([[7.0, -1.0], [3.0, 3.0], [3.0, 3.0]]), config)
    with pytest.raises(DimensionError):
        sum_mse(lam, np.full((3, 3), 2.0), config)
    with pytest.raises(DimensionError):
        sum_mse(lam.T, appa(config), config)
    with pytest.raises(DimensionError):
        sum_mse(np.where(lam == lam.min(), 0.0, lam), appa(config), config)


def test_batch_evaluation():
    config = get_random_config(K=4, M=2, tau=2)
    dataset = generate_dataset(config, 8)
    alloc = appa(config)
    values = batch_sum_mse(dataset, np.broadcast_to(alloc, (8, 4, 2)), config)
    assert np.allclose(values, [sum_mse(lam, alloc, config) for lam in dataset], rtol=1e-14)


def test_assignment_evaluator():
    config = get_random_config(K=5, M=3, tau=2)
    lam = get_random_instance(config)
    assignments = np.array(list(iassignments(config.K, config.tau)))
    fast = assignment_sum_mse(lam, assignments, config)
    slow = [sum_mse(lam, assignment_to_allocation(a, config.p_tot, config.tau), config) for a in assignments]
    assert np.allclose(fast, slow, rtol=1e-12)


def test_gradient():
    for K, M, tau in ((3, 2, 2), (6, 4, 3), (12, 4, 4)):
        result = check_msecore_gradient(get_random_config(K=K, M=M, tau=tau))
        print(result)
        assert result.passed


def test_gradient_user_swap():
    config = get_random_config(K=4, M=3, N=2, tau=3)
    lam = get_random_instance(config)
    lam[1] = lam[0]
    p = get_random_allocation(config, instance_rng(4))
    order = [1, 0, 2, 3]
    grad, swapped = sum_mse_gradient(lam, p, config), sum_mse_gradient(lam, p[order], config)
    assert np.allclose(swapped[order], grad, rtol=1e-10, atol=0.0)
    assert not np.allclose(grad[0], grad[1], rtol=1e-6, atol=0.0)


def test_gradient_scaled_noise():
    # Analytic gradient against the closed form with a coarser, independent central difference
    config = get_random_config(K=4, M=2, tau=3, noise_power=1e-6)
    lam = get_random_instance(config)
    p = get_random_allocation(config, instance_rng(2))
    grad = sum_mse_gradient(lam, p, config)
    h = 1e-5
    for k, b in itertools.product(range(config.K), range(config.tau)):
        e = np.zeros_like(p)
        e[k, b] = h
        numeric = (closed_form_pi(lam, p + e, config.N, config.noise_power).sum()
                   - closed_form_pi(lam, p - e, config.N, config.noise_power).sum()) / (2 * h)
        assert grad[k, b] == pytest.approx(numeric, rel=1e-4, abs=1e-6 * np.abs(grad).max())


def test_gradient_boundary():
    config = get_random_config(K=3, M=2, tau=2)
    alloc = assignment_to_allocation(np.array([0, 1, 0]), config.p_tot, config.tau)
    with pytest.raises(NonDifferentiableError):
        sum_mse_gradient(get_random_instance(config), alloc, config)


def test_mc_oracle():
    config = get_random_config(K=3, M=2, N=2, tau=2)
    rng = instance_rng(11)
    for lam in generate_dataset(config, 3):
        for alloc in (get_random_allocation(config, rng), appa(config),
                      assignment_to_allocation(np.array([0, 1, 0]), config.p_tot, config.tau)):
            report, mc = run_test(lam, alloc, config)
            assert mc.std_err.shape == report.pi.shape
            assert (np.abs(mc.pi - report.pi) <= np.maximum(0.01 * report.pi, 4 * mc.std_err)).all()


def test_mc_oracle_determinism():
    config = get_random_config(K=3, M=2, tau=2)
    lam, alloc = get_random_instance(config), appa(config)
    first = mc_mse_oracle(lam, alloc, config, 5000, seed=3)
    assert np.array_equal(first.pi, mc_mse_oracle(lam, alloc, config, 5000, seed=3).pi)
    assert not np.array_equal(first.pi, mc_mse_oracle(lam, alloc, config, 5000, seed=4).pi)
    with pytest.raises(ConfigError):
        mc_mse_oracle(lam, alloc, config, 0)


if __name__ == '__main__':
    test_correlation()
    test_orthogonal_user()
    test_gradient()
    test_mc_oracle()
