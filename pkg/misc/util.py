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
import typing

import numpy as np
import pandas as pd
import tabulate

from alg.dnn import INFER, TRAIN, NetworkArch, NetworkParams, forward, forward_macs, init_params, training_macs
from alg.msecore import MseReport, closed_form_gradient, closed_form_pi
from alg.trainer import as_inputs, loss_and_grad
from alg.util import relative_error
from mimo.channel import generate_dataset, instance_rng
from mimo.common import *
from mimo.config import SystemConfig
from misc.generator import get_random_allocation

# Default gradient-check tolerances of the objective and the end-to-end network gradients
MSECORE_RTOL = 1e-5
NETWORK_RTOL = 1e-4


class SuiteResult(typing.NamedTuple):
    suite: str
    checked: int
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def print_report(report: MseReport, title: str = None):
    """Print the pi_km matrix of a report with per-user sums"""
    print((title or report.method).center(80, '#'))
    rows = [[k + 1, *row, row.sum()] for k, row in enumerate(report.pi)]
    print(tabulate.tabulate(rows, ['User', *(f"RAU {m + 1}" for m in range(report.pi.shape[1])), 'MSE_k'],
                            floatfmt='.6e', tablefmt='pretty'))
    print(f"Sum MSE: {report.sum_mse:.9e} - elapsed: {report.elapsed:.6f}s")
    print('#' * 80)


def print_frame(frame: pd.DataFrame, title: str):
    """Print a report table such as the per-method statistics of an evaluation run"""
    print(f"  {title}  ".center(80, '#'))
    print(tabulate.tabulate(frame, headers='keys', showindex=False, floatfmt='.6e', numalign='decimal',
                            stralign='center', tablefmt='pretty'))
    print('#' * 80)


def print_complexity(arch: NetworkArch, batch_size: int, iterations: int):
    """Print the analytic and counted multiply-accumulates of the network"""
    counted = forward(init_params(arch, instance_rng(0)), np.ones((1, arch.layer_sizes[0])), INFER).macs
    stat = [['Forward / sample (analytic)', forward_macs(arch)],
            ['Forward / sample (counted)', counted],
            [f'Training (s={batch_size}, t={iterations})', training_macs(arch, batch_size, iterations)]]
    print(tabulate.tabulate(stat, ['Cost', 'MACs'], numalign='right', tablefmt='pretty'))


def print_gradcheck(results: list[SuiteResult]):
    stat = [[r.suite, r.checked, f"{r.max_rel_err:.3e}", f"{r.tolerance:.1e}", 'PASS' if r.passed else 'FAIL']
            for r in results]
    print(tabulate.tabulate(stat, ['Suite', 'Checked', 'Max rel. error', 'Tolerance', 'Result'],
                            stralign='center', tablefmt='pretty'))


def central_difference(func: typing.Callable[[np.ndarray], float], x: np.ndarray, indices: typing.Iterable[int],
                       step: float | np.ndarray) -> np.ndarray:
    """Central finite differences of *func* along the flat *indices* of *x* with absolute *step* per index"""
    x = np.array(x, dtype=np.float64)
    indices = list(indices)
    steps = np.broadcast_to(np.asarray(step, dtype=np.float64), (len(indices),))
    grad = np.zeros(len(indices))
    for i, (idx, h) in enumerate(zip(indices, steps)):
        orig = x.flat[idx]
        x.flat[idx] = orig + h
        f_plus = func(x)
        x.flat[idx] = orig - h
        f_minus = func(x)
        x.flat[idx] = orig
        grad[i] = 0.5 * (f_plus - f_minus) / h
    return grad


def check_msecore_gradient(config: SystemConfig, instances: int = 5, seed: int = SEED,
                           tolerance: float = MSECORE_RTOL) -> SuiteResult:
    """
    Compare the analytic sum MSE gradient with central differences of step 1e-6 p_k^tot at random interior points.
    Entries below 1e-6 of the largest gradient count as exact.
    """
    rng = instance_rng(seed, 0, PERTURB_STREAM)
    dataset = generate_dataset(config, instances, seed=seed)
    errors = []
    for lam in dataset:
        p = get_random_allocation(config, rng)
        _, grad = closed_form_gradient(lam, p, config.N, config.noise_power)
        obj = lambda x: closed_form_pi(lam, x, config.N, config.noise_power).sum()
        h = np.repeat(1e-6 * config.p_tot, config.tau)
        numeric = central_difference(obj, p, range(p.size), h)
        errors.append(relative_error(grad.ravel(), numeric, atol=1e-6 * np.abs(grad).max()))
    err = np.concatenate(errors)
    return SuiteResult('msecore', len(err), float(err.max()), tolerance)


def check_network_gradient(config: SystemConfig, arch: NetworkArch = None, instances: int = 5, coords: int = 50,
                           batch_size: int = 8, seed: int = SEED, tolerance: float = NETWORK_RTOL,
                           objective: str = 'sum_mse', floor: float = 1e-6) -> SuiteResult:
    """
    Compare back-propagated gradients of the training objective with central differences over *coords* randomly
    chosen parameters for each of the seeded instances (mini-batches). Entries below *floor* times the largest
    gradient count as exact.
    """
    arch = arch or NetworkArch.for_scenario(config, hidden=(16, 16), log_input=True)
    rng = instance_rng(seed, 1, PERTURB_STREAM)
    errors = []
    for i in range(instances):
        params = init_params(arch, instance_rng(seed, i, INIT_STREAM))
        batch = generate_dataset(config, batch_size, TRAIN_STREAM, start=i * batch_size, seed=seed)
        _, grads, _ = loss_and_grad(params, batch, config, objective=objective)
        names = sorted(grads)
        for _ in range(coords):
            name = names[rng.integers(len(names))]
            idx = int(rng.integers(params.tensors[name].size))

            def loss(x: np.ndarray, _name=name) -> float:
                trial = NetworkParams(arch, {**params.tensors, _name: x})
                p = forward(trial, as_inputs(batch), TRAIN).p
                values = closed_form_pi(batch, p, config.N, config.noise_power).sum(axis=(1, 2))
                return float(values.mean() if objective == 'sum_mse' else np.log(values).mean())

            h = 1e-6 * max(1.0, abs(params.tensors[name].flat[idx]))
            numeric = central_difference(loss, params.tensors[name], [idx], h)[0]
            scale = max(np.abs(g).max() for g in grads.values())
            errors.append(float(relative_error(grads[name].flat[idx], numeric, atol=floor * scale)))
    return SuiteResult('network' if objective == 'sum_mse' else f'network ({objective})', len(errors), max(errors),
                       tolerance)
