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
import logging
import math
import pathlib
import time
import typing

import numpy as np
import pandas as pd

from alg.dnn import INFER, TRAIN, NetworkArch, NetworkParams, backward, forward, init_params, save_params
from alg.dnn import update_running_stats
from alg.msecore import MseReport, check_fading, closed_form_gradient, closed_form_pi
from mimo.channel import generate_dataset, instance_rng, read_dataset
from mimo.common import *
from mimo.config import SystemConfig, parse_key_values

log = logging.getLogger(__name__)

# Multiplier of the loss for optimizer conditioning, the sum MSE itself is ~1e-8..1e-6
LOSS_SCALE = 1e8
# CDF table resolution of evaluation summaries
CDF_POINTS = 101
# Training objectives: mean sum MSE of the batch or the mean of the per-instance log sum MSE
OBJECTIVES = ('sum_mse', 'log')


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of the unsupervised training loop"""
    batch_size: int = 1000
    iterations: int = 1000
    optimizer: str = 'adam'
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dataset_path: str = None  # fixed dataset, draw fresh batches on the fly if None
    seed: int = SEED
    eval_every: int = 10
    holdout_size: int = 2000
    checkpoint_path: str = None
    loss_scale: float = LOSS_SCALE
    objective: str = 'sum_mse'
    lr_final: float = None  # cosine decay of the learning rate down to lr_final if set

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"Batch size must be at least 2 for batch normalization, got {self.batch_size}")
        for name in ('iterations', 'eval_every', 'holdout_size'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"Unknown optimizer {self.optimizer!r}, choose from {sorted(OPTIMIZERS)}")
        if not self.learning_rate >= 0 or not self.loss_scale > 0:
            raise ConfigError("Learning rate must be nonnegative and loss scale positive")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"Unknown objective {self.objective!r}, choose from {list(OBJECTIVES)}")
        if self.lr_final is not None and not 0 <= self.lr_final <= self.learning_rate:
            raise ConfigError(f"Final learning rate must be in [0, {self.learning_rate}], got {self.lr_final}")

    def learning_rate_at(self, it: int) -> float:
        """Learning rate of the 1-based iteration *it*"""
        if self.lr_final is None or self.iterations == 1:
            return self.learning_rate
        decay = 0.5 * (1 + math.cos(math.pi * (it - 1) / (self.iterations - 1)))
        return self.lr_final + (self.learning_rate - self.lr_final) * decay

    @classmethod
    def from_file(cls, path: str | pathlib.Path, **overrides) -> 'TrainConfig':
        """Read the fields of TrainConfig from a key=value file, unknown keys are left to the scenario"""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for key, value in parse_key_values(path).items():
            if key in fields:
                try:
                    values[key] = fields[key].type(value)
                except ValueError:
                    raise ConfigError(f"Invalid value for {key!r}: {value!r}") from None
        return cls(**{**values, **overrides})


class SGD:
    """Plain gradient descent"""

    def __init__(self, cfg: TrainConfig):
        self.lr = cfg.learning_rate

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            tensors[name] = tensors[name] - self.lr * g


class Adam:
    """Adam with bias-corrected first and second moment estimates"""

    def __init__(self, cfg: TrainConfig):
        self.lr, self.beta1, self.beta2, self.eps = cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m.get(name, 0.0) + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v.get(name, 0.0) + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            tensors[name] = tensors[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


OPTIMIZERS = dict(sgd=SGD, adam=Adam)


class LogEntry(typing.NamedTuple):
    iteration: int
    loss: float  # mean sum MSE of the mini-batch
    holdout_mean: float  # mean sum MSE of the held-out set in infer mode
    holdout_median: float
    elapsed_s: float


class TrainLog(list):
    """Logged training steps"""
    loss_scale: float = 1.0
    diverged: bool = False

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self, columns=LogEntry._fields)

    def write_csv(self, path: str | pathlib.Path):
        self.to_frame().to_csv(path, index=False, float_format='%.17g')


def check_outputs(p: np.ndarray, arch: NetworkArch):
    """Assert the power constraint and strict positivity of emitted allocations"""
    p_tot = np.array(arch.pilot_power)
    if not ((p > 0).all() and (np.abs(p.sum(axis=-1) - p_tot) <= POWER_RTOL * p_tot).all()):
        raise DivergenceError("Network emitted an allocation violating the power constraint")


def as_inputs(instances: np.ndarray) -> np.ndarray:
    """Flatten (s, K, M) instances to the k-major s x KM input rows"""
    return instances.reshape(len(instances), -1)


def loss_and_grad(params: NetworkParams, batch: np.ndarray, config: SystemConfig, loss_scale: float = 1.0,
                  objective: str = 'sum_mse') -> tuple[float, dict[str, np.ndarray], typing.Any]:
    """
    Mean sum MSE of the network allocations over the mini-batch and the gradient of the training objective with
    respect to every trainable parameter. The 'sum_mse' objective is the mean sum MSE itself, while 'log' averages
    the per-instance log sum MSE, weighting every instance by the inverse of its own sum MSE.

    :param params:      network parameters
    :param batch:       (s, K, M) large-scale fading instances, s >= 2
    :param config:      scenario parameters
    :param loss_scale:  multiplier of the sum_mse gradients, the log objective is scale-free
    :param objective:   training objective, one of OBJECTIVES
    :return:            mean sum MSE, gradients of the (scaled) objective, and the train-mode trace
    """
    if objective not in OBJECTIVES:
        raise ConfigError(f"Unknown objective {objective!r}, choose from {list(OBJECTIVES)}")
    batch = check_fading(batch, config)
    if len(batch) < 2:
        raise ConfigError(f"Loss needs a batch of at least 2 instances, got {len(batch)}")
    trace = forward(params, as_inputs(batch), TRAIN)
    check_outputs(trace.p, params.arch)
    values, dP = closed_form_gradient(batch, trace.p, config.N, config.noise_power)
    loss = float(values.mean())
    if not np.isfinite(loss) or not (values > 0).all():
        raise DivergenceError(f"Non-finite or degenerate loss {loss}")
    if objective == 'log':
        dP, loss_scale = dP / values[:, None, None], 1.0
    grads = backward(params, trace, dP * (loss_scale / len(batch)))
    return loss, grads, trace


def infer(params: NetworkParams, instances: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Infer-mode allocations of (S, K, M) instances"""
    return np.concatenate([forward(params, as_inputs(instances[i:i + chunk]), INFER).p
                           for i in range(0, len(instances), chunk)]) if len(instances) else \
        np.empty((0, params.arch.num_users, params.arch.num_pilots))


def holdout_values(params: NetworkParams, holdout: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Per-instance sum MSE of the infer-mode allocations"""
    return closed_form_pi(holdout, infer(params, holdout), config.N, config.noise_power).sum(axis=(1, 2))


def holdout_score(values: np.ndarray, objective: str) -> float:
    """Model selection score matching the objective: arithmetic or geometric mean of the sum MSE values"""
    return float(values.mean() if objective == 'sum_mse' else np.exp(np.log(values).mean()))


def train(arch: NetworkArch, cfg: TrainConfig, config: SystemConfig,
          params: NetworkParams = None) -> tuple[NetworkParams, TrainLog]:
    """
    Unsupervised training of the network with the sum MSE of the mini-batch as loss, averaged directly or in the log
    domain depending on the objective. Every *eval_every* iterations (and at the last one) the held-out sum MSE
    statistics are logged and the parameters with the best held-out score of the objective are kept.

    :param arch:    network architecture matching the scenario
    :param cfg:     training hyper-parameters
    :param config:  scenario parameters
    :param params:  optional initial parameters (initialized from the seed if None)
    :return:        parameters with the best held-out score and the training log
    """
    if (arch.num_users, arch.num_raus, arch.num_pilots) != (config.K, config.M, config.tau):
        raise DimensionError(f"Network built for K={arch.num_users}, M={arch.num_raus}, tau={arch.num_pilots} "
                             f"cannot serve K={config.K}, M={config.M}, tau={config.tau}")
    if cfg.checkpoint_path and not pathlib.Path(cfg.checkpoint_path).resolve().parent.is_dir():
        raise ConfigError(f"Checkpoint directory of {cfg.checkpoint_path} does not exist")
    params = params.copy() if params is not None else init_params(arch, instance_rng(cfg.seed, 0, INIT_STREAM))
    optimizer = OPTIMIZERS[cfg.optimizer](cfg)
    dataset = read_dataset(cfg.dataset_path) if cfg.dataset_path else None
    if dataset is not None:
        check_fading(dataset, config)
        if len(dataset) < 2:
            raise ConfigError(f"Training dataset needs at least 2 instances, got {len(dataset)}")
    holdout = generate_dataset(config, cfg.holdout_size, HOLDOUT_STREAM, seed=cfg.seed)
    sampler = instance_rng(cfg.seed, 0, TRAIN_STREAM)
    train_log = TrainLog()
    train_log.loss_scale = cfg.loss_scale
    best, best_score = params.copy(), np.inf
    t_start = time.perf_counter()
    for it in range(1, cfg.iterations + 1):
        if dataset is None:
            batch = generate_dataset(config, cfg.batch_size, TRAIN_STREAM, start=(it - 1) * cfg.batch_size,
                                     seed=cfg.seed)
        elif cfg.batch_size >= len(dataset):
            batch = dataset
        else:
            batch = dataset[sampler.choice(len(dataset), cfg.batch_size, replace=False)]
        try:
            loss, grads, trace = loss_and_grad(params, batch, config, cfg.loss_scale, cfg.objective)
        except (DivergenceError, NonDifferentiableError) as e:
            log.error(f"Training diverged at iteration {it}: {e}")
            train_log.diverged = True
            if cfg.checkpoint_path:
                save_params(best, cfg.checkpoint_path)
            raise DivergenceError(f"Training diverged at iteration {it}: {e}", params=best, log=train_log) from e
        update_running_stats(params, trace)
        optimizer.lr = cfg.learning_rate_at(it)
        optimizer.step(params.tensors, grads)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            values = holdout_values(params, holdout, config)
            score = holdout_score(values, cfg.objective)
            train_log.append(LogEntry(it, loss, float(values.mean()), float(np.median(values)),
                                      time.perf_counter() - t_start))
            log.info(f"iter {it:5d}: loss={loss:.6e}, holdout mean={values.mean():.6e}, "
                     f"median={np.median(values):.6e}, lr={optimizer.lr:.2e}")
            if np.isfinite(score) and score < best_score:
                best, best_score = params.copy(), score
                if cfg.checkpoint_path:
                    save_params(best, cfg.checkpoint_path)
    return best, train_log


def cdf_table(values: np.ndarray) -> pd.DataFrame:
    """Sorted values with their empirical quantiles i/n, i=1..n"""
    values = np.sort(np.asarray(values, dtype=np.float64))
    return pd.DataFrame({SUM_MSE: values, QUANTILE: np.arange(1, len(values) + 1) / len(values)})


def summarize(values: np.ndarray) -> dict:
    """Mean, median and a CDF grid of per-instance sum MSE values"""
    values = np.asarray(values, dtype=np.float64)
    grid = np.linspace(0.0, 1.0, CDF_POINTS)
    return dict(count=len(values), mean=float(values.mean()), median=float(np.median(values)),
                cdf=pd.DataFrame({QUANTILE: grid, SUM_MSE: np.quantile(values, grid)}))


def evaluate(params: NetworkParams, dataset: np.ndarray, config: SystemConfig) -> tuple[list[MseReport], dict]:
    """
    Infer-mode allocations of every instance with their per-link reports and summary statistics.

    :param params:  trained network
    :param dataset: (S, K, M) instances of the scenario
    :param config:  scenario parameters
    :return:        list of reports and the summary (mean, median, CDF grid)
    """
    dataset = check_fading(dataset, config)
    if dataset.ndim != 3 or not len(dataset):
        raise DimensionError("Evaluation needs a nonempty (S, K, M) dataset")
    reports = []
    for lam in dataset:
        t_start = time.perf_counter()
        p = forward(params, as_inputs(lam[None]), INFER).p[0]
        check_outputs(p, params.arch)
        pi = closed_form_pi(lam, p, config.N, config.noise_power)
        reports.append(MseReport(pi, float(pi.sum()), 'dnn', time.perf_counter() - t_start))
    return reports, summarize([r.sum_mse for r in reports])
