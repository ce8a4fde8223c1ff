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
import json
import pathlib
import typing

import numpy as np

from alg.util import grouped_softmax, softmax_backward
from mimo.common import *
from mimo.config import SystemConfig

FORMAT_VERSION = 1
MAGIC = b'PPDNN'
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
TRAIN, INFER = 'train', 'infer'


@dataclasses.dataclass(frozen=True)
class NetworkArch:
    """Layer sizes n_0..n_L of the fully connected network and the scenario its output layer is bound to"""
    layer_sizes: tuple[int, ...]
    num_users: int
    num_raus: int
    num_pilots: int
    pilot_power: tuple[float, ...]
    log_input: bool = False  # feed log10(lambda) instead of raw lambda

    def __post_init__(self):
        object.__setattr__(self, 'layer_sizes', tuple(int(n) for n in self.layer_sizes))
        object.__setattr__(self, 'pilot_power', tuple(float(p) for p in self.pilot_power))
        if len(self.layer_sizes) < 3 or min(self.layer_sizes) < 1:
            raise ConfigError(f"At least one hidden layer of positive sizes is required, got {self.layer_sizes}")
        if self.layer_sizes[0] != self.num_users * self.num_raus:
            raise ConfigError(f"Input size {self.layer_sizes[0]} must equal K*M={self.num_users * self.num_raus}")
        if self.layer_sizes[-1] != self.num_users * self.num_pilots:
            raise ConfigError(f"Output size {self.layer_sizes[-1]} must equal K*tau={self.num_users * self.num_pilots}")
        if len(self.pilot_power) != self.num_users:
            raise ConfigError(f"Expected {self.num_users} pilot powers, got {len(self.pilot_power)}")

    @classmethod
    def for_scenario(cls, config: SystemConfig, hidden: typing.Sequence[int] = HIDDEN_LAYERS,
                     log_input: bool = False) -> 'NetworkArch':
        return cls((config.K * config.M, *hidden, config.K * config.tau), config.K, config.M, config.tau,
                   config.pilot_power_total, log_input)

    @property
    def L(self) -> int:
        """Index of the output layer"""
        return len(self.layer_sizes) - 1

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        """Declared order and shapes of all stored arrays, the frozen b1 is not stored"""
        n, shapes = self.layer_sizes, {}
        for l in range(1, self.L):
            shapes[f'W{l}'] = (n[l], n[l - 1])
            if l > 1:
                shapes[f'b{l}'] = (n[l],)
            shapes.update({f'gamma{l}': (n[l],), f'beta{l}': (n[l],), f'mean{l}': (n[l],), f'var{l}': (n[l],)})
        shapes[f'W{self.L}'] = (n[self.L], n[self.L - 1])
        shapes[f'b{self.L}'] = (n[self.L],)
        return shapes

    def trainable(self) -> list[str]:
        return [name for name in self.tensor_shapes() if not name.startswith(('mean', 'var'))]


@dataclasses.dataclass
class NetworkParams:
    """All weights, biases, BN affine parameters and BN running statistics"""
    arch: NetworkArch
    tensors: dict[str, np.ndarray]

    def bias(self, l: int) -> np.ndarray:
        """Bias of layer l, identically zero for the first hidden layer"""
        return np.zeros(self.arch.layer_sizes[l]) if l == 1 else self.tensors[f'b{l}']

    def copy(self) -> 'NetworkParams':
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})


class ForwardTrace(typing.NamedTuple):
    """Intermediate values of a forward pass required by the backward pass"""
    mode: str
    inputs: list[np.ndarray]  # o_{l-1} feeding layer l, o_0 is the (transformed) input
    xhat: list[np.ndarray]  # BN-normalized pre-activations
    inv_std: list[np.ndarray]  # 1 / sqrt(var + eps) per hidden layer
    pre_relu: list[np.ndarray]  # gamma * xhat + beta
    batch_mean: list[np.ndarray]
    batch_var: list[np.ndarray]
    logits: np.ndarray  # s x K x tau
    softmax: np.ndarray  # s x K x tau
    p: np.ndarray  # s x K x tau allocations
    macs: int  # counted multiply-accumulates of the matrix products


def init_params(arch: NetworkArch, rng: np.random.Generator) -> NetworkParams:
    """He-initialized weights, zero biases, gamma=1, beta=0 and running statistics (0, 1)"""
    tensors = {}
    for name, shape in arch.tensor_shapes().items():
        if name.startswith('W'):
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / shape[1]), size=shape)
        elif name.startswith(('gamma', 'var')):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return NetworkParams(arch, tensors)


def forward_macs(arch: NetworkArch) -> int:
    """Multiply-accumulates per sample: KM n_1 + K tau n_{L-1} + sum_{l=2}^{L-1} n_{l-1} n_l"""
    n = arch.layer_sizes
    return sum(n[l - 1] * n[l] for l in range(1, arch.L + 1))


def training_macs(arch: NetworkArch, batch_size: int, iterations: int) -> int:
    """Forward and backward multiply-accumulates of a whole training run"""
    return 2 * forward_macs(arch) * batch_size * iterations


def _matmul(a: np.ndarray, b: np.ndarray, counter: list[int]) -> np.ndarray:
    counter[0] += a.shape[0] * a.shape[1] * b.shape[1]
    return a @ b


def forward(params: NetworkParams, batch: np.ndarray, mode: str = INFER) -> ForwardTrace:
    """
    Map s x KM fading rows q = [lambda_11..lambda_1M, ..., lambda_K1..lambda_KM] to s x K x tau allocations.
    Hidden layers compute ReLU(BN(W_l o_{l-1} + b_l)) without bias in layer 1, BN uses batch statistics in train mode
    and running statistics in infer mode. The output groups the logits per user, applies softmax and scales by p_k^tot.
    The pass does not modify *params*.
    """
    arch = params.arch
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != arch.layer_sizes[0]:
        raise DimensionError(f"Input batch of shape {batch.shape} does not match n_0={arch.layer_sizes[0]}")
    if mode not in (TRAIN, INFER):
        raise ConfigError(f"Unknown mode: {mode}")
    if mode == TRAIN and batch.shape[0] < 2:
        raise ConfigError("Train mode needs a batch of at least 2 samples for batch statistics")
    counter = [0]
    o = np.log10(batch) if arch.log_input else batch
    inputs, xhat, inv_std, pre_relu, means, variances = [], [], [], [], [], []
    T = params.tensors
    for l in range(1, arch.L):
        inputs.append(o)
        z = _matmul(o, T[f'W{l}'].T, counter) + params.bias(l)
        if mode == TRAIN:
            mu, var = z.mean(axis=0), z.var(axis=0)
        else:
            mu, var = T[f'mean{l}'], T[f'var{l}']
        istd = 1.0 / np.sqrt(var + BN_EPS)
        xh = (z - mu) * istd
        y = T[f'gamma{l}'] * xh + T[f'beta{l}']
        o = np.maximum(y, 0.0)
        for store, value in ((xhat, xh), (inv_std, istd), (pre_relu, y), (means, mu), (variances, var)):
            store.append(value)
    inputs.append(o)
    t = _matmul(o, params.tensors[f'W{arch.L}'].T, counter) + params.tensors[f'b{arch.L}']
    t = t.reshape(len(batch), arch.num_users, arch.num_pilots)
    s = grouped_softmax(t)
    p = np.array(arch.pilot_power)[:, None] * s
    return ForwardTrace(mode, inputs, xhat, inv_std, pre_relu, means, variances, t, s, p, counter[0])


def update_running_stats(params: NetworkParams, trace: ForwardTrace, momentum: float = BN_MOMENTUM):
    """Exponential moving average of the BN batch statistics of a train-mode trace"""
    s = len(trace.p)
    for l, (mu, var) in enumerate(zip(trace.batch_mean, trace.batch_var), start=1):
        params.tensors[f'mean{l}'] = momentum * params.tensors[f'mean{l}'] + (1 - momentum) * mu
        # Unbiased batch variance for the inference statistics
        params.tensors[f'var{l}'] = momentum * params.tensors[f'var{l}'] + (1 - momentum) * var * s / (s - 1)


def backward(params: NetworkParams, trace: ForwardTrace, dP: np.ndarray) -> dict[str, np.ndarray]:
    """
    Back-propagate dLoss/dP through the scaled grouped softmax, the output layer, ReLU masks and batch normalization
    including its batch-statistics terms.

    :param params:  parameters used by the forward pass
    :param trace:   train-mode forward trace
    :param dP:      s x K*tau (or s x K x tau) gradient of the loss with respect to the allocations
    :return:        gradients of every trainable tensor keyed by name (no b1)
    """
    if trace.mode != TRAIN:
        raise ConfigError("Backward pass requires a train-mode forward trace")
    arch, T = params.arch, params.tensors
    s = len(trace.p)
    dP = np.asarray(dP, dtype=np.float64).reshape(trace.p.shape)
    dt = softmax_backward(trace.softmax, np.array(arch.pilot_power)[:, None] * dP).reshape(s, -1)
    grads = {f'W{arch.L}': dt.T @ trace.inputs[-1], f'b{arch.L}': dt.sum(axis=0)}
    do = dt @ T[f'W{arch.L}']
    for l in reversed(range(1, arch.L)):
        i = l - 1
        dy = do * (trace.pre_relu[i] > 0)
        xh = trace.xhat[i]
        grads[f'gamma{l}'] = (dy * xh).sum(axis=0)
        grads[f'beta{l}'] = dy.sum(axis=0)
        dxh = dy * T[f'gamma{l}']
        dz = trace.inv_std[i] / s * (s * dxh - dxh.sum(axis=0) - xh * (dxh * xh).sum(axis=0))
        grads[f'W{l}'] = dz.T @ trace.inputs[i]
        if l > 1:
            grads[f'b{l}'] = dz.sum(axis=0)
        do = dz @ T[f'W{l}']
    return grads


def save_params(params: NetworkParams, path: str | pathlib.Path):
    """Write a self-describing header line followed by the arrays as little-endian float64 in declared order"""
    arch = params.arch
    shapes = arch.tensor_shapes()
    header = dict(version=FORMAT_VERSION, layer_sizes=list(arch.layer_sizes), K=arch.num_users, M=arch.num_raus,
                  tau=arch.num_pilots, p_tot=list(arch.pilot_power), log_input=arch.log_input,
                  arrays=[[name, list(shape)] for name, shape in shapes.items()])
    with open(path, 'wb') as f:
        f.write(MAGIC + json.dumps(header).encode() + b'\n')
        for name, shape in shapes.items():
            f.write(np.ascontiguousarray(params.tensors[name], dtype='<f8').tobytes())


def load_params(path: str | pathlib.Path, expected: NetworkArch = None) -> NetworkParams:
    """Read a checkpoint written by save_params, optionally verifying it against the *expected* architecture"""
    with open(path, 'rb') as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a network checkpoint")
        try:
            header = json.loads(f.readline())
        except ValueError:
            raise CheckpointError(f"{path}: corrupted checkpoint header") from None
        if not isinstance(header, dict):
            raise CheckpointError(f"{path}: checkpoint header is not a JSON object")
        if header.get('version') != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {header.get('version')}, "
                                  f"expected {FORMAT_VERSION}")
        try:
            arch = NetworkArch(tuple(header['layer_sizes']), header['K'], header['M'], header['tau'],
                               tuple(header['p_tot']), header['log_input'])
            declared = header['arrays']
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{path}: invalid architecture in header: {e!r}") from None
        if expected is not None and expected != arch:
            raise CheckpointError(f"{path}: checkpoint architecture {arch.layer_sizes} (K={arch.num_users}, "
                                  f"M={arch.num_raus}, tau={arch.num_pilots}) does not match the expected "
                                  f"{expected.layer_sizes} (K={expected.num_users}, M={expected.num_raus}, "
                                  f"tau={expected.num_pilots})")
        shapes = arch.tensor_shapes()
        if [[name, list(shape)] for name, shape in shapes.items()] != declared:
            raise CheckpointError(f"{path}: declared arrays do not match the architecture")
        tensors = {}
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            raw = f.read(8 * size)
            if len(raw) != 8 * size:
                raise CheckpointError(f"{path}: truncated checkpoint while reading {name}")
            tensors[name] = np.frombuffer(raw, dtype='<f8').astype(np.float64).reshape(shape)
        if f.read(1):
            raise CheckpointError(f"{path}: trailing data after the declared arrays")
    return NetworkParams(arch, tensors)
