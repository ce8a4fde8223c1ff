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
import pytest

from alg.dnn import TRAIN, NetworkArch, forward, init_params, load_params
from alg.msecore import sum_mse
from alg.trainer import TrainConfig, as_inputs, cdf_table, evaluate, infer, loss_and_grad, summarize, train
from mimo.channel import generate_dataset, instance_rng, write_dataset
from mimo.common import *
from misc.generator import get_random_config


def run_test(config, hidden=(16, 16), **kwargs):
    arch = NetworkArch.for_scenario(config, hidden)
    cfg = TrainConfig(**{**dict(batch_size=16, iterations=20, holdout_size=32, eval_every=5), **kwargs})
    params, train_log = train(arch, cfg, config)
    print(train_log.to_frame())
    return params, train_log


def test_train_config(tmp_path):
    assert TrainConfig().batch_size == 1000 and TrainConfig().iterations == 1000
    for kwargs in (dict(batch_size=1), dict(iterations=0), dict(optimizer='rmsprop'), dict(learning_rate=-1.0)):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)
    path = tmp_path / 'train.cfg'
    path.write_text("batch_size=32\nlearning_rate=1e-2\nK=6\n")
    cfg = TrainConfig.from_file(path, iterations=3)
    assert (cfg.batch_size, cfg.learning_rate, cfg.iterations) == (32, 1e-2, 3)
    path.write_text("batch_size=many\n")
    with pytest.raises(ConfigError):
        TrainConfig.from_file(path)


def test_loss_and_grad():
    config = get_random_config(K=4, M=2, tau=2)
    arch = NetworkArch.for_scenario(config, (8, 8))
    params = init_params(arch, instance_rng(0))
    batch = generate_dataset(config, 10)
    loss, grads, trace = loss_and_grad(params, batch, config)
    p = forward(params, as_inputs(batch), TRAIN).p
    assert loss == pytest.approx(np.mean([sum_mse(lam, alloc, config) for lam, alloc in zip(batch, p)]), rel=1e-12)
    _, scaled, _ = loss_and_grad(params, batch, config, loss_scale=1e8)
    assert all(np.allclose(scaled[name], 1e8 * grads[name]) for name in grads)
    # Identical instances: every row of the batch gets the same allocation and the loss is their common sum MSE
    same = np.repeat(batch[:1], 4, axis=0)
    loss, _, trace = loss_and_grad(params, same, config)
    assert np.allclose(trace.p, trace.p[0])
    assert loss == pytest.approx(sum_mse(same[0], trace.p[0], config), rel=1e-12)
    with pytest.raises(ConfigError):
        loss_and_grad(params, batch[:1], config)
    with pytest.raises(DimensionError):
        loss_and_grad(params, generate_dataset(get_random_config(K=4, M=3, tau=2), 4), config)


def test_train_smoke():
    config = get_random_config(K=4, M=2, tau=2)
    params, train_log = run_test(config, batch_size=2, iterations=1)
    assert len(train_log) == 1 and train_log[0].iteration == 1
    assert np.isfinite(train_log[0].loss) and np.isfinite(train_log[0].holdout_mean)


def test_train_determinism():
    config = get_random_config(K=4, M=2, tau=2)
    params, train_log = run_test(config)
    again, again_log = run_test(config)
    assert train_log.to_frame().drop(columns='elapsed_s').equals(again_log.to_frame().drop(columns='elapsed_s'))
    assert all(np.array_equal(params.tensors[k], again.tensors[k]) for k in params.tensors)
    assert [e.iteration for e in train_log] == [5, 10, 15, 20]


def test_train_zero_learning_rate(tmp_path):
    config = get_random_config(K=4, M=2, tau=2)
    path = tmp_path / 'train.txt'
    write_dataset(path, generate_dataset(config, 12, TRAIN_STREAM))
    _, train_log = run_test(config, learning_rate=0.0, optimizer='sgd', dataset_path=str(path), eval_every=1,
                            iterations=5)
    losses = [e.loss for e in train_log]
    assert np.allclose(losses, losses[0], rtol=1e-12)


def test_train_improves():
    config = get_random_config(K=6, M=4, tau=2)
    arch = NetworkArch.for_scenario(config, (32, 32), log_input=True)
    cfg = TrainConfig(batch_size=64, iterations=150, holdout_size=200, eval_every=10, learning_rate=1e-2)
    params, train_log = train(arch, cfg, config)
    holdout = [e.holdout_mean for e in train_log]
    assert min(holdout) < holdout[0]


def test_learning_rate_schedule():
    cfg = TrainConfig(iterations=101, learning_rate=1e-2, lr_final=1e-4)
    assert cfg.learning_rate_at(1) == pytest.approx(1e-2)
    assert cfg.learning_rate_at(51) == pytest.approx(0.5 * (1e-2 + 1e-4))
    assert cfg.learning_rate_at(101) == pytest.approx(1e-4)
    rates = [cfg.learning_rate_at(it) for it in range(1, 102)]
    assert (np.diff(rates) <= 0).all()
    assert TrainConfig(learning_rate=1e-2).learning_rate_at(50) == 1e-2
    for kwargs in (dict(objective='mae'), dict(lr_final=1.0), dict(lr_final=-1e-5)):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)


def test_log_objective():
    config = get_random_config(K=4, M=2, tau=2)
    arch = NetworkArch.for_scenario(config, (8, 8))
    params = init_params(arch, instance_rng(0))
    # Identical instances share one sum MSE value v, the log objective rescales the gradients by 1 / v
    same = np.repeat(generate_dataset(config, 1), 4, axis=0)
    loss, grads, _ = loss_and_grad(params, same, config)
    log_loss, log_grads, _ = loss_and_grad(params, same, config, objective='log')
    assert log_loss == loss
    assert all(np.allclose(log_grads[name], grads[name] / loss, rtol=1e-9, atol=0.0) for name in grads)
    _, scaled, _ = loss_and_grad(params, same, config, loss_scale=1e8, objective='log')
    assert all(np.array_equal(scaled[name], log_grads[name]) for name in grads)
    with pytest.raises(ConfigError):
        loss_and_grad(params, same, config, objective='mae')


def test_train_loss_trend(tmp_path):
    config = get_random_config(K=4, M=2, tau=2)
    path = tmp_path / 'train.txt'
    write_dataset(path, generate_dataset(config, 64, TRAIN_STREAM))
    arch = NetworkArch.for_scenario(config, (16, 16), log_input=True)
    cfg = TrainConfig(batch_size=64, iterations=100, holdout_size=32, eval_every=1, learning_rate=1e-2,
                      dataset_path=str(path))
    _, train_log = train(arch, cfg, config)
    losses = train_log.to_frame()['loss']
    assert len(losses) == 100
    assert losses[50:].median() <= losses[:50].median()


def test_train_checkpoint(tmp_path):
    config = get_random_config(K=4, M=2, tau=2)
    path = tmp_path / 'model.ckpt'
    params, train_log = run_test(config, checkpoint_path=str(path))
    loaded = load_params(path)
    assert all(np.array_equal(loaded.tensors[k], params.tensors[k]) for k in params.tensors)
    with pytest.raises(ConfigError):
        run_test(config, checkpoint_path=str(tmp_path / 'missing' / 'model.ckpt'))
    with pytest.raises(DimensionError):
        train(NetworkArch.for_scenario(config, (8,)), TrainConfig(), config.replace(num_raus=3))


def test_evaluate():
    config = get_random_config(K=4, M=2, tau=2)
    params, _ = run_test(config, iterations=5)
    dataset = generate_dataset(config, 40, HOLDOUT_STREAM, start=1000)
    reports, summary = evaluate(params, dataset, config)
    assert len(reports) == 40 and summary['count'] == 40
    p = infer(params, dataset)
    assert np.allclose([r.sum_mse for r in reports], [sum_mse(lam, a, config) for lam, a in zip(dataset, p)],
                       rtol=1e-10)
    assert summary['median'] == pytest.approx(np.median([r.sum_mse for r in reports]))
    with pytest.raises(DimensionError):
        evaluate(params, dataset[:0], config)


def test_cdf_table():
    values = instance_rng(0).exponential(size=50)
    cdf = cdf_table(values)
    assert len(cdf) == 50
    assert (np.diff(cdf[SUM_MSE]) >= 0).all()
    assert cdf[QUANTILE].iloc[0] == pytest.approx(1 / 50) and cdf[QUANTILE].iloc[-1] == 1.0
    summary = summarize(values)
    assert summary['cdf'][SUM_MSE].is_monotonic_increasing


if __name__ == '__main__':
    test_loss_and_grad()
    test_train_smoke()
    test_train_determinism()
    test_evaluate()
