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
import json
import pathlib

import matplotlib
import numpy as np
import pandas as pd
import pytest

from alg.dnn import FORMAT_VERSION, MAGIC, NetworkArch
from alg.msecore import sum_mse
from cli.main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERIFY, build_parser, main, scenario_from_args
from mimo.channel import read_dataset
from mimo.common import *
from misc.algs import appa
from misc.plot import draw_cdf_files, draw_training

matplotlib.use('Agg')

SMALL = ['--K', '6', '--M', '2', '--N', '2', '--tau', '2']


def run_test(*argv) -> int:
    argv = [str(arg) for arg in argv]
    print(' '.join(argv).center(80, '#'))
    return main(argv)


def gen_data(tmp_path: pathlib.Path, name: str = 'data.txt', count: int = 10, scenario=SMALL) -> pathlib.Path:
    path = tmp_path / name
    assert run_test('gen-data', *scenario, '--count', count, '--seed', 7, '--out', path) == EXIT_OK
    return path


def test_gen_data(tmp_path):
    first = gen_data(tmp_path, 'a.txt', 20, ['--K', 12, '--M', 4, '--N', 2, '--tau', 4, '--r', 500, '--zeta', 3])
    second = gen_data(tmp_path, 'b.txt', 20, ['--K', 12, '--M', 4, '--N', 2, '--tau', 4, '--r', 500, '--zeta', 3])
    data = read_dataset(first)
    assert data.shape == (20, 12, 4)
    assert len(first.read_text().splitlines()[1].split()) == 48
    assert first.read_bytes() == second.read_bytes()
    manifest = json.loads(pathlib.Path(str(first) + '.manifest.json').read_text())
    assert manifest['command'] == 'gen-data' and manifest['seeds']['scenario'] == 7
    assert manifest['config']['num_users'] == 12 and manifest['version']
    assert str(first) in manifest['outputs'] and all(pathlib.Path(p).exists() for p in manifest['outputs'])


def test_gen_data_errors(tmp_path):
    assert run_test('gen-data', *SMALL, '--count', 0, '--out', tmp_path / 'x.txt') == EXIT_USAGE
    assert run_test('gen-data', '--K', 4, '--tau', 4, '--count', 5, '--out', tmp_path / 'x.txt') == EXIT_USAGE
    assert run_test('gen-data', *SMALL, '--count', 5, '--out', tmp_path / 'missing' / 'x.txt') != EXIT_OK
    with pytest.raises(SystemExit) as e:
        run_test('gen-data', '--count', 'many', '--out', tmp_path / 'x.txt')
    assert e.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as e:
        run_test('frobnicate')
    assert e.value.code == EXIT_USAGE


def test_config_precedence(tmp_path):
    cfg = tmp_path / 'scenario.cfg'
    cfg.write_text("K=6\nM=2\ntau=2\nseed=3\nbatch_size=4\n")
    args = build_parser().parse_args(['gen-data', '--config', str(cfg), '--M', '3', '--count', '1', '--out', 'x'])
    config = scenario_from_args(args)
    assert (config.K, config.M, config.tau, config.rng_seed) == (6, 3, 2, 3)
    assert scenario_from_args(build_parser().parse_args(['gradcheck', '--shadow-var-db', '4'])).shadow_std_db == 2.0
    cfg.write_text("K=6\ntau=2\nbandwidth=20\n")
    assert run_test('gen-data', '--config', cfg, '--count', 1, '--out', tmp_path / 'x.txt') == EXIT_USAGE


def test_train_defaults():
    args = build_parser().parse_args(['train'])
    arch = NetworkArch.for_scenario(scenario_from_args(args), args.hidden, args.log_input)
    assert arch.layer_sizes == (48, 64, 128, 128, 128, 64, 48)
    assert (args.iterations, args.batch, args.checkpoint) == (None, None, 'dnn.ckpt')


def train_small(tmp_path: pathlib.Path, *extra) -> pathlib.Path:
    ckpt = tmp_path / 'dnn.ckpt'
    assert run_test('train', *SMALL, '--iterations', 1, '--batch', 2, '--holdout', 8, '--hidden', '8,8',
                    '--checkpoint', ckpt, *extra) == EXIT_OK
    return ckpt


def test_train(tmp_path):
    ckpt = train_small(tmp_path)
    assert ckpt.exists()
    train_log = pd.read_csv(tmp_path / 'dnn.log.csv')
    assert len(train_log) == 1 and list(train_log.columns) == ['iteration', 'loss', 'holdout_mean', 'holdout_median',
                                                               'elapsed_s']
    draw_training(train_log, save=tmp_path / 'train.png')
    manifest = json.loads((tmp_path / 'dnn.ckpt.manifest.json').read_text())
    assert manifest['extra']['wall_time_s'] > 0 and manifest['extra']['architecture'] == [12, 8, 8, 12]
    assert run_test('train', *SMALL, '--iterations', 1, '--batch', 2,
                    '--checkpoint', tmp_path / 'missing' / 'dnn.ckpt') == EXIT_USAGE
    assert run_test('train', *SMALL, '--batch', 1) == EXIT_USAGE
    train_small(tmp_path, '--iterations', 3, '--objective', 'log', '--lr-final', 1e-5)
    manifest = json.loads((tmp_path / 'dnn.ckpt.manifest.json').read_text())
    assert manifest['extra']['train_config']['objective'] == 'log'
    assert manifest['extra']['train_config']['lr_final'] == 1e-5
    assert run_test('train', *SMALL, '--objective', 'mae') == EXIT_USAGE
    assert run_test('train', *SMALL, '--lr-final', 1.0) == EXIT_USAGE


def test_train_dataset(tmp_path):
    data = gen_data(tmp_path, count=6)
    train_small(tmp_path, '--dataset', data, '--optimizer', 'sgd', '--lr', '0.1')
    assert run_test('train', *SMALL, '--dataset', tmp_path / 'none.txt', '--checkpoint', tmp_path / 'x.ckpt') \
           == EXIT_USAGE


def test_eval(tmp_path):
    data = gen_data(tmp_path)
    ckpt = train_small(tmp_path)
    out = tmp_path / 'report'
    assert run_test('eval', *SMALL, '--seed', 7, '--dataset', data, '--checkpoint', ckpt, '--out-dir', out,
                    '--methods', 'dnn,appa,rpa,espa,contopt', '--contopt-steps', 20) == EXIT_OK
    dataset = read_dataset(data)
    frames = {m: pd.read_csv(out / f'{m}_per_instance.csv') for m in ('dnn', 'appa', 'rpa', 'espa', 'contopt')}
    for method, frame in frames.items():
        assert len(frame) == 10 and {INDEX, SUM_MSE, 'mse_user1', 'mse_user6'} <= set(frame.columns)
        assert np.allclose(frame[[f'mse_user{k}' for k in range(1, 7)]].sum(axis=1), frame[SUM_MSE], rtol=1e-12)
        cdf = pd.read_csv(out / f'{method}_cdf.csv')
        assert len(cdf) == 10 and (np.diff(cdf[SUM_MSE]) >= 0).all()
        assert cdf[QUANTILE].iloc[0] > 0 and cdf[QUANTILE].iloc[-1] == 1.0
    config = scenario_from_args(build_parser().parse_args(['eval', *SMALL, '--dataset', 'x']))
    assert np.allclose(frames['appa'][SUM_MSE], [sum_mse(lam, appa(config), config) for lam in dataset], rtol=1e-12)
    assert (frames['espa'][SUM_MSE] <= frames['rpa'][SUM_MSE] * (1 + 1e-12)).all()
    assert (frames['contopt'][SUM_MSE] <= frames['espa'][SUM_MSE] * (1 + 1e-9)).all()
    assert set(frames['espa'][[f'pilot_user{k}' for k in range(1, 7)]].stack()) <= {1, 2}
    timing = pd.read_csv(out / 'timing.csv')
    assert list(timing[METHOD]) == ['dnn', 'appa', 'rpa', 'espa', 'contopt'] and (timing['count'] == 10).all()
    manifest = json.loads((out / 'manifest.json').read_text())
    assert len(manifest['outputs']) == 2 * 5 + 2 and all(pathlib.Path(p).exists() for p in manifest['outputs'])
    draw_cdf_files(out, save=tmp_path / 'cdf.png', title='Sum MSE')
    assert (tmp_path / 'cdf.png').stat().st_size > 0


def test_eval_reproducible(tmp_path):
    data = gen_data(tmp_path)
    for out in ('a', 'b'):
        assert run_test('eval', *SMALL, '--dataset', data, '--methods', 'appa,rpa,espa', '--espa-limit', 4,
                        '--out-dir', tmp_path / out) == EXIT_OK
    for name in ('appa_per_instance.csv', 'rpa_per_instance.csv', 'espa_per_instance.csv', 'espa_cdf.csv'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()
    assert len(pd.read_csv(tmp_path / 'a' / 'espa_cdf.csv')) == 4


def test_eval_errors(tmp_path):
    data = gen_data(tmp_path)
    empty = tmp_path / 'empty.txt'
    empty.write_text("6 2\n")
    assert run_test('eval', *SMALL, '--dataset', empty, '--methods', 'appa', '--out-dir', tmp_path) == EXIT_USAGE
    assert run_test('eval', *SMALL, '--dataset', data, '--methods', 'dnn', '--checkpoint', tmp_path / 'none.ckpt',
                    '--out-dir', tmp_path) == EXIT_USAGE
    assert run_test('eval', *SMALL, '--dataset', data, '--methods', 'greedy', '--out-dir', tmp_path) == EXIT_USAGE
    assert run_test('eval', *SMALL, '--dataset', data, '--methods', 'espa', '--espa-budget', 10,
                    '--out-dir', tmp_path) == EXIT_RUNTIME
    assert run_test('eval', '--K', 8, '--M', 2, '--tau', 2, '--dataset', data, '--methods', 'appa',
                    '--out-dir', tmp_path) == EXIT_RUNTIME
    broken = tmp_path / 'broken.ckpt'
    broken.write_bytes(MAGIC + json.dumps(dict(version=FORMAT_VERSION)).encode() + b'\n')
    assert run_test('eval', *SMALL, '--dataset', data, '--methods', 'dnn', '--checkpoint', broken,
                    '--out-dir', tmp_path) == EXIT_RUNTIME


def test_gradcheck(capsys):
    assert run_test('gradcheck', '--K', 3, '--M', 2, '--N', 2, '--tau', 2) == EXIT_OK
    report = capsys.readouterr().out
    assert 'msecore' in report and 'network' in report and 'PASS' in report
    assert run_test('gradcheck', '--K', 3, '--M', 2, '--tau', 2, '--tolerance-msecore', '1e-12',
                    '--instances', 1, '--coords', 5) == EXIT_VERIFY
    assert 'FAIL' in capsys.readouterr().out


if __name__ == '__main__':
    pytest.main([__file__, '-s'])
