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
import argparse
import dataclasses
import logging
import pathlib
import sys
import time

import numpy as np

from alg.contopt import STEPS, continuous_opt
from alg.dnn import NetworkArch, load_params, save_params
from alg.espa import espa
from alg.msecore import check_fading, per_link_mse
from alg.trainer import OBJECTIVES, TrainConfig, evaluate, train
from alg.util import assignment_logits, assignment_to_allocation, grouped_softmax, num_assignments
from cli.report import MANIFEST_SUFFIX, RunManifest, summary_frame, timing_frame, write_method_reports
from mimo.channel import generate_dataset, instance_rng, read_dataset, write_dataset
from mimo.common import *
from mimo.config import SystemConfig, config_from_mapping, parse_key_values
from misc.algs import appa, rpa
from misc.util import (MSECORE_RTOL, NETWORK_RTOL, check_msecore_gradient, check_network_gradient, print_complexity,
                       print_frame, print_gradcheck)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
METHODS = ('dnn', 'appa', 'rpa', 'espa', 'contopt')
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
HANDLER_NAME = 'pilot-cli'
# Scenario flags forwarded to the config loader under their alias names
SCENARIO_FLAGS = ('K', 'M', 'N', 'tau', 'r', 'zeta', 'shadow_std_db', 'shadow_var_db', 'p_tot', 'noise', 'dmin',
                  'seed')
# Keys of a shared config file consumed by the training loop, the seed stays a scenario key
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {'seed'}


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser reporting usage errors with exit status 1"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def setup_logging(verbosity: int = 0):
    """Install the console handler, DEBUG if verbosity > 0, WARNING if verbosity < 0 and INFO otherwise"""
    level = logging.DEBUG if verbosity > 0 else logging.WARNING if verbosity < 0 else logging.INFO
    root = logging.getLogger()
    for handler in [h for h in root.handlers if h.get_name() == HANDLER_NAME]:
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.set_name(HANDLER_NAME)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)


def _int_list(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in value.replace(',', ' ').split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from None


def _count(value: str) -> int:
    """Integer flag accepting the 2e7 notation"""
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid count: {value!r}") from None
    if number != int(number):
        raise argparse.ArgumentTypeError(f"count must be integral, got {value!r}")
    return int(number)


def _scenario_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    grp = parser.add_argument_group('scenario')
    grp.add_argument('--config', metavar='FILE', help="key=value file overriding the defaults (flags override it)")
    grp.add_argument('--K', type=int, help=f"number of users (default: {NUM_USERS})")
    grp.add_argument('--M', type=int, help=f"number of RAUs (default: {NUM_RAUS})")
    grp.add_argument('--N', type=int, help=f"antennas per RAU (default: {ANTENNAS_PER_RAU})")
    grp.add_argument('--tau', type=int, help=f"number of orthonormal pilots (default: {NUM_PILOTS})")
    grp.add_argument('--r', type=float, help=f"hexagonal cell radius in m (default: {CELL_RADIUS})")
    grp.add_argument('--zeta', type=float, help=f"path-loss exponent (default: {PATHLOSS_EXP})")
    shadow = grp.add_mutually_exclusive_group()
    shadow.add_argument('--shadow-std-db', dest='shadow_std_db', type=float,
                        help=f"std of shadow fading in dB (default: {SHADOW_STD_DB:.4f})")
    shadow.add_argument('--shadow-var-db', dest='shadow_var_db', type=float,
                        help="variance of shadow fading in dB^2, sets the std to its square root")
    grp.add_argument('--p-tot', dest='p_tot', metavar='W[,W...]',
                     help=f"total pilot power per user, one value or K comma-separated values (default: {PILOT_POWER})")
    grp.add_argument('--noise', type=float, help=f"noise power in W (default: {NOISE_POWER})")
    grp.add_argument('--dmin', type=float, help=f"minimal user-RAU distance in m (default: {MIN_LINK_DISTANCE})")
    grp.add_argument('--seed', type=int, help=f"master seed (default: {SEED})")
    grp.add_argument('--freeze-geometry', action='store_true', help="reuse one geometry for every instance")
    grp.add_argument('--processes', type=int, help="number of worker processes")
    return parser


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='pilot-dnn', description="Deep-learning pilot power allocation for multi-user "
                                                          "distributed massive MIMO")
    parser.add_argument('-v', '--verbose', action='count', default=0, help="debug logging")
    parser.add_argument('-q', '--quiet', action='count', default=0, help="warnings only")
    subparsers = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')
    scenario = _scenario_parser()

    gen = subparsers.add_parser('gen-data', parents=[scenario], help="generate a large-scale fading dataset")
    gen.add_argument('--count', type=_count, required=True, help="number of instances")
    gen.add_argument('--out', required=True, help="dataset file")
    gen.set_defaults(func=cmd_gen_data)

    trn = subparsers.add_parser('train', parents=[scenario], help="unsupervised training of the allocation network")
    trn.add_argument('--iterations', type=_count, help="number of iterations (default: 1000)")
    trn.add_argument('--batch', type=_count, help="mini-batch size (default: 1000)")
    trn.add_argument('--optimizer', choices=('adam', 'sgd'), help="optimizer (default: adam)")
    trn.add_argument('--lr', type=float, help="learning rate (default: 1e-3)")
    trn.add_argument('--lr-final', dest='lr_final', type=float,
                     help="learning rate reached by cosine decay at the last iteration (default: constant)")
    trn.add_argument('--objective', choices=OBJECTIVES,
                     help="training objective: mean sum MSE or mean log sum MSE per instance (default: sum_mse)")
    trn.add_argument('--loss-scale', dest='loss_scale', type=float,
                     help="gradient multiplier of the sum_mse objective (default: 1e8)")
    trn.add_argument('--eval-every', dest='eval_every', type=_count, help="evaluation period (default: 10)")
    trn.add_argument('--holdout', type=_count, help="size of the held-out set (default: 2000)")
    trn.add_argument('--dataset', help="train on a fixed dataset file instead of fresh instances")
    trn.add_argument('--hidden', type=_int_list, default=HIDDEN_LAYERS,
                     help=f"hidden layer sizes (default: {','.join(map(str, HIDDEN_LAYERS))})")
    trn.add_argument('--log-input', dest='log_input', action='store_true', help="feed log10 of the fading")
    trn.add_argument('--checkpoint', default='dnn.ckpt', help="checkpoint file (default: dnn.ckpt)")
    trn.add_argument('--log', help="training log CSV (default: <checkpoint>.log.csv)")
    trn.set_defaults(func=cmd_train)

    evl = subparsers.add_parser('eval', parents=[scenario], help="evaluate allocation methods on a dataset")
    evl.add_argument('--dataset', required=True, help="dataset file")
    evl.add_argument('--methods', default='dnn,appa,rpa,espa', help=f"comma-separated subset of {','.join(METHODS)}")
    evl.add_argument('--checkpoint', default='dnn.ckpt', help="trained network for the dnn method")
    evl.add_argument('--out-dir', dest='out_dir', default='report', help="report directory (default: report)")
    evl.add_argument('--espa-budget', dest='espa_budget', type=_count, default=ESPA_BUDGET,
                     help=f"maximal tau^K of the exhaustive search (default: {ESPA_BUDGET:.0e})")
    evl.add_argument('--espa-limit', dest='espa_limit', type=_count, help="run ESPA on the first n instances only")
    evl.add_argument('--contopt-steps', dest='contopt_steps', type=_count, default=STEPS,
                     help=f"gradient steps of the continuous reference (default: {STEPS})")
    evl.set_defaults(func=cmd_eval)

    chk = subparsers.add_parser('gradcheck', parents=[scenario], help="finite-difference gradient verification")
    chk.add_argument('--tolerance-msecore', dest='tolerance_msecore', type=float, default=MSECORE_RTOL,
                     help=f"relative tolerance of the objective gradient (default: {MSECORE_RTOL})")
    chk.add_argument('--tolerance-network', dest='tolerance_network', type=float, default=NETWORK_RTOL,
                     help=f"relative tolerance of the network gradient (default: {NETWORK_RTOL})")
    chk.add_argument('--instances', type=_count, default=5, help="number of seeded instances (default: 5)")
    chk.add_argument('--coords', type=_count, default=50, help="network coordinates per instance (default: 50)")
    chk.set_defaults(func=cmd_gradcheck)
    return parser


def scenario_from_args(args: argparse.Namespace) -> SystemConfig:
    """Scenario with precedence defaults < config file < explicit flags"""
    config = SystemConfig()
    if args.config:
        values = parse_key_values(args.config)
        config = config_from_mapping({k: v for k, v in values.items() if k not in TRAIN_KEYS}, config)
    flags = {key: getattr(args, key) for key in SCENARIO_FLAGS if getattr(args, key) is not None}
    if args.freeze_geometry:
        flags['freeze_geometry'] = True
    return config_from_mapping(flags, config)


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = scenario_from_args(args)
    if args.count < 1:
        raise ConfigError(f"Instance count must be positive, got {args.count}")
    manifest = RunManifest.start('gen-data', config, args.argv)
    log.info(f"Generating {args.count} instances with K={config.K}, M={config.M}, seed={config.rng_seed}")
    data = generate_dataset(config, args.count, processes=args.processes)
    write_dataset(manifest.add_output(args.out), data)
    manifest.extra['count'] = args.count
    manifest.write(args.out + MANIFEST_SUFFIX)
    log.info(f"Dataset written to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = scenario_from_args(args)
    overrides = dict(batch_size=args.batch, iterations=args.iterations, optimizer=args.optimizer,
                     learning_rate=args.lr, lr_final=args.lr_final, objective=args.objective,
                     loss_scale=args.loss_scale, eval_every=args.eval_every,
                     holdout_size=args.holdout, dataset_path=args.dataset, checkpoint_path=args.checkpoint)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    overrides['seed'] = config.rng_seed
    cfg = TrainConfig.from_file(args.config, **overrides) if args.config else TrainConfig(**overrides)
    arch = NetworkArch.for_scenario(config, args.hidden, args.log_input)
    log.info(f"Network architecture: {list(arch.layer_sizes)}")
    print_complexity(arch, cfg.batch_size, cfg.iterations)
    log_path = args.log or str(pathlib.Path(args.checkpoint).with_suffix('.log.csv'))
    manifest = RunManifest.start('train', config, args.argv, train=cfg.seed)
    manifest.extra.update(architecture=list(arch.layer_sizes), log_input=arch.log_input,
                          train_config=dataclasses.asdict(cfg))
    t_start = time.perf_counter()
    try:
        params, train_log = train(arch, cfg, config)
    except DivergenceError as e:
        if e.log is not None:
            e.log.write_csv(manifest.add_output(log_path))
        raise
    manifest.extra['wall_time_s'] = time.perf_counter() - t_start
    save_params(params, manifest.add_output(args.checkpoint))
    train_log.write_csv(manifest.add_output(log_path))
    if train_log:
        manifest.extra['final_holdout_mean'] = train_log[-1].holdout_mean
        manifest.extra['best_holdout_mean'] = min(e.holdout_mean for e in train_log)
        manifest.extra['best_holdout_median'] = min(e.holdout_median for e in train_log)
    manifest.write(args.checkpoint + MANIFEST_SUFFIX)
    log.info(f"Training finished in {manifest.extra['wall_time_s']:.2f}s, checkpoint: {args.checkpoint}")
    return EXIT_OK


def _parse_methods(value: str) -> list[str]:
    requested = [m.strip().lower() for m in value.split(',') if m.strip()]
    unknown = set(requested) - set(METHODS)
    if unknown or not requested:
        raise ConfigError(f"Unknown methods {sorted(unknown)}, choose from {','.join(METHODS)}")
    # ESPA runs before contopt to provide its warm start
    return [m for m in METHODS if m in requested]


def _eval_dnn(args, dataset: np.ndarray, config: SystemConfig, _):
    params = load_params(args.checkpoint)
    arch = params.arch
    if (arch.num_users, arch.num_raus, arch.num_pilots) != (config.K, config.M, config.tau) \
            or not np.allclose(arch.pilot_power, config.p_tot, rtol=POWER_RTOL):
        raise DimensionError(f"Checkpoint {args.checkpoint} was trained for K={arch.num_users}, M={arch.num_raus}, "
                             f"tau={arch.num_pilots}, p_tot={arch.pilot_power}")
    reports, _ = evaluate(params, dataset, config)
    return reports, None, None


def _eval_appa(args, dataset: np.ndarray, config: SystemConfig, _):
    alloc = appa(config)
    reports = []
    for lam in dataset:
        t_start = time.perf_counter()
        report = per_link_mse(lam, alloc, config, 'appa')
        report.elapsed = time.perf_counter() - t_start
        reports.append(report)
    return reports, None, None


def _eval_rpa(args, dataset: np.ndarray, config: SystemConfig, _):
    reports, assignments = [], []
    for i, lam in enumerate(dataset):
        t_start = time.perf_counter()
        assignment = rpa(config, instance_rng(config.rng_seed, i, ASSIGN_STREAM))
        report = per_link_mse(lam, assignment_to_allocation(assignment, config.p_tot, config.tau), config, 'rpa')
        report.elapsed, report.seed = time.perf_counter() - t_start, config.rng_seed
        reports.append(report)
        assignments.append(assignment)
    return reports, assignments, None


def _eval_espa(args, dataset: np.ndarray, config: SystemConfig, _):
    count = len(dataset) if args.espa_limit is None else min(args.espa_limit, len(dataset))
    reports, assignments = [], []
    for i in range(count):
        assignment, report = espa(dataset[i], config, args.espa_budget, args.processes)
        reports.append(report)
        assignments.append(assignment)
        if (i + 1) % 10 == 0:
            log.info(f"ESPA finished {i + 1}/{count} instances")
    return reports, assignments, list(range(count))


def _eval_contopt(args, dataset: np.ndarray, config: SystemConfig, espa_assignments: list[np.ndarray]):
    reports = []
    for i, lam in enumerate(dataset):
        p, report = continuous_opt(lam, config, steps=args.contopt_steps, seed=config.rng_seed)
        if espa_assignments and i < len(espa_assignments):
            warm = config.p_tot[:, None] * grouped_softmax(assignment_logits(espa_assignments[i], config.tau))
            _, warm_report = continuous_opt(lam, config, init=warm, steps=args.contopt_steps)
            if warm_report.sum_mse < report.sum_mse:
                warm_report.elapsed += report.elapsed
                report = warm_report
        reports.append(report)
    return reports, None, None


EVALUATORS = dict(dnn=_eval_dnn, appa=_eval_appa, rpa=_eval_rpa, espa=_eval_espa, contopt=_eval_contopt)


def cmd_eval(args: argparse.Namespace) -> int:
    config = scenario_from_args(args)
    methods = _parse_methods(args.methods)
    dataset = read_dataset(args.dataset)
    if not len(dataset):
        raise ConfigError(f"Dataset {args.dataset} is empty")
    check_fading(dataset, config)
    if 'espa' in methods and num_assignments(config.K, config.tau) > args.espa_budget:
        raise BudgetExceededError(f"ESPA needs tau^K={num_assignments(config.K, config.tau)} evaluations, "
                                  f"above --espa-budget {args.espa_budget}")
    if 'dnn' in methods and not pathlib.Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"Checkpoint {args.checkpoint} does not exist")
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.start('eval', config, args.argv, assign=config.rng_seed)
    manifest.extra.update(dataset=args.dataset, methods=methods, instances=len(dataset))
    results, timings, espa_assignments = {}, {}, None
    for method in methods:
        log.info(f"Evaluating {method.upper()} on {len(dataset)} instances")
        t_start = time.perf_counter()
        reports, assignments, indices = EVALUATORS[method](args, dataset, config, espa_assignments)
        timings[method] = (len(reports), time.perf_counter() - t_start)
        if method == 'espa':
            espa_assignments = assignments
            manifest.extra['espa_instances'] = len(reports)
        results[method] = reports
        write_method_reports(out_dir, method, reports, manifest, assignments, indices)
    timing_frame(timings).to_csv(manifest.add_output(out_dir / 'timing.csv'), index=False, float_format='%.9g')
    print_frame(summary_frame(results), 'Sum MSE')
    print_frame(timing_frame(timings), 'Elapsed time')
    manifest.write(out_dir / 'manifest.json')
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    config = scenario_from_args(args)
    results = [check_msecore_gradient(config, args.instances, config.rng_seed, args.tolerance_msecore),
               check_network_gradient(config, instances=args.instances, coords=args.coords, seed=config.rng_seed,
                                      tolerance=args.tolerance_network)]
    print_gradcheck(results)
    for res in results:
        log.log(logging.INFO if res.passed else logging.ERROR,
                f"{res.suite}: max relative error {res.max_rel_err:.3e} (tolerance {res.tolerance:.1e})")
    return EXIT_OK if all(res.passed for res in results) else EXIT_VERIFY


def main(argv: list[str] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(sys.argv[1:] if argv is None else argv)
    setup_logging(args.verbose - args.quiet)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        log.error(e)
        return EXIT_USAGE
    except (PilotDesignError, OSError) as e:
        log.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME
