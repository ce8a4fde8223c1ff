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
import pathlib

import pandas as pd
from matplotlib import pyplot as plt

from mimo.common import *


def draw_cdf(curves: dict[str, pd.DataFrame], title: str = None, logx: bool = True, figsize=(6, 4), ax=None,
             save: str | pathlib.Path = None, **kwargs):
    """Draw the empirical CDF of the per-instance sum MSE of each method"""
    if ax is None:
        plt.figure(figsize=figsize, dpi=300)
        ax = plt.gca()
    styles = itertools.cycle(('-', '--', '-.', ':'))
    for method, cdf in curves.items():
        ax.step(cdf[SUM_MSE], cdf[QUANTILE], where='post', ls=next(styles), lw=1.5, label=method.upper(), **kwargs)
    if logx:
        ax.set_xscale('log')
    ax.set_xlabel('Sum MSE')
    ax.set_ylabel('CDF')
    ax.set_ylim(0, 1)
    ax.grid(True, which='both', alpha=0.3)
    ax.legend(loc='lower right')
    if title:
        plt.title(title)
    plt.tight_layout()
    if save:
        plt.savefig(save)
    else:
        plt.show()
    plt.close()


def draw_cdf_files(out_dir: str | pathlib.Path, methods: list[str] = None, **kwargs):
    """Draw the {method}_cdf.csv curves written by an evaluation run"""
    out_dir = pathlib.Path(out_dir)
    files = sorted(out_dir.glob('*_cdf.csv'))
    curves = {f.name.removesuffix('_cdf.csv'): pd.read_csv(f) for f in files}
    if methods:
        curves = {m: curves[m] for m in methods if m in curves}
    draw_cdf(curves, **kwargs)


def draw_training(log: pd.DataFrame, figsize=(6, 4), save: str | pathlib.Path = None):
    """Draw the mini-batch loss and the held-out mean sum MSE of a training log"""
    plt.figure(figsize=figsize, dpi=300)
    ax = plt.gca()
    ax.plot(log['iteration'], log['loss'], lw=1, label='Mini-batch')
    ax.plot(log['iteration'], log['holdout_mean'], lw=1.5, label='Held-out')
    ax.set_yscale('log')
    ax.set_xlabel('Iteration')
    ax.set_ylabel('Mean sum MSE')
    ax.legend()
    plt.tight_layout()
    if save:
        plt.savefig(save)
    else:
        plt.show()
    plt.close()
