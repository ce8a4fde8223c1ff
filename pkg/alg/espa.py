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
import functools
import logging
import math
import multiprocessing
import time
import typing

import numpy as np

from alg.msecore import MseReport, assignment_sum_mse, check_fading, per_link_mse
from alg.util import assignment_block, assignment_to_allocation, num_assignments
from mimo.common import ESPA_BUDGET, BudgetExceededError
from mimo.config import SystemConfig

log = logging.getLogger(__name__)

# Number of assignments evaluated in one vectorized block
BLOCK_SIZE = 1 << 14
# Number of blocks handed to a worker at once
BLOCKS_PER_TASK = 16
# Number of finished tasks between progress reports
PROGRESS_TASKS = 16


def search_range(lam: np.ndarray, config: SystemConfig, start: int, stop: int,
                 block: int = BLOCK_SIZE) -> tuple[float, int]:
    """Return the minimal sum MSE and the smallest index reaching it among the assignments [start, stop)"""
    best_val, best_idx = math.inf, None
    for b in range(start, stop, block):
        count = min(block, stop - b)
        values = assignment_sum_mse(lam, assignment_block(b, count, config.K, config.tau), config)
        # argmin returns the first occurrence -> lexicographically smallest within the block
        i = int(np.argmin(values))
        if values[i] < best_val:
            best_val, best_idx = float(values[i]), b + i
    return best_val, best_idx


def espa(lam: np.ndarray, config: SystemConfig, budget: int = ESPA_BUDGET, processes: int = None,
         block: int = BLOCK_SIZE) -> tuple[np.ndarray, MseReport]:
    """
    Exhaustive search based pilot assignment over all tau^K one-hot allocations. The index space is enumerated by
    mixed-radix counting, partitioned into ranges and searched in parallel, then merged deterministically with ties
    broken by the lexicographically smallest assignment.

    :param lam:         K x M large-scale fading
    :param config:      scenario parameters
    :param budget:      maximal number of assignments allowed to evaluate
    :param processes:   number of worker processes (serial if None or 1)
    :param block:       number of assignments evaluated in one vectorized step
    :return:            optimal 0-based assignment and the closed-form report of its allocation
    """
    t_start = time.perf_counter()
    lam = check_fading(lam, config)
    total = num_assignments(config.K, config.tau)
    if total > budget:
        raise BudgetExceededError(f"Exhaustive search needs {total} evaluations for K={config.K}, tau={config.tau} "
                                  f"which exceeds the budget of {budget}")
    step = block * BLOCKS_PER_TASK
    ranges = [(b, min(b + step, total)) for b in range(0, total, step)]
    search = functools.partial(_search_task, lam, config, block=block)
    if processes and processes > 1 and len(ranges) > 1:
        with multiprocessing.Pool(processes) as pool:
            results = _collect(pool.imap(search, ranges), ranges, total)
    else:
        results = _collect(map(search, ranges), ranges, total)
    # Ranges are ordered, so the min over (value, index) keeps the lexicographic tie-break
    best_val, best_idx = min(results, key=lambda res: (res[0], res[1]))
    assignment = assignment_block(best_idx, 1, config.K, config.tau)[0]
    report = per_link_mse(lam, assignment_to_allocation(assignment, config.p_tot, config.tau), config, 'espa')
    report.elapsed = time.perf_counter() - t_start
    log.debug(f"ESPA searched {total} assignments in {report.elapsed:.3f}s -> {assignment + 1} ({best_val:.6e})")
    return assignment, report


def _search_task(lam: np.ndarray, config: SystemConfig, bounds: tuple[int, int], block: int) -> tuple[float, int]:
    return search_range(lam, config, *bounds, block=block)


def _collect(results: typing.Iterable[tuple[float, int]], ranges: list[tuple[int, int]],
             total: int) -> list[tuple[float, int]]:
    """Gather the ordered task results and report the progress after every PROGRESS_TASKS tasks"""
    collected = []
    for i, res in enumerate(results, start=1):
        collected.append(res)
        if i % PROGRESS_TASKS == 0 and i < len(ranges):
            log.info(f"ESPA progress: {ranges[i - 1][1]}/{total} assignments ({ranges[i - 1][1] / total:.1%})")
    return collected
