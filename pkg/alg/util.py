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
import typing

import numpy as np

from mimo.common import DimensionError

# Logit gap used to embed one-hot assignments into the interior of the simplex, e^-40 ~ 4e-18
ONE_HOT_GAP = 40.0


def num_assignments(K: int, tau: int) -> int:
    """Size of the one-hot assignment space tau^K"""
    return tau ** K


def assignment_block(start: int, count: int, K: int, tau: int) -> np.ndarray:
    """Decode the mixed-radix indices [start, start+count) into assignment vectors in lexicographic order"""
    idx = np.arange(start, start + count, dtype=np.int64)
    # Most significant digit belongs to user 0 -> numeric order equals lexicographic order
    radix = tau ** np.arange(K - 1, -1, -1, dtype=np.int64)
    return (idx[:, None] // radix[None, :]) % tau


def iassignments(K: int, tau: int) -> typing.Iterator[tuple[int, ...]]:
    """Generator over all tau^K assignments in lexicographic order"""
    return itertools.product(range(tau), repeat=K)


def assignment_index(assignment: np.ndarray, tau: int) -> int:
    """Mixed-radix index of an assignment vector"""
    return int(sum(int(a) * tau ** i for i, a in enumerate(reversed(list(assignment)))))


def assignment_to_allocation(assignment: np.ndarray, p_tot: np.ndarray, tau: int) -> np.ndarray:
    """Convert pilot indices into the one-hot power allocation fully assigning p_k^tot to pilot a_k"""
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.shape != (len(p_tot),) or (assignment < 0).any() or (assignment >= tau).any():
        raise DimensionError(f"Assignment {assignment} is invalid for K={len(p_tot)}, tau={tau}")
    alloc = np.zeros((len(p_tot), tau))
    alloc[np.arange(len(p_tot)), assignment] = p_tot
    return alloc


def assignment_logits(assignment: np.ndarray, tau: int, gap: float = ONE_HOT_GAP) -> np.ndarray:
    """Interior logits whose scaled softmax is the one-hot allocation up to e^-gap"""
    logits = np.zeros((len(assignment), tau))
    logits[np.arange(len(assignment)), np.asarray(assignment, dtype=np.int64)] = gap
    return logits


def grouped_softmax(t: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction"""
    e = np.exp(t - t.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(s: np.ndarray, ds: np.ndarray) -> np.ndarray:
    """Chain *ds* = dF/ds through the softmax Jacobian: dF/dt = s * (ds - <s, ds>)"""
    return s * (ds - (s * ds).sum(axis=-1, keepdims=True))


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 0.0) -> np.ndarray:
    """Componentwise |a - n| / max(|a|, |n|) where both values below *atol* count as exact agreement"""
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    with np.errstate(divide='ignore', invalid='ignore'):
        err = np.abs(analytic - numeric) / scale
    return np.where(scale <= atol, 0.0, err)
