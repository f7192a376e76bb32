# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Minimum cost one-to-one assignment over rectangular cost matrices with forbidden cells."""

import math
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment


class AssignmentResult(NamedTuple):
    """A partial bijection between rows and columns.

    Args:
        matches (List[Tuple[int, int]]): Matched (row, column) pairs in increasing row order.
        unmatched_rows (List[int]): Rows left without a column.
        unmatched_cols (List[int]): Columns left without a row.
        total_cost (float): The exactly rounded sum of the matched costs.
    """
    matches: List[Tuple[int, int]]
    unmatched_rows: List[int]
    unmatched_cols: List[int]
    total_cost: float


def solve_assignment(costs, forbidden: Optional[np.ndarray] = None) -> AssignmentResult:
    """Matches as many allowed (row, column) pairs as possible, then minimizes their total cost.

    Forbidden cells are never matched. Without forbidden cells this is the plain rectangular
    Kuhn-Munkres problem.

    Args:
        costs (numpy.ndarray): A (rows, cols) array of finite costs.
        forbidden (Optional[numpy.ndarray]): A boolean mask of the same shape.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2:
        raise ValueError(f'Expected a two dimensional cost matrix, got shape {costs.shape}')
    rows, cols = costs.shape
    if forbidden is None:
        forbidden = np.zeros(costs.shape, dtype=bool)
    else:
        forbidden = np.asarray(forbidden, dtype=bool)
        if forbidden.shape != costs.shape:
            raise ValueError(f'Forbidden mask of shape {forbidden.shape} for costs of shape {costs.shape}')

    matches = []
    if rows and cols and not forbidden.all():
        if forbidden.any():
            allowed = costs[~forbidden]
            # Any extra allowed match outweighs every cost difference among allowed cells.
            big = (min(rows, cols) + 1) * (np.abs(allowed).max() * 2 + 1)
            solvable = np.where(forbidden, big, costs)
        else:
            solvable = costs
        row_index, col_index = linear_sum_assignment(solvable)
        matches = [(int(r), int(c)) for r, c in zip(row_index, col_index) if not forbidden[r, c]]

    matched_rows = {r for r, _ in matches}
    matched_cols = {c for _, c in matches}
    return AssignmentResult(
        matches=matches,
        unmatched_rows=[r for r in range(rows) if r not in matched_rows],
        unmatched_cols=[c for c in range(cols) if c not in matched_cols],
        total_cost=math.fsum(costs[r, c] for r, c in matches),
    )
