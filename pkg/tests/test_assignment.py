# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

import math
from itertools import permutations, product

import numpy as np
import pytest

from msdoas.assignment import solve_assignment


def brute_force_square(costs):
    n = costs.shape[0]
    return min(math.fsum(costs[r, c] for r, c in enumerate(perm)) for perm in permutations(range(n)))


def brute_force_partial(costs, forbidden):
    """(cardinality, cost) of the best matching: most allowed pairs first, then least cost."""
    rows, cols = costs.shape
    best = (0, 0.0)
    for choice in product(range(-1, cols), repeat=rows):
        used = [c for c in choice if c >= 0]
        if len(used) != len(set(used)):
            continue
        if any(c >= 0 and forbidden[r, c] for r, c in enumerate(choice)):
            continue
        cost = math.fsum(costs[r, c] for r, c in enumerate(choice) if c >= 0)
        if len(used) > best[0] or (len(used) == best[0] and cost < best[1]):
            best = (len(used), cost)
    return best


def assert_partial_bijection(result, rows, cols):
    matched_rows = [r for r, _ in result.matches]
    matched_cols = [c for _, c in result.matches]
    assert len(set(matched_rows)) == len(matched_rows)
    assert len(set(matched_cols)) == len(matched_cols)
    assert sorted(matched_rows + result.unmatched_rows) == list(range(rows))
    assert sorted(matched_cols + result.unmatched_cols) == list(range(cols))


def test_single_cell():
    result = solve_assignment(np.array([[0.7]]))
    assert result.matches == [(0, 0)]
    assert result.total_cost == 0.7
    assert result.unmatched_rows == [] and result.unmatched_cols == []


def test_zero_diagonal():
    costs = np.ones((3, 3)) - np.eye(3)
    result = solve_assignment(costs)
    assert result.matches == [(0, 0), (1, 1), (2, 2)]
    assert result.total_cost == 0.0


def test_empty():
    for shape in ((0, 0), (0, 3), (2, 0)):
        result = solve_assignment(np.zeros(shape))
        assert result.matches == []
        assert result.unmatched_rows == list(range(shape[0]))
        assert result.unmatched_cols == list(range(shape[1]))
        assert result.total_cost == 0.0


def test_rectangular():
    costs = np.array([[4.0, 1.0, 3.0],
                      [2.0, 0.0, 5.0]])
    result = solve_assignment(costs)
    assert result.matches == [(0, 1), (1, 0)] or result.matches == [(0, 2), (1, 1)]
    assert result.total_cost == 3.0
    assert len(result.unmatched_cols) == 1


def test_forbidden_cells_are_never_matched():
    costs = np.array([[0.0, 0.1],
                      [0.2, 0.9]])
    forbidden = np.array([[True, False],
                          [False, False]])
    result = solve_assignment(costs, forbidden)
    assert result.matches == [(0, 1), (1, 0)]
    assert result.total_cost == pytest.approx(0.3)


def test_forbidden_prefers_more_matches():
    # Matching row 0 to column 0 alone is cheapest but leaves row 1 without an allowed column.
    costs = np.array([[0.0, 0.9],
                      [0.5, 5.0]])
    forbidden = np.array([[False, False],
                          [False, True]])
    result = solve_assignment(costs, forbidden)
    assert result.matches == [(0, 1), (1, 0)]


def test_all_forbidden():
    result = solve_assignment(np.zeros((2, 3)), np.ones((2, 3), dtype=bool))
    assert result.matches == []
    assert result.unmatched_rows == [0, 1]
    assert result.unmatched_cols == [0, 1, 2]


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        solve_assignment(np.zeros(3))
    with pytest.raises(ValueError):
        solve_assignment(np.zeros((2, 2)), np.zeros((2, 3), dtype=bool))


def test_matches_brute_force_on_square_matrices():
    rng = np.random.default_rng(0)
    for _ in range(200):
        costs = rng.random((6, 6))
        result = solve_assignment(costs)
        assert len(result.matches) == 6
        assert result.total_cost == brute_force_square(costs)


def test_matches_brute_force_with_forbidden_cells():
    rng = np.random.default_rng(1)
    for _ in range(200):
        rows, cols = rng.integers(1, 5, size=2)
        costs = rng.random((rows, cols))
        forbidden = rng.random((rows, cols)) < 0.4
        result = solve_assignment(costs, forbidden)
        assert_partial_bijection(result, rows, cols)
        assert all(not forbidden[r, c] for r, c in result.matches)
        cardinality, cost = brute_force_partial(costs, forbidden)
        assert len(result.matches) == cardinality
        assert result.total_cost == pytest.approx(cost, abs=1e-12)
