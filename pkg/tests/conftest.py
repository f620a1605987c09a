"""Shared test helpers."""

import itertools

import numpy as np


def brute_force_assignment(points_a: np.ndarray, points_b: np.ndarray):
    """Exhaustive minimum over all permutations of the squared-distance
    matching cost. Independent oracle for small instances."""
    n = points_a.shape[0]
    cost = ((points_a[:, None, :] - points_b[None, :, :]) ** 2).sum(axis=2)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    best = int(np.argmin(totals))
    return float(totals[best]), perms[best]
