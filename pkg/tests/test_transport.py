import numpy as np
import pytest

from conftest import brute_force_assignment
from otcp import (
    DimensionMismatch,
    InfeasibleDuals,
    NonFiniteInput,
    RankMap,
    ReferenceRanks,
    ScoreMatrix,
    evaluate_rank,
    positive_orthant_reference,
    recover_duals,
    solve_assignment,
    spherical_reference,
)
from otcp.transport import Assignment

RTOL = 1e-9


def _seeded_instance():
    rng = np.random.Generator(np.random.PCG64(1234))
    pts = rng.normal(size=(4, 2)) * 2.0
    return ScoreMatrix(pts), spherical_reference(4, 2, seed=77)


def test_score_matrix_validation():
    with pytest.raises(NonFiniteInput):
        ScoreMatrix(np.array([[1.0, np.nan]]))
    with pytest.raises(NonFiniteInput):
        ScoreMatrix(np.array([[np.inf, 0.0]]))
    with pytest.raises(DimensionMismatch):
        ScoreMatrix(np.zeros((0, 2)))
    with pytest.raises(DimensionMismatch):
        ScoreMatrix(np.zeros(3))


def test_solve_assignment_single_point():
    scores = ScoreMatrix(np.array([[0.5, 0.0]]))
    ref = ReferenceRanks(
        vectors=np.array([[1.0, 0.0]]), kind="sphere", seed=0, levels=np.array([1.0])
    )
    a = solve_assignment(scores, ref)
    assert a.permutation.tolist() == [0]
    assert np.isclose(a.total_cost, 0.25, rtol=RTOL)


def test_solve_assignment_identity_zero_cost():
    ref = spherical_reference(6, 3, seed=2)
    scores = ScoreMatrix(ref.vectors.copy())
    a = solve_assignment(scores, ref)
    assert np.isclose(a.total_cost, 0.0, atol=1e-15)
    assert a.permutation.tolist() == list(range(6))


def test_solve_assignment_frozen_seeded_instance():
    # brute-force oracle over all 24 permutations, values frozen
    scores, ref = _seeded_instance()
    a = solve_assignment(scores, ref)
    assert a.permutation.tolist() == [1, 2, 3, 0]
    assert np.isclose(a.total_cost, 56.13208722752597, rtol=RTOL)
    want_cost, want_perm = brute_force_assignment(scores.points, ref.vectors)
    assert np.isclose(a.total_cost, want_cost, rtol=RTOL)
    assert a.permutation.tolist() == want_perm.tolist()


def test_solve_assignment_dimension_checks():
    scores = ScoreMatrix(np.zeros((3, 2)))
    with pytest.raises(DimensionMismatch):
        solve_assignment(scores, spherical_reference(4, 2, seed=0))
    with pytest.raises(DimensionMismatch):
        solve_assignment(scores, spherical_reference(3, 3, seed=0))


def test_recover_duals_feasibility_and_slackness():
    scores, ref = _seeded_instance()
    a = solve_assignment(scores, ref)
    duals = recover_duals(scores, ref, a)
    gains = scores.points @ ref.vectors.T
    scale = max(1.0, np.abs(gains).max())
    slack = duals.psi_star[:, None] - (gains - duals.psi[None, :])
    assert slack.min() >= -RTOL * scale  # all 16 inequalities
    matched = slack[np.arange(4), a.permutation]
    assert np.abs(matched).max() <= RTOL * scale  # 4 equalities


def test_recover_duals_without_solver_duals():
    # strips the solver duals to exercise the reconstruction path
    scores, ref = _seeded_instance()
    a = solve_assignment(scores, ref)
    bare = Assignment(permutation=a.permutation, total_cost=a.total_cost)
    duals = recover_duals(scores, ref, bare)
    gains = scores.points @ ref.vectors.T
    scale = max(1.0, np.abs(gains).max())
    slack = duals.psi_star[:, None] - (gains - duals.psi[None, :])
    assert slack.min() >= -RTOL * scale
    assert np.abs(slack[np.arange(4), a.permutation]).max() <= RTOL * scale


def test_recover_duals_rejects_bad_assignment():
    scores, ref = _seeded_instance()
    a = solve_assignment(scores, ref)
    worst = np.array(a.permutation[::-1])  # reversed matching is not optimal here
    bad = Assignment(permutation=worst, total_cost=a.total_cost)
    with pytest.raises(InfeasibleDuals):
        recover_duals(scores, ref, bad)


def test_identity_matching_slackness_n3():
    ref = spherical_reference(3, 2, seed=5)
    scores = ScoreMatrix(ref.vectors.copy())
    rank_map = RankMap.fit(scores, ref)
    gains = np.einsum("ij,ij->i", scores.points, ref.vectors)
    attained = gains - rank_map.duals.psi
    assert np.allclose(attained, rank_map.duals.psi_star, rtol=0, atol=1e-12)


def test_rank_map_calibration_levels_are_exact_permutation():
    rng = np.random.default_rng(8)
    scores = ScoreMatrix(rng.normal(size=(40, 3)) * 6)
    ref = spherical_reference(40, 3, seed=4)
    rank_map = RankMap.fit(scores, ref)
    got = np.sort(rank_map.calibration_levels())
    assert np.array_equal(got, ref.levels)


def test_evaluate_at_calibration_points_recovers_matching():
    rng = np.random.default_rng(12)
    scores = ScoreMatrix(rng.normal(size=(60, 2)) * 3)
    ref = spherical_reference(60, 2, seed=13)
    rank_map = RankMap.fit(scores, ref)
    idx = rank_map.evaluate_batch(scores.points)
    assert np.array_equal(idx, rank_map.assignment.permutation)
    # attained maximum matches psi_star
    one = rank_map.evaluate(scores.points[17])
    gain = scores.points[17] @ ref.vectors[one.index] - rank_map.duals.psi[one.index]
    assert np.isclose(gain, rank_map.duals.psi_star[17], rtol=1e-9, atol=1e-9)


def test_evaluate_far_point_gets_outermost_rank():
    rng = np.random.default_rng(21)
    scores = ScoreMatrix(rng.normal(size=(50, 2)))
    ref = spherical_reference(50, 2, seed=22)
    rank_map = RankMap.fit(scores, ref)
    far = 50.0 * ref.vectors[-1] / np.linalg.norm(ref.vectors[-1])
    result = rank_map.evaluate(far)
    assert result.level == 1.0
    assert result.index == 49


def test_evaluate_rank_dimension_and_finiteness():
    rng = np.random.default_rng(2)
    scores = ScoreMatrix(rng.normal(size=(10, 2)))
    rank_map = RankMap.fit(scores, spherical_reference(10, 2, seed=1))
    with pytest.raises(DimensionMismatch):
        rank_map.evaluate(np.zeros(3))
    with pytest.raises(NonFiniteInput):
        rank_map.evaluate(np.array([np.nan, 0.0]))
    assert evaluate_rank(rank_map, np.zeros(2)).index == rank_map.evaluate(np.zeros(2)).index


def test_one_dimensional_reduction_is_sorting_rank():
    rng = np.random.default_rng(31)
    values = rng.normal(size=25) * 4
    scores = ScoreMatrix(values[:, None])
    ref = positive_orthant_reference(25, 1, seed=0)
    rank_map = RankMap.fit(scores, ref)
    sorting_ranks = np.argsort(np.argsort(values, kind="stable"), kind="stable") + 1
    assert np.array_equal(rank_map.assignment.permutation + 1, sorting_ranks)
    idx = rank_map.evaluate_batch(scores.points)
    assert np.array_equal(idx + 1, sorting_ranks)


def test_translation_equivariance_of_assignment():
    rng = np.random.default_rng(17)
    for seed in range(5):
        pts = rng.normal(size=(30, 2)) * 2
        ref = spherical_reference(30, 2, seed=seed)
        base = solve_assignment(ScoreMatrix(pts), ref)
        shifted = solve_assignment(ScoreMatrix(pts + np.array([3.7, -1.2])), ref)
        assert np.array_equal(base.permutation, shifted.permutation)


def test_dual_gauge_invariance():
    rng = np.random.default_rng(23)
    scores = ScoreMatrix(rng.normal(size=(35, 2)) * 5)
    ref = spherical_reference(35, 2, seed=3)
    rank_map = RankMap.fit(scores, ref)
    queries = rng.normal(size=(200, 2)) * 5
    base = rank_map.evaluate_batch(queries)
    from otcp.transport import DualPotentials

    for const in (-17.0, 4.25, 1e3):
        shifted = RankMap(
            scores=scores,
            reference=ref,
            assignment=rank_map.assignment,
            duals=DualPotentials(
                psi=rank_map.duals.psi + const,
                psi_star=rank_map.duals.psi_star,
            ),
        )
        assert np.array_equal(shifted.evaluate_batch(queries), base)


def test_duplicated_scores_map_to_innermost_match():
    pts = np.array([[1.0, 1.0], [1.0, 1.0], [4.0, -2.0]])
    scores = ScoreMatrix(pts)
    ref = spherical_reference(3, 2, seed=9)
    rank_map = RankMap.fit(scores, ref)
    perm = rank_map.assignment.permutation
    dup_ranks = sorted([perm[0], perm[1]])
    idx = rank_map.evaluate_batch(pts[:2])
    assert idx[0] == idx[1] == dup_ranks[0]


def test_distribution_freeness_on_clustered_data():
    rng = np.random.default_rng(41)
    centers = rng.normal(size=(5, 2)) * 10
    pts = centers[rng.integers(0, 5, size=200)] + rng.normal(size=(200, 2)) * 1e-9
    rank_map = RankMap.fit(ScoreMatrix(pts), spherical_reference(200, 2, seed=6))
    assert np.array_equal(np.sort(rank_map.calibration_levels()), np.arange(1, 201) / 200)
