"""Conformal prediction engines on top of transport ranks.

The marginal procedure fits one rank map on all calibration scores and
keeps the region of the m innermost ranks with m = ceil((n+1) * alpha);
by construction the region contains exactly m calibration scores for any
score distribution with distinct points. The conditional procedure
stores the calibration data and, per query, solves a fresh transport
problem on the k nearest neighbors' scores against a reference seeded
from the query, so identical queries yield identical regions.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._common import derive_seed, guarded_ceil
from .errors import (
    CalibrationTooSmall,
    DimensionMismatch,
    LevelOutOfRange,
    NeighborCountTooSmall,
)
from .references import KIND_SPHERE, reference_of_kind, spherical_reference
from .transport import RankMap, ScoreMatrix


def _as_score_rows(values) -> np.ndarray:
    """Coerce score output to an (n, d) array; 1-D input means d = 1."""
    s = np.asarray(values, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    return s


@dataclass(frozen=True)
class QuantileRegion:
    """Membership oracle: a score belongs to the region when it occupies
    one of the threshold_count innermost reference ranks upon being
    appended to the calibration transport.

    The region is implicit; there is no geometric boundary. On points
    equal to a calibration score the test reduces to the fitted
    matching's rank, so exactly threshold_count calibration scores are
    members whenever scores are distinct; on fresh exchangeable scores
    the appended-rank construction makes the membership probability
    exactly threshold_count / (n + 1), which keeps the finite-sample
    coverage guarantee that a plain argmax cell lookup loses to the
    shrink-wrap bias of empirical transport maps.
    """

    rank_map: RankMap
    threshold_count: int
    nominal_level: float

    @property
    def n(self) -> int:
        return self.rank_map.n

    @property
    def d(self) -> int:
        return self.rank_map.d

    def contains(self, point: np.ndarray) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(self.contains_batch(p[None, :])[0])

    def contains_batch(self, points: np.ndarray) -> np.ndarray:
        return self.rank_map.appended_index_batch(points) < self.threshold_count

    def calibration_member_count(self) -> int:
        """Members among the calibration scores via the membership test."""
        return int(self.contains_batch(self.rank_map.scores.points).sum())


def build_quantile_region(rank_map: RankMap, beta: float) -> QuantileRegion:
    """Region keeping the ceil(beta * n) innermost ranks."""
    n = rank_map.n
    if not 0.0 < beta <= 1.0:
        raise LevelOutOfRange(f"level must be in (0, 1], got {beta}")
    count = guarded_ceil(beta * n, n)
    if count > n or count < 1:
        raise LevelOutOfRange(f"level {beta} asks for {count} of {n} ranks")
    return QuantileRegion(rank_map=rank_map, threshold_count=count, nominal_level=beta)


def region_contains(region: QuantileRegion, point: np.ndarray) -> bool:
    return region.contains(point)


@dataclass(frozen=True)
class MarginalPredictor:
    """Score function plus a fixed quantile region at level (1 + 1/n) * alpha."""

    score_fn: Callable
    region: QuantileRegion
    alpha: float

    def membership(self, output, target) -> bool:
        """True when the candidate target's score falls in the region."""
        s = np.atleast_1d(np.asarray(self.score_fn(output, target), dtype=np.float64))
        if s.ndim == 1:
            return self.region.contains(s)
        return bool(self.region.contains_batch(s).all())

    def membership_batch(self, outputs, targets) -> np.ndarray:
        s = _as_score_rows(self.score_fn(outputs, targets))
        return self.region.contains_batch(s)

    def label_sets(self, probs: np.ndarray, max_classes: int = 1000) -> np.ndarray:
        """Boolean (m, K) matrix of per-row predicted label sets, built by
        exhaustive enumeration of the K one-hot candidates.

        Requires a classification score function exposing
        candidate_scores(prob_row); max_classes caps the enumeration.
        """
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim == 1:
            probs = probs[None, :]
        k = probs.shape[1]
        if k > max_classes:
            raise DimensionMismatch(
                f"{k} classes exceed the enumeration cap of {max_classes}"
            )
        cand = np.concatenate([self.score_fn.candidate_scores(row) for row in probs])
        member = self.region.contains_batch(cand)
        return member.reshape(len(probs), k)


def fit_marginal(
    score_fn: Callable,
    outputs: np.ndarray,
    targets: np.ndarray,
    alpha: float,
    reference_kind: str = KIND_SPHERE,
    seed: int = 0,
    validate: bool | None = None,
) -> MarginalPredictor:
    """Compute calibration scores, rank them against a fresh reference and
    keep the region at level (1 + 1/n) * alpha.

    Raises CalibrationTooSmall when ceil((n + 1) * alpha) > n.
    """
    if not 0.0 < alpha < 1.0:
        raise LevelOutOfRange(f"alpha must be in (0, 1), got {alpha}")
    scores = ScoreMatrix(_as_score_rows(score_fn(outputs, targets)))
    n = scores.n
    count = guarded_ceil((n + 1) * alpha, n)
    if count > n:
        raise CalibrationTooSmall(
            f"need ceil((n+1) * alpha) <= n; got {count} > {n} at alpha={alpha}"
        )
    reference = reference_of_kind(reference_kind, n, scores.d, seed)
    rank_map = RankMap.fit(scores, reference, validate=validate)
    beta = (1.0 + 1.0 / n) * alpha
    region = QuantileRegion(rank_map=rank_map, threshold_count=count, nominal_level=beta)
    return MarginalPredictor(score_fn=score_fn, region=region, alpha=alpha)


def predict_region_membership(pred: MarginalPredictor, output, target) -> bool:
    return pred.membership(output, target)


@dataclass(frozen=True)
class ConditionalPredictor:
    """Lazy conditional engine: per query, rank the k nearest neighbors'
    scores against a fresh spherical reference seeded from the query."""

    features: np.ndarray
    scores: ScoreMatrix
    k: int
    alpha: float
    seed: int
    feature_center: np.ndarray
    feature_scale: np.ndarray

    @property
    def n(self) -> int:
        return self.scores.n

    def neighbor_indices(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.features.shape[1]:
            raise DimensionMismatch(
                f"query has {x.shape[0]} features, calibration has {self.features.shape[1]}"
            )
        z = (self.features - self.feature_center) / self.feature_scale
        q = (x - self.feature_center) / self.feature_scale
        dist = np.einsum("ij,ij->i", z - q, z - q)
        order = np.argsort(dist, kind="stable")  # distance ties break by index
        return order[: self.k]

    def region_at(self, x: np.ndarray, validate: bool | None = None) -> QuantileRegion:
        return conditional_region(self, x, validate=validate)

    def membership(self, x, output, target, score_fn: Callable) -> bool:
        s = np.asarray(score_fn(output, target), dtype=np.float64)
        return self.region_at(x).contains(s)


def fit_conditional(
    features: np.ndarray,
    scores: ScoreMatrix | np.ndarray,
    k: int,
    alpha: float,
    seed: int = 0,
    standardize: bool = True,
) -> ConditionalPredictor:
    """Store calibration data for per-query transport fits.

    Neighbor distances are Euclidean on features standardized by the
    calibration mean and standard deviation unless standardize is False.
    Raises NeighborCountTooSmall when ceil((k + 1) * alpha) > k.
    """
    if not isinstance(scores, ScoreMatrix):
        scores = ScoreMatrix(_as_score_rows(scores))
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    if feats.ndim != 2 or feats.shape[0] != scores.n:
        raise DimensionMismatch(
            f"features shape {feats.shape} does not match {scores.n} scores"
        )
    if not 1 <= k <= scores.n:
        raise NeighborCountTooSmall(f"k must be in [1, {scores.n}], got {k}")
    count = guarded_ceil((k + 1) * alpha, k)
    if count > k:
        raise NeighborCountTooSmall(
            f"need ceil((k+1) * alpha) <= k; got {count} > {k} at alpha={alpha}"
        )
    if standardize:
        center = feats.mean(axis=0)
        scale = feats.std(axis=0)
        scale[scale == 0.0] = 1.0
    else:
        center = np.zeros(feats.shape[1])
        scale = np.ones(feats.shape[1])
    feats = feats.copy()
    feats.setflags(write=False)
    center.setflags(write=False)
    scale.setflags(write=False)
    return ConditionalPredictor(
        features=feats,
        scores=scores,
        k=int(k),
        alpha=float(alpha),
        seed=int(seed),
        feature_center=center,
        feature_scale=scale,
    )


def conditional_region(
    pred: ConditionalPredictor, x: np.ndarray, validate: bool | None = None
) -> QuantileRegion:
    """Solve the neighbor transport problem for query x.

    The reference is regenerated from a seed derived from the predictor
    seed and the query bytes, keeping it independent of the scores while
    making repeated queries reproducible.
    """
    idx = pred.neighbor_indices(x)
    neighbor_scores = ScoreMatrix(pred.scores.points[idx])
    qseed = derive_seed(pred.seed, np.ascontiguousarray(x, dtype=np.float64).tobytes())
    reference = spherical_reference(pred.k, pred.scores.d, qseed)
    rank_map = RankMap.fit(neighbor_scores, reference, validate=validate)
    count = guarded_ceil((pred.k + 1) * pred.alpha, pred.k)
    beta = (1.0 + 1.0 / pred.k) * pred.alpha
    return QuantileRegion(rank_map=rank_map, threshold_count=count, nominal_level=beta)
