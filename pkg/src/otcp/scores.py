"""Score functions and baseline conformal region fits.

The library never trains models; prediction outputs (regression means or
class probability vectors) arrive as data. Labels are 1-based in every
public signature. Scalar quantiles follow the split-conformal
convention: the ceil((n + 1) * alpha)-th order statistic.
"""

from dataclasses import dataclass

import numpy as np

from ._common import guarded_ceil
from .errors import (
    CalibrationTooSmall,
    DimensionMismatch,
    InvalidLabel,
    InvalidProbability,
    SingularCovariance,
)

PROB_TOL = 1e-6

_COV_SHRINKAGE = 1e-6


def signed_residual(y: np.ndarray, fhat: np.ndarray) -> np.ndarray:
    """Componentwise y - fhat; accepts single vectors or (n, d) batches."""
    y = np.asarray(y, dtype=np.float64)
    fhat = np.asarray(fhat, dtype=np.float64)
    if y.shape != fhat.shape:
        raise DimensionMismatch(f"y shape {y.shape} vs prediction shape {fhat.shape}")
    return y - fhat


@dataclass(frozen=True)
class SignedResidual:
    """Multivariate regression score s = y - fhat."""

    kind = "residual"

    def __call__(self, fhat, y):
        return signed_residual(y, fhat)


def normalize_probs(probs: np.ndarray, tol: float = PROB_TOL) -> np.ndarray:
    """Renormalize rows that are within tol of the probability simplex.

    Softmax dumps carry rounding noise; anything further off than tol is
    rejected rather than silently fixed.
    """
    p = np.asarray(probs, dtype=np.float64)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[None, :]
    if np.any(p < -tol):
        raise InvalidProbability(f"negative probability below -{tol}")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > tol):
        raise InvalidProbability(f"row mass differs from 1 by more than {tol}")
    p = np.clip(p, 0.0, None)
    p = p / p.sum(axis=1, keepdims=True)
    return p[0] if squeeze else p


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    lab = np.asarray(labels)
    if not np.issubdtype(lab.dtype, np.integer):
        as_int = lab.astype(np.int64)
        if np.any(as_int != lab):
            raise InvalidLabel("labels must be integers in {1..K}")
        lab = as_int
    if np.any(lab < 1) or np.any(lab > n_classes):
        raise InvalidLabel(f"labels must lie in 1..{n_classes}")
    return lab.astype(np.intp)


def abs_onehot_score(y, probs: np.ndarray) -> np.ndarray:
    """Componentwise |one_hot(y) - probs|, a K-dimensional score whose
    l1 norm equals 2 * (1 - probs[y])."""
    p = normalize_probs(probs)
    if p.ndim == 1:
        lab = int(_check_labels(np.asarray([y]), p.shape[0])[0])
        s = p.copy()
        s[lab - 1] = 1.0 - p[lab - 1]
        return np.abs(s)
    lab = _check_labels(y, p.shape[1])
    s = p.copy()
    rows = np.arange(p.shape[0])
    s[rows, lab - 1] = 1.0 - p[rows, lab - 1]
    return np.abs(s)


@dataclass(frozen=True)
class AbsOneHot:
    """Classification score s = |one_hot(y) - probs| over K classes."""

    n_classes: int
    kind = "abs-onehot"

    def __call__(self, probs, labels):
        return abs_onehot_score(labels, probs)

    def candidate_scores(self, prob_row: np.ndarray) -> np.ndarray:
        """Scores of all K one-hot candidates for one probability row."""
        p = normalize_probs(prob_row)
        if p.shape[0] != self.n_classes:
            raise DimensionMismatch(
                f"expected {self.n_classes} probabilities, got {p.shape[0]}"
            )
        return np.abs(np.eye(self.n_classes) - p[None, :])


def ip_score(y, probs: np.ndarray) -> np.ndarray | float:
    """Inverse probability score 1 - probs[y], in [0, 1]."""
    p = normalize_probs(probs)
    if p.ndim == 1:
        lab = int(_check_labels(np.asarray([y]), p.shape[0])[0])
        return float(1.0 - p[lab - 1])
    lab = _check_labels(y, p.shape[1])
    return 1.0 - p[np.arange(p.shape[0]), lab - 1]


def ms_score(y, probs: np.ndarray) -> np.ndarray | float:
    """Margin score max_{y' != y} probs[y'] - probs[y], in [-1, 1]."""
    p = normalize_probs(probs)
    if p.ndim == 1:
        lab = int(_check_labels(np.asarray([y]), p.shape[0])[0])
        rest = np.delete(p, lab - 1)
        return float(rest.max() - p[lab - 1])
    lab = _check_labels(y, p.shape[1])
    rows = np.arange(p.shape[0])
    own = p[rows, lab - 1]
    masked = p.copy()
    masked[rows, lab - 1] = -np.inf
    return masked.max(axis=1) - own


def aps_score(y, probs: np.ndarray, randomize: bool = False, rng=None):
    """Cumulative sorted probability mass down to and including class y.

    Deterministic by default; with randomize=True a uniform share of the
    own-class mass is subtracted, giving the randomized variant.
    """
    p = normalize_probs(probs)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[None, :]
        y = np.asarray([y])
    lab = _check_labels(y, p.shape[1])
    order = np.argsort(-p, axis=1, kind="stable")
    sorted_p = np.take_along_axis(p, order, axis=1)
    cum = np.cumsum(sorted_p, axis=1)
    pos = np.argmax(order == (lab - 1)[:, None], axis=1)
    rows = np.arange(p.shape[0])
    s = cum[rows, pos]
    if randomize:
        if rng is None:
            raise ValueError("randomize=True requires an rng")
        s = s - rng.uniform(size=p.shape[0]) * sorted_p[rows, pos]
    return float(s[0]) if squeeze else s


_SCALAR_SCORES = {"ip": ip_score, "ms": ms_score, "aps": aps_score}


def scalar_quantile(values: np.ndarray, alpha: float) -> float:
    """Split-conformal upper quantile: the ceil((n + 1) * alpha)-th order
    statistic of values."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    k = guarded_ceil((n + 1) * alpha, n)
    if k > n:
        raise CalibrationTooSmall(f"need ceil((n+1) * alpha) <= n; got {k} > {n}")
    if k < 1:
        raise CalibrationTooSmall(f"alpha={alpha} selects order statistic {k}")
    return float(np.sort(values, kind="stable")[k - 1])


@dataclass(frozen=True)
class ScalarClassifierRegion:
    """Split-conformal label sets {y : score(y, probs) <= threshold}."""

    kind: str
    threshold: float
    randomize: bool = False

    def label_sets(self, probs: np.ndarray, rng=None) -> np.ndarray:
        p = normalize_probs(probs)
        if p.ndim == 1:
            p = p[None, :]
        n, k = p.shape
        out = np.empty((n, k), dtype=bool)
        for c in range(1, k + 1):
            labels = np.full(n, c)
            if self.kind == "aps":
                s = aps_score(labels, p, randomize=self.randomize, rng=rng)
            else:
                s = _SCALAR_SCORES[self.kind](labels, p)
            out[:, c - 1] = s <= self.threshold
        return out


def fit_scalar_classifier(
    kind: str, probs: np.ndarray, labels, alpha: float, randomize: bool = False, rng=None
):
    if kind not in _SCALAR_SCORES:
        raise ValueError(f"unknown scalar score {kind!r}")
    p = normalize_probs(probs)
    if kind == "aps":
        scores = aps_score(labels, p, randomize=randomize, rng=rng)
    else:
        scores = _SCALAR_SCORES[kind](labels, p)
    return ScalarClassifierRegion(
        kind=kind, threshold=scalar_quantile(scores, alpha), randomize=randomize
    )


@dataclass(frozen=True)
class BallRegion:
    """Euclidean ball of residuals around the prediction."""

    kind = "ball"
    radius: float

    def contains(self, residuals: np.ndarray) -> np.ndarray:
        r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
        return np.linalg.norm(r, axis=1) <= self.radius


@dataclass(frozen=True)
class HyperrectRegion:
    """Per-dimension equal-tailed intervals with Bonferroni allocation."""

    kind = "rect"
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, residuals: np.ndarray) -> np.ndarray:
        r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
        return np.all((r >= self.lower) & (r <= self.upper), axis=1)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))


@dataclass(frozen=True)
class EllipsoidRegion:
    """Mahalanobis ball of residuals: d_M(s) <= radius."""

    kind = "ellipsoid"
    center: np.ndarray
    covariance: np.ndarray
    radius: float

    def mahalanobis(self, residuals: np.ndarray) -> np.ndarray:
        r = np.atleast_2d(np.asarray(residuals, dtype=np.float64)) - self.center
        solved = np.linalg.solve(self.covariance, r.T).T
        return np.sqrt(np.einsum("ij,ij->i", r, solved))

    def contains(self, residuals: np.ndarray) -> np.ndarray:
        return self.mahalanobis(residuals) <= self.radius


@dataclass(frozen=True)
class AdaptiveEllipsoidRegion:
    """Per-query Mahalanobis region with covariance re-estimated from the
    k nearest calibration features."""

    kind = "adaptive-ellipsoid"
    features: np.ndarray
    residuals: np.ndarray
    k: int
    radius: float
    shrinkage: float
    feature_center: np.ndarray
    feature_scale: np.ndarray

    def _local(self, x: np.ndarray, exclude: int | None = None):
        z = (self.features - self.feature_center) / self.feature_scale
        q = (np.asarray(x, dtype=np.float64).reshape(-1) - self.feature_center)
        q = q / self.feature_scale
        dist = np.einsum("ij,ij->i", z - q, z - q)
        if exclude is not None:
            dist[exclude] = np.inf
        order = np.argsort(dist, kind="stable")[: self.k]
        local = self.residuals[order]
        return local.mean(axis=0), _shrunk_covariance(local, self.shrinkage)

    def mahalanobis(self, x: np.ndarray, residual: np.ndarray, exclude=None) -> float:
        center, cov = self._local(x, exclude=exclude)
        r = np.asarray(residual, dtype=np.float64).reshape(-1) - center
        return float(np.sqrt(r @ np.linalg.solve(cov, r)))

    def contains(self, x: np.ndarray, residual: np.ndarray) -> bool:
        return self.mahalanobis(x, residual) <= self.radius


def _shrunk_covariance(rows: np.ndarray, shrinkage: float) -> np.ndarray:
    rows = np.atleast_2d(rows)
    d = rows.shape[1]
    centered = rows - rows.mean(axis=0)
    denom = max(rows.shape[0] - 1, 1)
    cov = (centered.T @ centered) / denom
    if shrinkage > 0.0:
        cov = cov + (shrinkage * np.trace(cov) / d) * np.eye(d)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise SingularCovariance("covariance is singular after regularization") from None
    return cov


def fit_ball(residuals: np.ndarray, alpha: float) -> BallRegion:
    r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    return BallRegion(radius=scalar_quantile(np.linalg.norm(r, axis=1), alpha))


def fit_hyperrect(residuals: np.ndarray, alpha: float) -> HyperrectRegion:
    """Equal-tailed per-dimension split intervals at miscoverage
    (1 - alpha) / d per dimension."""
    r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    n, d = r.shape
    miss = (1.0 - alpha) / d
    lo_k = int(np.floor((n + 1) * (miss / 2.0)))
    hi_k = guarded_ceil((n + 1) * (1.0 - miss / 2.0), n)
    if lo_k < 1 or hi_k > n:
        raise CalibrationTooSmall(
            f"n={n} cannot support per-dimension miscoverage {miss} at alpha={alpha}"
        )
    s = np.sort(r, axis=0, kind="stable")
    lower = s[lo_k - 1].copy()
    upper = s[hi_k - 1].copy()
    lower.setflags(write=False)
    upper.setflags(write=False)
    return HyperrectRegion(lower=lower, upper=upper)


def fit_ellipsoid(
    residuals: np.ndarray, alpha: float, shrinkage: float = _COV_SHRINKAGE
) -> EllipsoidRegion:
    r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    center = r.mean(axis=0)
    cov = _shrunk_covariance(r, shrinkage)
    center.setflags(write=False)
    cov.setflags(write=False)
    region = EllipsoidRegion(center=center, covariance=cov, radius=np.inf)
    d_m = region.mahalanobis(r)
    return EllipsoidRegion(center=center, covariance=cov, radius=scalar_quantile(d_m, alpha))


def fit_adaptive_ellipsoid(
    features: np.ndarray,
    residuals: np.ndarray,
    alpha: float,
    k: int,
    shrinkage: float = _COV_SHRINKAGE,
    standardize: bool = True,
) -> AdaptiveEllipsoidRegion:
    """Local-covariance Mahalanobis baseline; each calibration point is
    scored with its own point left out so calibration matches the view a
    test query gets."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    r = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    n = r.shape[0]
    if feats.shape[0] != n:
        raise DimensionMismatch(f"{feats.shape[0]} features vs {n} residuals")
    if not 1 <= k <= n - 1:
        raise CalibrationTooSmall(f"k must be in [1, {n - 1}], got {k}")
    if standardize:
        center = feats.mean(axis=0)
        scale = feats.std(axis=0)
        scale[scale == 0.0] = 1.0
    else:
        center = np.zeros(feats.shape[1])
        scale = np.ones(feats.shape[1])
    region = AdaptiveEllipsoidRegion(
        features=feats,
        residuals=r,
        k=int(k),
        radius=np.inf,
        shrinkage=float(shrinkage),
        feature_center=center,
        feature_scale=scale,
    )
    d_m = np.array([region.mahalanobis(feats[i], r[i], exclude=i) for i in range(n)])
    return AdaptiveEllipsoidRegion(
        features=feats,
        residuals=r,
        k=int(k),
        radius=scalar_quantile(d_m, alpha),
        shrinkage=float(shrinkage),
        feature_center=center,
        feature_scale=scale,
    )


def fit_baseline(kind: str, residuals=None, alpha=None, features=None, k=None, **opts):
    """Dispatch to the baseline fit for method id kind."""
    if kind == "ball":
        return fit_ball(residuals, alpha)
    if kind == "rect":
        return fit_hyperrect(residuals, alpha)
    if kind == "ellipsoid":
        return fit_ellipsoid(residuals, alpha, **opts)
    if kind == "adaptive-ellipsoid":
        return fit_adaptive_ellipsoid(features, residuals, alpha, k, **opts)
    raise ValueError(f"unknown baseline kind {kind!r}")
