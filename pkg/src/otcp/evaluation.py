"""Synthetic scenarios and the evaluation metric suite.

Generators cover the three desk-scale scenarios: a bivariate regression
problem whose residual is a three-component Gaussian mixture, its
heteroscedastic variant where the residual scales with sqrt(x), and a
Gaussian-mixture classification problem with exact posterior
probabilities standing in for a trained classifier. Metrics are
deterministic given their seed; accumulation happens in fixed index
order so results do not depend on execution interleaving.
"""

from dataclasses import dataclass, field

import numpy as np

from ._common import make_rng
from .errors import DegenerateBox, EmptyTestSet, InvalidDimension, TooFewTestPoints

MIXTURE_WEIGHTS = np.array([0.375, 0.375, 0.25])
MIXTURE_MEANS = np.array([[5.0, 0.0], [-5.0, 0.0], [0.0, 0.0]])
MIXTURE_COVS = np.array(
    [
        [[4.0, -3.0], [-3.0, 4.0]],
        [[4.0, 3.0], [3.0, 4.0]],
        [[3.0, 0.0], [0.0, 1.0]],
    ]
)

# Declared artifact defaults for the classification scenario; any
# moderately separated mixture exercises the same qualitative behavior.
GMM_DEFAULT_MEANS = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])


def predictor_mean(x: np.ndarray) -> np.ndarray:
    """Closed-form pre-trained regressor (2 x^2, (x + 1)^2)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return np.column_stack([2.0 * x**2, (x + 1.0) ** 2])


@dataclass(frozen=True)
class RegressionData:
    """Inputs, black-box predictions and responses, one row per sample."""

    x: np.ndarray
    fhat: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def residuals(self) -> np.ndarray:
        return self.y - self.fhat


@dataclass(frozen=True)
class ClassificationData:
    """Inputs, class probability vectors and 1-based labels."""

    x: np.ndarray
    probs: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


def sample_residual_mixture(rng: np.random.Generator, n: int) -> np.ndarray:
    """Three-component bivariate Gaussian mixture used as the regression
    residual distribution."""
    comp = rng.choice(3, size=n, p=MIXTURE_WEIGHTS)
    z = rng.standard_normal((n, 2))
    out = np.empty((n, 2))
    for c in range(3):
        mask = comp == c
        chol = np.linalg.cholesky(MIXTURE_COVS[c])
        out[mask] = MIXTURE_MEANS[c] + z[mask] @ chol.T
    return out


def _check_sizes(n_cal: int, n_test: int) -> None:
    if n_cal < 1 or n_test < 1:
        raise InvalidDimension(f"sizes must be >= 1, got n_cal={n_cal}, n_test={n_test}")


def _regression(rng, n, heteroscedastic):
    x = rng.uniform(0.0, 2.0, size=n)
    zeta = sample_residual_mixture(rng, n)
    res = np.sqrt(x)[:, None] * zeta if heteroscedastic else zeta
    fhat = predictor_mean(x)
    return RegressionData(x=x[:, None], fhat=fhat, y=fhat + res)


def generate_mixture_regression(n_cal: int, n_test: int, seed: int):
    """x ~ Unif[0, 2]; y = fhat(x) + zeta with the mixture residual."""
    _check_sizes(n_cal, n_test)
    rng = make_rng(seed)
    return _regression(rng, n_cal, False), _regression(rng, n_test, False)


def generate_heteroscedastic(n_cal: int, n_test: int, seed: int):
    """Same scenario with residual sqrt(x) * zeta, so spread grows with x."""
    _check_sizes(n_cal, n_test)
    rng = make_rng(seed)
    return _regression(rng, n_cal, True), _regression(rng, n_test, True)


def gmm_posterior(x: np.ndarray, means: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Exact posterior class probabilities for an identity-covariance
    Gaussian mixture."""
    sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    logp = np.log(weights)[None, :] - 0.5 * sq
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def generate_gmm_classification(
    n_cal: int,
    n_test: int,
    n_classes: int = 3,
    seed: int = 0,
    means: np.ndarray | None = None,
    weights: np.ndarray | None = None,
):
    """Gaussian-mixture classification data with exact posteriors as the
    black-box probabilities.

    Defaults: three identity-covariance components at (0,0), (3,0), (0,3)
    with equal weights; for K > 3 the means sit on a circle of radius 3.
    """
    _check_sizes(n_cal, n_test)
    if n_classes < 3:
        raise InvalidDimension(f"need at least 3 classes, got {n_classes}")
    if means is None:
        if n_classes == 3:
            means = GMM_DEFAULT_MEANS
        else:
            angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
            means = 3.0 * np.column_stack([np.cos(angles), np.sin(angles)])
    means = np.asarray(means, dtype=np.float64)
    if weights is None:
        weights = np.full(n_classes, 1.0 / n_classes)
    weights = np.asarray(weights, dtype=np.float64)
    rng = make_rng(seed)

    def draw(n):
        comp = rng.choice(n_classes, size=n, p=weights)
        x = means[comp] + rng.standard_normal((n, means.shape[1]))
        probs = gmm_posterior(x, means, weights)
        return ClassificationData(x=x, probs=probs, labels=comp + 1)

    return draw(n_cal), draw(n_test)


def marginal_coverage(membership: np.ndarray) -> float:
    """Fraction of test points whose true output was a member."""
    m = np.asarray(membership, dtype=bool)
    if m.size == 0:
        raise EmptyTestSet("no membership results")
    return float(m.mean())


def binned_coverage(
    x: np.ndarray, membership: np.ndarray, n_bins: int = 4, lo: float = 0.0, hi: float = 2.0
) -> np.ndarray:
    """Per-bin coverage over equal-width bins of [lo, hi]."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    m = np.asarray(membership, dtype=bool)
    if x.size == 0:
        raise EmptyTestSet("no test points")
    edges = np.linspace(lo, hi, n_bins + 1)
    which = np.clip(np.digitize(x, edges[1:-1]), 0, n_bins - 1)
    out = np.empty(n_bins)
    for b in range(n_bins):
        sel = which == b
        out[b] = m[sel].mean() if sel.any() else np.nan
    return out


@dataclass(frozen=True)
class WorstSetResult:
    coverage: float
    per_region: np.ndarray
    overlap_fraction: float


def worst_set_coverage(
    features: np.ndarray,
    membership: np.ndarray,
    n_regions: int = 5,
    fraction: float = 0.10,
    seed: int = 0,
    return_details: bool = False,
):
    """Minimum coverage over regions built from random centroids plus a
    nearest-neighbor fill of fraction * n_test points each.

    Regions may overlap; the overlap fraction (duplicate share of all
    region slots) is reported in the detailed result.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    m = np.asarray(membership, dtype=bool)
    n = feats.shape[0]
    if n == 0:
        raise EmptyTestSet("no test points")
    if n_regions * fraction > 1.0 + 1e-12:
        raise TooFewTestPoints(f"{n_regions} regions of {fraction:.0%} exceed the test set")
    size = int(np.ceil(fraction * n))
    if size < 1 or n_regions > n:
        raise TooFewTestPoints(f"cannot draw {n_regions} regions of {size} from {n} points")
    rng = make_rng(seed)
    centroids = rng.choice(n, size=n_regions, replace=False)
    per_region = np.empty(n_regions)
    seen = np.zeros(n, dtype=bool)
    for r, c in enumerate(centroids):
        dist = np.einsum("ij,ij->i", feats - feats[c], feats - feats[c])
        order = np.argsort(dist, kind="stable")[:size]
        per_region[r] = m[order].mean()
        seen[order] = True
    overlap = 1.0 - float(seen.sum()) / (n_regions * size)
    result = WorstSetResult(
        coverage=float(per_region.min()),
        per_region=per_region,
        overlap_fraction=overlap,
    )
    return result if return_details else result.coverage


def worst_slab_coverage(
    features: np.ndarray,
    membership: np.ndarray,
    n_directions: int = 1000,
    n_thresholds: int = 50,
    min_mass: float = 0.1,
    seed: int = 0,
) -> float:
    """Minimum coverage over 1-D projection slabs holding at least
    min_mass of the test points; thresholds sit on a quantile grid."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    m = np.asarray(membership, dtype=float)
    n, d = feats.shape
    if n == 0:
        raise EmptyTestSet("no test points")
    rng = make_rng(seed)
    worst = 1.0
    grid = np.linspace(0, n - 1, n_thresholds).round().astype(int)
    min_count = int(np.ceil(min_mass * n))
    for _ in range(n_directions):
        g = rng.standard_normal(d)
        g /= max(np.linalg.norm(g), 1e-300)
        z = feats @ g
        order = np.argsort(z, kind="stable")
        cum = np.concatenate([[0.0], np.cumsum(m[order])])
        for a_pos in range(n_thresholds):
            lo = grid[a_pos]
            hi_candidates = grid[a_pos:]
            counts = hi_candidates - lo + 1
            ok = counts >= min_count
            if not ok.any():
                continue
            covered = cum[hi_candidates[ok] + 1] - cum[lo]
            worst = min(worst, float((covered / counts[ok]).min()))
    return worst


def bounding_box(points: np.ndarray, margin: float = 0.10):
    """Axis-aligned hull of points inflated by margin per side."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = hi - lo
    if np.any(~np.isfinite(span)) or np.any(span <= 0.0):
        raise DegenerateBox(f"degenerate span {span}")
    return lo - margin * span, hi + margin * span


def region_volume_mc(
    contains_batch,
    box_lo: np.ndarray,
    box_hi: np.ndarray,
    n_samples: int,
    seed: int = 0,
    chunk: int = 65536,
):
    """Monte Carlo volume of a membership oracle inside a box.

    Returns (estimate, stderr) where estimate is box volume times member
    fraction and stderr follows the binomial formula. The estimate is the
    box-restricted volume; regions are not probed outside the box.
    """
    lo = np.asarray(box_lo, dtype=np.float64).reshape(-1)
    hi = np.asarray(box_hi, dtype=np.float64).reshape(-1)
    if lo.shape != hi.shape or np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)):
        raise DegenerateBox("box bounds must be finite and share shape")
    if np.any(hi <= lo):
        raise DegenerateBox(f"empty box sides: {hi - lo}")
    vol = float(np.prod(hi - lo))
    rng = make_rng(seed)
    hits = 0
    done = 0
    while done < n_samples:
        take = min(chunk, n_samples - done)
        pts = rng.uniform(size=(take, lo.shape[0])) * (hi - lo) + lo
        hits += int(np.asarray(contains_batch(pts), dtype=bool).sum())
        done += take
    p = hits / n_samples
    estimate = vol * p
    stderr = vol * float(np.sqrt(p * (1.0 - p) / n_samples))
    return estimate, stderr


@dataclass(frozen=True)
class LabelMetrics:
    label: int
    coverage: float
    avg_size: float
    informativeness: float
    count: int


@dataclass(frozen=True)
class SetMetrics:
    coverage: float
    avg_size: float
    informativeness: float
    per_label: list[LabelMetrics]


def classification_set_metrics(sets: np.ndarray, labels: np.ndarray) -> SetMetrics:
    """Coverage, average set size, singleton fraction, and the same
    statistics per true label."""
    s = np.asarray(sets, dtype=bool)
    if s.size == 0:
        raise EmptyTestSet("no prediction sets")
    lab = np.asarray(labels, dtype=np.intp)
    n, k = s.shape
    covered = s[np.arange(n), lab - 1]
    sizes = s.sum(axis=1)
    per_label = []
    for c in range(1, k + 1):
        sel = lab == c
        if not sel.any():
            continue
        per_label.append(
            LabelMetrics(
                label=c,
                coverage=float(covered[sel].mean()),
                avg_size=float(sizes[sel].mean()),
                informativeness=float((sizes[sel] == 1).mean()),
                count=int(sel.sum()),
            )
        )
    return SetMetrics(
        coverage=float(covered.mean()),
        avg_size=float(sizes.mean()),
        informativeness=float((sizes == 1).mean()),
        per_label=per_label,
    )


@dataclass
class MetricReport:
    """Flat report for one method; optional fields stay None when a
    metric does not apply to the method."""

    method: str
    alpha: float
    marginal_coverage: float | None = None
    worst_set_coverage: float | None = None
    worst_set_overlap: float | None = None
    worst_slab_coverage: float | None = None
    volume_estimate: float | None = None
    volume_stderr: float | None = None
    volume_box_restricted: bool = True
    avg_set_size: float | None = None
    informativeness: float | None = None
    per_label: list[LabelMetrics] = field(default_factory=list)
    per_bin_coverage: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "alpha": self.alpha,
            "marginal_coverage": self.marginal_coverage,
            "worst_set_coverage": self.worst_set_coverage,
            "worst_set_overlap": self.worst_set_overlap,
            "worst_slab_coverage": self.worst_slab_coverage,
            "volume_estimate": self.volume_estimate,
            "volume_stderr": self.volume_stderr,
            "volume_box_restricted": self.volume_box_restricted,
            "avg_set_size": self.avg_set_size,
            "informativeness": self.informativeness,
            "per_bin_coverage": list(self.per_bin_coverage),
            "per_label": [
                {
                    "label": lm.label,
                    "coverage": lm.coverage,
                    "avg_size": lm.avg_size,
                    "informativeness": lm.informativeness,
                    "count": lm.count,
                }
                for lm in self.per_label
            ],
        }
        return out
