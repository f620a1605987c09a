"""Versioned JSON persistence for fitted predictors.

Artifacts store everything needed to reproduce membership decisions
bit-exactly: calibration scores, the matching permutation, potentials,
thresholds, and the reference seed/kind (reference vectors are
regenerated from the seed on load). Floats survive the round trip
exactly because json emits shortest round-trip decimal forms.
"""

import hashlib
import json
import os
import tempfile
from datetime import datetime, timezone

import numpy as np

from .engine import ConditionalPredictor, MarginalPredictor, QuantileRegion, fit_conditional
from .errors import MalformedData
from .references import reference_of_kind
from .scores import (
    AbsOneHot,
    AdaptiveEllipsoidRegion,
    BallRegion,
    EllipsoidRegion,
    HyperrectRegion,
    ScalarClassifierRegion,
    SignedResidual,
)
from .transport import Assignment, DualPotentials, RankMap, ScoreMatrix

FORMAT = "otcp-artifact"
VERSION = 1


def _tolist(a) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file and rename so failures leave no partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def provenance(input_path: str | None) -> dict:
    out = {
        "created": datetime.now(timezone.utc).isoformat(),
        "numpy": np.__version__,
    }
    if input_path is not None:
        out["input_file"] = os.path.basename(input_path)
        out["input_sha256"] = file_sha256(input_path)
    return out


def _marginal_payload(pred: MarginalPredictor) -> dict:
    region = pred.region
    rm = region.rank_map
    payload = {
        "score": pred.score_fn.kind,
        "reference": {
            "kind": rm.reference.kind,
            "seed": rm.reference.seed,
            "n": rm.reference.n,
            "d": rm.reference.d,
        },
        "scores": _tolist(rm.scores.points),
        "permutation": [int(j) for j in rm.assignment.permutation],
        "total_cost": float(rm.assignment.total_cost),
        "psi": _tolist(rm.duals.psi),
        "psi_star": _tolist(rm.duals.psi_star),
        "threshold_count": region.threshold_count,
        "nominal_level": region.nominal_level,
    }
    if isinstance(pred.score_fn, AbsOneHot):
        payload["n_classes"] = pred.score_fn.n_classes
    return payload


def _load_marginal(payload: dict, alpha: float) -> MarginalPredictor:
    ref = payload["reference"]
    reference = reference_of_kind(ref["kind"], ref["n"], ref["d"], ref["seed"])
    scores = ScoreMatrix(np.asarray(payload["scores"], dtype=np.float64))
    perm = np.asarray(payload["permutation"], dtype=np.intp)
    assignment = Assignment(permutation=perm, total_cost=float(payload["total_cost"]))
    duals = DualPotentials(
        psi=np.asarray(payload["psi"], dtype=np.float64),
        psi_star=np.asarray(payload["psi_star"], dtype=np.float64),
    )
    rank_map = RankMap(scores=scores, reference=reference, assignment=assignment, duals=duals)
    region = QuantileRegion(
        rank_map=rank_map,
        threshold_count=int(payload["threshold_count"]),
        nominal_level=float(payload["nominal_level"]),
    )
    if payload["score"] == "abs-onehot":
        score_fn = AbsOneHot(n_classes=int(payload["n_classes"]))
    elif payload["score"] == "residual":
        score_fn = SignedResidual()
    else:
        raise MalformedData(f"unknown score kind {payload['score']!r}")
    return MarginalPredictor(score_fn=score_fn, region=region, alpha=alpha)


def _conditional_payload(pred: ConditionalPredictor) -> dict:
    return {
        "k": pred.k,
        "seed": pred.seed,
        "features": _tolist(pred.features),
        "scores": _tolist(pred.scores.points),
        "feature_center": _tolist(pred.feature_center),
        "feature_scale": _tolist(pred.feature_scale),
    }


def _load_conditional(payload: dict, alpha: float) -> ConditionalPredictor:
    pred = fit_conditional(
        features=np.asarray(payload["features"], dtype=np.float64),
        scores=np.asarray(payload["scores"], dtype=np.float64),
        k=int(payload["k"]),
        alpha=alpha,
        seed=int(payload["seed"]),
        standardize=False,
    )
    center = np.asarray(payload["feature_center"], dtype=np.float64)
    scale = np.asarray(payload["feature_scale"], dtype=np.float64)
    center.setflags(write=False)
    scale.setflags(write=False)
    return ConditionalPredictor(
        features=pred.features,
        scores=pred.scores,
        k=pred.k,
        alpha=pred.alpha,
        seed=pred.seed,
        feature_center=center,
        feature_scale=scale,
    )


_BASELINE_SAVERS = {
    "ball": lambda b: {"radius": b.radius},
    "rect": lambda b: {"lower": _tolist(b.lower), "upper": _tolist(b.upper)},
    "ellipsoid": lambda b: {
        "center": _tolist(b.center),
        "covariance": _tolist(b.covariance),
        "radius": b.radius,
    },
    "adaptive-ellipsoid": lambda b: {
        "features": _tolist(b.features),
        "residuals": _tolist(b.residuals),
        "k": b.k,
        "radius": b.radius,
        "shrinkage": b.shrinkage,
        "feature_center": _tolist(b.feature_center),
        "feature_scale": _tolist(b.feature_scale),
    },
}


def _load_baseline(method: str, payload: dict):
    arr = lambda key: np.asarray(payload[key], dtype=np.float64)
    if method == "ball":
        return BallRegion(radius=float(payload["radius"]))
    if method == "rect":
        return HyperrectRegion(lower=arr("lower"), upper=arr("upper"))
    if method == "ellipsoid":
        return EllipsoidRegion(
            center=arr("center"), covariance=arr("covariance"), radius=float(payload["radius"])
        )
    if method == "adaptive-ellipsoid":
        return AdaptiveEllipsoidRegion(
            features=arr("features"),
            residuals=arr("residuals"),
            k=int(payload["k"]),
            radius=float(payload["radius"]),
            shrinkage=float(payload["shrinkage"]),
            feature_center=arr("feature_center"),
            feature_scale=arr("feature_scale"),
        )
    raise MalformedData(f"unknown method {method!r}")


def save_artifact(path: str, method: str, alpha: float, fitted, input_path=None) -> None:
    if isinstance(fitted, MarginalPredictor):
        payload = _marginal_payload(fitted)
    elif isinstance(fitted, ConditionalPredictor):
        payload = _conditional_payload(fitted)
    elif isinstance(fitted, ScalarClassifierRegion):
        payload = {
            "threshold": fitted.threshold,
            "randomize": fitted.randomize,
        }
    elif method in _BASELINE_SAVERS:
        payload = _BASELINE_SAVERS[method](fitted)
    else:
        raise MalformedData(f"cannot serialize method {method!r}")
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "method": method,
        "alpha": alpha,
        "payload": payload,
        "provenance": provenance(input_path),
    }
    atomic_write_text(path, json.dumps(doc, indent=1))


def load_artifact(path: str):
    """Returns (method, alpha, fitted object)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedData(f"cannot read artifact {path}: {exc}") from exc
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise MalformedData(
            f"unsupported artifact format {doc.get('format')!r} version {doc.get('version')!r}"
        )
    method = doc["method"]
    alpha = float(doc["alpha"])
    payload = doc["payload"]
    if method == "otcp":
        return method, alpha, _load_marginal(payload, alpha)
    if method == "otcp-plus":
        return method, alpha, _load_conditional(payload, alpha)
    if method in ("ip", "ms", "aps"):
        return method, alpha, ScalarClassifierRegion(
            kind=method,
            threshold=float(payload["threshold"]),
            randomize=bool(payload.get("randomize", False)),
        )
    return method, alpha, _load_baseline(method, payload)
