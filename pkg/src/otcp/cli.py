"""Command-line front end: simulate, calibrate, predict, evaluate.

Human-readable progress goes to stderr; machine output goes to files and
stdout only. Every command requires --seed (an integer, or the literal
'random' to draw one, which is then reported on stderr). Exit codes:
2 invalid configuration, 3 I/O failure, 4 calibration too small,
5 malformed data, 6 dimension mismatch.
"""

import argparse
import json
import math
import sys

import numpy as np

from . import dataio
from ._common import make_rng
from .artifact import atomic_write_text, load_artifact, save_artifact
from .engine import ConditionalPredictor, MarginalPredictor, fit_conditional, fit_marginal
from .errors import (
    CalibrationTooSmall,
    DimensionMismatch,
    InvalidLabel,
    InvalidProbability,
    MalformedData,
    NeighborCountTooSmall,
    NonFiniteInput,
    OtcpError,
)
from .evaluation import (
    MetricReport,
    binned_coverage,
    bounding_box,
    classification_set_metrics,
    generate_gmm_classification,
    generate_heteroscedastic,
    generate_mixture_regression,
    marginal_coverage,
    region_volume_mc,
    worst_set_coverage,
    worst_slab_coverage,
)
from .scores import AbsOneHot, ScalarClassifierRegion, SignedResidual, fit_baseline, fit_scalar_classifier

REGRESSION_METHODS = ("otcp", "otcp-plus", "ball", "rect", "ellipsoid", "adaptive-ellipsoid")
CLASSIFICATION_METHODS = ("otcp", "ip", "ms", "aps")
SCENARIOS = ("mixture-regression", "heteroscedastic", "gmm-classification")


class ConfigError(OtcpError):
    """Invalid command-line or config-file value."""


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _parse_seed(raw: str) -> int:
    if raw == "random":
        seed = int(np.random.SeedSequence().entropy) % (1 << 63)
        _log(f"drew seed {seed}")
        return seed
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"--seed must be an integer or 'random', got {raw!r}") from None


def _load_config(path: str) -> dict:
    """key=value lines; '#' starts a comment. Flags override these values."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for ln, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{ln}: expected key=value")
                key, _, value = line.partition("=")
                out[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otcp",
        description="Multivariate conformal prediction with transport ranks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", required=False, default=None,
                       help="integer seed, or 'random' (required)")
        p.add_argument("--config", default=None, help="optional key=value config file")

    p_sim = sub.add_parser("simulate", help="generate a synthetic scenario")
    common(p_sim)
    p_sim.add_argument("--scenario", default=None, choices=SCENARIOS)
    p_sim.add_argument("--n-cal", default="1000")
    p_sim.add_argument("--n-test", default="2000")
    p_sim.add_argument("--classes", default="3")
    p_sim.add_argument("--out", default=None, help="output prefix for _cal.csv/_test.csv")

    p_cal = sub.add_parser("calibrate", help="fit a predictor and save the artifact")
    common(p_cal)
    p_cal.add_argument("--method", default="otcp")
    p_cal.add_argument("--alpha", default="0.9")
    p_cal.add_argument("--score", default=None,
                       choices=("residual", "abs-onehot", "ip", "ms", "aps"))
    p_cal.add_argument("--reference", default=None, choices=("sphere", "orthant"))
    p_cal.add_argument("--k", default=None, help="neighbor count for conditional methods")
    p_cal.add_argument("--in", dest="inp", default=None, help="calibration CSV")
    p_cal.add_argument("--out", default=None, help="artifact JSON path")

    p_pred = sub.add_parser("predict", help="membership / label sets for queries")
    common(p_pred)
    p_pred.add_argument("--artifact", default=None)
    p_pred.add_argument("--in", dest="inp", default=None, help="query CSV")
    p_pred.add_argument("--out", default=None, help="output CSV")

    p_eval = sub.add_parser("evaluate", help="metric reports over calibration/test files")
    common(p_eval)
    p_eval.add_argument("--cal", default=None)
    p_eval.add_argument("--test", default=None)
    p_eval.add_argument("--methods", default=None, help="comma-separated method ids")
    p_eval.add_argument("--alpha", default="0.9")
    p_eval.add_argument("--k", default=None)
    p_eval.add_argument("--volume-samples", default="100000")
    p_eval.add_argument("--out", default=None, help="metrics JSON path")
    p_eval.add_argument("--tables", default=None, help="optional long-format CSV path")

    return parser


def _require(args, name: str):
    value = getattr(args, name)
    if value is None:
        raise ConfigError(f"--{name.replace('_', '-')} is required")
    return value


def _as_int(name: str, raw) -> int:
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"--{name} must be an integer, got {raw!r}") from None


def _as_float(name: str, raw) -> float:
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"--{name} must be a number, got {raw!r}") from None


def cmd_simulate(args) -> int:
    scenario = _require(args, "scenario")
    out = _require(args, "out")
    seed = _parse_seed(_require(args, "seed"))
    n_cal = _as_int("n-cal", args.n_cal)
    n_test = _as_int("n-test", args.n_test)
    if scenario == "mixture-regression":
        cal, test = generate_mixture_regression(n_cal, n_test, seed)
    elif scenario == "heteroscedastic":
        cal, test = generate_heteroscedastic(n_cal, n_test, seed)
    elif scenario == "gmm-classification":
        k = _as_int("classes", args.classes)
        cal, test = generate_gmm_classification(n_cal, n_test, k, seed)
    else:
        raise ConfigError(f"unknown scenario {scenario!r}")
    cal_path, test_path = f"{out}_cal.csv", f"{out}_test.csv"
    if scenario == "gmm-classification":
        dataio.write_classification(cal_path, cal.x, cal.probs, cal.labels)
        dataio.write_classification(test_path, test.x, test.probs, test.labels)
    else:
        dataio.write_regression(cal_path, cal.x, cal.fhat, cal.y)
        dataio.write_regression(test_path, test.x, test.fhat, test.y)
    _log(f"wrote {cal_path} and {test_path}")
    print(json.dumps({"cal_rows": cal.n, "test_rows": test.n, "cal": cal_path, "test": test_path}))
    return 0


def _default_k(n: int) -> int:
    return max(1, math.ceil(0.1 * n))


def cmd_calibrate(args) -> int:
    path = _require(args, "inp")
    out = _require(args, "out")
    seed = _parse_seed(_require(args, "seed"))
    alpha = _as_float("alpha", args.alpha)
    method = args.method
    table = dataio.read_table(path)
    task = dataio.detect_task(table)
    allowed = REGRESSION_METHODS if task == "regression" else CLASSIFICATION_METHODS
    if method not in allowed:
        raise ConfigError(f"method {method!r} does not apply to {task} data")

    conditional_methods = ("otcp-plus", "adaptive-ellipsoid")
    if args.reference is not None and method != "otcp":
        raise ConfigError(f"--reference does not apply to method {method!r}")
    if args.k is not None and method not in conditional_methods:
        raise ConfigError(f"--k does not apply to method {method!r}")

    info: dict = {"method": method, "alpha": alpha, "n": table.n_rows}
    if task == "regression":
        fhat = dataio.require(table, "fhat", path)
        y = dataio.require(table, "y", path)
        if args.score not in (None, "residual"):
            raise ConfigError(f"score {args.score!r} does not apply to regression")
        residuals = y - fhat
        if method == "otcp":
            reference = args.reference or "sphere"
            fitted = fit_marginal(SignedResidual(), fhat, y, alpha, reference, seed)
            info["threshold_count"] = fitted.region.threshold_count
        elif method == "otcp-plus":
            x = dataio.require(table, "x", path)
            k = _as_int("k", args.k) if args.k is not None else _default_k(table.n_rows)
            fitted = fit_conditional(x, residuals, k, alpha, seed)
            info["k"] = k
        elif method == "adaptive-ellipsoid":
            x = dataio.require(table, "x", path)
            k = _as_int("k", args.k) if args.k is not None else _default_k(table.n_rows)
            fitted = fit_baseline(method, residuals, alpha, features=x, k=k)
            info["k"] = k
        else:
            fitted = fit_baseline(method, residuals, alpha)
    else:
        probs = dataio.require(table, "pi", path)
        labels = dataio.require(table, "label", path)
        if method == "otcp":
            if args.score not in (None, "abs-onehot"):
                raise ConfigError("otcp on classification data uses --score abs-onehot")
            reference = args.reference or "orthant"
            fitted = fit_marginal(
                AbsOneHot(n_classes=probs.shape[1]), probs, labels, alpha, reference, seed
            )
            info["threshold_count"] = fitted.region.threshold_count
        else:
            if args.score not in (None, method):
                raise ConfigError(f"--score {args.score!r} conflicts with method {method!r}")
            fitted = fit_scalar_classifier(method, probs, labels, alpha)
            info["threshold"] = fitted.threshold
    save_artifact(out, method, alpha, fitted, input_path=path)
    _log(f"calibrated {method} on {table.n_rows} rows -> {out}")
    print(json.dumps(info))
    return 0


def cmd_predict(args) -> int:
    artifact_path = _require(args, "artifact")
    query_path = _require(args, "inp")
    out = _require(args, "out")
    rng = make_rng(_parse_seed(args.seed))  # only randomized label sets consume it
    method, alpha, fitted = load_artifact(artifact_path)
    table = dataio.read_table(query_path)
    rows = np.arange(1, table.n_rows + 1)

    if isinstance(fitted, MarginalPredictor) and isinstance(fitted.score_fn, SignedResidual):
        fhat = dataio.require(table, "fhat", query_path)
        y = dataio.require(table, "y", query_path)
        _check_dim(fhat.shape[1], fitted.region.d, "fhat")
        member = fitted.membership_batch(fhat, y)
        dataio.write_csv(out, ["row", "member"], [rows, _bools(member)])
    elif isinstance(fitted, MarginalPredictor):
        probs = dataio.require(table, "pi", query_path)
        _check_dim(probs.shape[1], fitted.score_fn.n_classes, "pi")
        sets = fitted.label_sets(probs)
        dataio.write_csv(out, ["row", "label_set"], [rows, _set_strings(sets)])
    elif isinstance(fitted, ConditionalPredictor):
        x = dataio.require(table, "x", query_path)
        fhat = dataio.require(table, "fhat", query_path)
        y = dataio.require(table, "y", query_path)
        _check_dim(x.shape[1], fitted.features.shape[1], "x")
        _check_dim(fhat.shape[1], fitted.scores.d, "fhat")
        residuals = y - fhat
        member = np.empty(table.n_rows, dtype=bool)
        for i in range(table.n_rows):
            member[i] = fitted.region_at(x[i]).contains(residuals[i])
        dataio.write_csv(out, ["row", "member"], [rows, _bools(member)])
    elif isinstance(fitted, ScalarClassifierRegion):
        probs = dataio.require(table, "pi", query_path)
        sets = fitted.label_sets(probs, rng=rng)
        dataio.write_csv(out, ["row", "label_set"], [rows, _set_strings(sets)])
    else:  # residual-space baseline regions
        fhat = dataio.require(table, "fhat", query_path)
        y = dataio.require(table, "y", query_path)
        residuals = y - fhat
        if method == "adaptive-ellipsoid":
            x = dataio.require(table, "x", query_path)
            member = np.array(
                [fitted.contains(x[i], residuals[i]) for i in range(table.n_rows)]
            )
        else:
            _check_dim(residuals.shape[1], fitted_dim(fitted), "y")
            member = fitted.contains(residuals)
        dataio.write_csv(out, ["row", "member"], [rows, _bools(member)])
    _log(f"predicted {table.n_rows} rows -> {out}")
    print(json.dumps({"rows": table.n_rows, "out": out}))
    return 0


def fitted_dim(fitted) -> int:
    if hasattr(fitted, "lower"):
        return fitted.lower.shape[0]
    if hasattr(fitted, "center"):
        return fitted.center.shape[0]
    return -1


def _check_dim(got: int, expected: int, what: str) -> None:
    if expected >= 0 and got != expected:
        raise DimensionMismatch(f"{what} has dimension {got}, artifact expects {expected}")


def _bools(mask) -> list[str]:
    return ["true" if b else "false" for b in mask]


def _set_strings(sets: np.ndarray) -> list[str]:
    return ["|".join(str(j + 1) for j in np.flatnonzero(row)) for row in sets]


def _evaluate_regression(table_cal, table_test, methods, alpha, seed, k_opt, volume_samples):
    fhat_cal = table_cal.array("fhat")
    y_cal = table_cal.array("y")
    fhat_test = table_test.array("fhat")
    y_test = table_test.array("y")
    res_cal = y_cal - fhat_cal
    res_test = y_test - fhat_test
    x_cal = table_cal.array("x") if table_cal.has("x") else None
    x_test = table_test.array("x") if table_test.has("x") else None
    box = bounding_box(res_cal)
    reports = []
    for method in methods:
        _log(f"evaluating {method}")
        report = MetricReport(method=method, alpha=alpha)
        volume_fn = None
        if method == "otcp":
            pred = fit_marginal(SignedResidual(), fhat_cal, y_cal, alpha, "sphere", seed)
            member = pred.membership_batch(fhat_test, y_test)
            volume_fn = pred.region.contains_batch
        elif method == "otcp-plus":
            if x_cal is None or x_test is None:
                raise MalformedData("otcp-plus needs x_* columns")
            k = k_opt or _default_k(res_cal.shape[0])
            pred = fit_conditional(x_cal, res_cal, k, alpha, seed)
            member = np.empty(res_test.shape[0], dtype=bool)
            for i in range(res_test.shape[0]):
                member[i] = pred.region_at(x_test[i]).contains(res_test[i])
        elif method == "adaptive-ellipsoid":
            if x_cal is None or x_test is None:
                raise MalformedData("adaptive-ellipsoid needs x_* columns")
            k = k_opt or _default_k(res_cal.shape[0])
            fitted = fit_baseline(method, res_cal, alpha, features=x_cal, k=k)
            member = np.array(
                [fitted.contains(x_test[i], res_test[i]) for i in range(res_test.shape[0])]
            )
        else:
            fitted = fit_baseline(method, res_cal, alpha)
            member = fitted.contains(res_test)
            volume_fn = fitted.contains
        report.marginal_coverage = marginal_coverage(member)
        if volume_fn is not None:
            est, err = region_volume_mc(volume_fn, box[0], box[1], volume_samples, seed)
            report.volume_estimate = est
            report.volume_stderr = err
        if x_test is not None:
            ws = worst_set_coverage(x_test, member, seed=seed, return_details=True)
            report.worst_set_coverage = ws.coverage
            report.worst_set_overlap = ws.overlap_fraction
            if x_test.shape[1] == 1:
                lo, hi = float(x_test.min()), float(x_test.max())
                report.per_bin_coverage = [
                    float(c) for c in binned_coverage(x_test, member, 4, lo, hi)
                ]
        reports.append(report)
    return reports


def _evaluate_classification(table_cal, table_test, methods, alpha, seed):
    probs_cal = table_cal.array("pi")
    labels_cal = table_cal.array("label")
    probs_test = table_test.array("pi")
    labels_test = table_test.array("label")
    x_test = table_test.array("x") if table_test.has("x") else None
    reports = []
    for method in methods:
        _log(f"evaluating {method}")
        report = MetricReport(method=method, alpha=alpha)
        if method == "otcp":
            pred = fit_marginal(
                AbsOneHot(n_classes=probs_cal.shape[1]), probs_cal, labels_cal,
                alpha, "orthant", seed,
            )
            sets = pred.label_sets(probs_test)
        else:
            fitted = fit_scalar_classifier(method, probs_cal, labels_cal, alpha)
            sets = fitted.label_sets(probs_test)
        metrics = classification_set_metrics(sets, labels_test)
        report.marginal_coverage = metrics.coverage
        report.avg_set_size = metrics.avg_size
        report.informativeness = metrics.informativeness
        report.per_label = metrics.per_label
        if x_test is not None:
            covered = sets[np.arange(sets.shape[0]), labels_test - 1]
            report.worst_slab_coverage = worst_slab_coverage(x_test, covered, seed=seed)
        reports.append(report)
    return reports


def cmd_evaluate(args) -> int:
    cal_path = _require(args, "cal")
    test_path = _require(args, "test")
    out = _require(args, "out")
    seed = _parse_seed(_require(args, "seed"))
    alpha = _as_float("alpha", args.alpha)
    volume_samples = _as_int("volume-samples", args.volume_samples)
    k_opt = _as_int("k", args.k) if args.k is not None else None
    table_cal = dataio.read_table(cal_path)
    table_test = dataio.read_table(test_path)
    task = dataio.detect_task(table_cal)
    if dataio.detect_task(table_test) != task:
        raise MalformedData("calibration and test files have different tasks")
    if args.methods is None:
        methods = list(REGRESSION_METHODS if task == "regression" else CLASSIFICATION_METHODS)
    else:
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    allowed = REGRESSION_METHODS if task == "regression" else CLASSIFICATION_METHODS
    for m in methods:
        if m not in allowed:
            raise ConfigError(f"method {m!r} does not apply to {task} data")
    if task == "regression":
        reports = _evaluate_regression(
            table_cal, table_test, methods, alpha, seed, k_opt, volume_samples
        )
    else:
        reports = _evaluate_classification(table_cal, table_test, methods, alpha, seed)
    doc = {
        "task": task,
        "alpha": alpha,
        "seed": seed,
        "n_cal": table_cal.n_rows,
        "n_test": table_test.n_rows,
        "reports": [r.to_dict() for r in reports],
    }
    atomic_write_text(out, json.dumps(doc, indent=1))
    if args.tables:
        _write_tables(args.tables, reports)
    _log(f"wrote {out}")
    print(json.dumps({"methods": methods, "out": out}))
    return 0


def _write_tables(path: str, reports) -> None:
    header = ["method", "metric", "group", "value", "stderr"]
    rows = []
    for r in reports:
        def add(metric, value, group="", stderr=""):
            if value is not None:
                rows.append((r.method, metric, group, repr(float(value)),
                             repr(float(stderr)) if stderr != "" else ""))
        add("coverage", r.marginal_coverage)
        add("worst_set_coverage", r.worst_set_coverage)
        add("worst_slab_coverage", r.worst_slab_coverage)
        add("volume", r.volume_estimate, stderr=r.volume_stderr if r.volume_stderr else "")
        add("avg_set_size", r.avg_set_size)
        add("informativeness", r.informativeness)
        for b, c in enumerate(r.per_bin_coverage):
            add("bin_coverage", c, group=str(b + 1))
        for lm in r.per_label:
            add("label_coverage", lm.coverage, group=str(lm.label))
            add("label_avg_size", lm.avg_size, group=str(lm.label))
            add("label_informativeness", lm.informativeness, group=str(lm.label))
    lines = [",".join(header)]
    lines += [",".join(str(c) for c in row) for row in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


_COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def _main(argv) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.config:
        config = _load_config(args.config)
        explicit = {a.split("=")[0].lstrip("-").replace("-", "_")
                    for a in (argv if argv is not None else sys.argv[1:])
                    if a.startswith("--")}
        for key, value in config.items():
            if hasattr(args, key) and key not in explicit:
                setattr(args, key, value)
    if getattr(args, "seed", None) is None:
        raise ConfigError("--seed is required (use --seed random for entropy)")
    return _COMMANDS[args.command](args)


def main(argv=None) -> int:
    try:
        return _main(argv)
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
        return code if isinstance(code, int) else 2
    except ConfigError as exc:
        _log(f"error: {exc}")
        return 2
    except (CalibrationTooSmall, NeighborCountTooSmall) as exc:
        _log(f"error: {exc}")
        return 4
    except (MalformedData, InvalidProbability, InvalidLabel, NonFiniteInput) as exc:
        _log(f"error: {exc}")
        return 5
    except DimensionMismatch as exc:
        _log(f"error: {exc}")
        return 6
    except OSError as exc:
        _log(f"error: {exc}")
        return 3
    except OtcpError as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
