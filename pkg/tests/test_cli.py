import json
import time

import numpy as np

from otcp import generate_mixture_regression
from otcp.artifact import load_artifact, save_artifact
from otcp.cli import main
from otcp.dataio import read_table, write_regression


def run(*argv) -> int:
    return main(list(argv))


def _simulate(tmp_path, scenario="mixture-regression", n_cal=200, n_test=150, seed=5):
    tmp_path.mkdir(parents=True, exist_ok=True)
    prefix = str(tmp_path / "data")
    rc = run(
        "simulate", "--scenario", scenario, "--n-cal", str(n_cal),
        "--n-test", str(n_test), "--seed", str(seed), "--out", prefix,
    )
    assert rc == 0
    return f"{prefix}_cal.csv", f"{prefix}_test.csv"


def test_simulate_writes_headers_and_is_deterministic(tmp_path):
    cal_a, test_a = _simulate(tmp_path / "a")
    cal_b, test_b = _simulate(tmp_path / "b")
    raw_a = open(cal_a, "rb").read()
    raw_b = open(cal_b, "rb").read()
    assert raw_a == raw_b
    assert open(test_a, "rb").read() == open(test_b, "rb").read()
    header = raw_a.decode().splitlines()[0]
    assert header == "x_1,fhat_1,fhat_2,y_1,y_2"
    table = read_table(cal_a)
    assert table.n_rows == 200


def test_simulate_rejects_unknown_scenario(tmp_path):
    rc = run("simulate", "--scenario", "nonsense", "--seed", "1",
             "--out", str(tmp_path / "x"))
    assert rc == 2


def test_seed_required(tmp_path):
    rc = run("simulate", "--scenario", "mixture-regression", "--out", str(tmp_path / "x"))
    assert rc == 2


def test_calibrate_reports_threshold(tmp_path, capsys):
    cal, _ = _simulate(tmp_path, n_cal=1000, n_test=10)
    artifact = str(tmp_path / "a.json")
    rc = run("calibrate", "--method", "otcp", "--alpha", "0.9", "--seed", "3",
             "--in", cal, "--out", artifact)
    assert rc == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["threshold_count"] == 901
    assert info["n"] == 1000


def test_calibrate_too_small_exit_code(tmp_path):
    cal, _ = _simulate(tmp_path, n_cal=9, n_test=5)
    rc = run("calibrate", "--method", "otcp", "--alpha", "0.95", "--seed", "3",
             "--in", cal, "--out", str(tmp_path / "a.json"))
    assert rc == 4


def test_calibrate_twice_identical_except_timestamp(tmp_path):
    cal, _ = _simulate(tmp_path, n_cal=120, n_test=10)
    a1, a2 = str(tmp_path / "a1.json"), str(tmp_path / "a2.json")
    assert run("calibrate", "--method", "otcp", "--alpha", "0.9", "--seed", "3",
               "--in", cal, "--out", a1) == 0
    time.sleep(0.01)
    assert run("calibrate", "--method", "otcp", "--alpha", "0.9", "--seed", "3",
               "--in", cal, "--out", a2) == 0
    d1 = json.load(open(a1))
    d2 = json.load(open(a2))
    d1["provenance"].pop("created")
    d2["provenance"].pop("created")
    assert d1 == d2


def test_artifact_roundtrip_membership(tmp_path):
    cal, test = generate_mixture_regression(300, 400, seed=9)
    from otcp import SignedResidual, fit_marginal

    pred = fit_marginal(SignedResidual(), cal.fhat, cal.y, 0.9, "sphere", seed=21)
    path = str(tmp_path / "artifact.json")
    save_artifact(path, "otcp", 0.9, pred)
    method, alpha, loaded = load_artifact(path)
    assert method == "otcp" and alpha == 0.9
    want = pred.membership_batch(test.fhat, test.y)
    got = loaded.membership_batch(test.fhat, test.y)
    assert np.array_equal(want, got)


def test_artifact_version_check(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format": "otcp-artifact", "version": 99}))
    rc = run("predict", "--artifact", str(path), "--in", str(path), "--out",
             str(tmp_path / "o.csv"), "--seed", "0")
    assert rc == 5


def test_predict_regression_flow(tmp_path, capsys):
    cal, test = _simulate(tmp_path, n_cal=300, n_test=200)
    artifact = str(tmp_path / "a.json")
    out = str(tmp_path / "pred.csv")
    assert run("calibrate", "--method", "otcp", "--alpha", "0.9", "--seed", "3",
               "--in", cal, "--out", artifact) == 0
    assert run("predict", "--artifact", artifact, "--in", test, "--out", out,
               "--seed", "0") == 0
    lines = open(out).read().splitlines()
    assert lines[0] == "row,member"
    assert len(lines) == 201
    members = [ln.split(",")[1] for ln in lines[1:]]
    assert set(members).issubset({"true", "false"})
    frac = members.count("true") / len(members)
    assert 0.8 < frac <= 1.0


def test_predict_dimension_mismatch_exit(tmp_path):
    cal, _ = _simulate(tmp_path, n_cal=100, n_test=10)
    artifact = str(tmp_path / "a.json")
    assert run("calibrate", "--method", "otcp", "--alpha", "0.9", "--seed", "3",
               "--in", cal, "--out", artifact) == 0
    bad = str(tmp_path / "bad.csv")
    rng = np.random.default_rng(0)
    write_regression(bad, rng.normal(size=(5, 1)), rng.normal(size=(5, 3)),
                     rng.normal(size=(5, 3)))
    rc = run("predict", "--artifact", artifact, "--in", bad, "--out",
             str(tmp_path / "o.csv"), "--seed", "0")
    assert rc == 6


def test_predict_malformed_csv_exit(tmp_path):
    cal, _ = _simulate(tmp_path, n_cal=100, n_test=10)
    artifact = str(tmp_path / "a.json")
    assert run("calibrate", "--method", "otcp", "--alpha", "0.9", "--seed", "3",
               "--in", cal, "--out", artifact) == 0
    bad = tmp_path / "bad.csv"
    bad.write_text("x_1,fhat_1,fhat_2,y_1,y_2\n1.0,2.0,oops,0.0,0.0\n")
    rc = run("predict", "--artifact", artifact, "--in", str(bad), "--out",
             str(tmp_path / "o.csv"), "--seed", "0")
    assert rc == 5


def test_classification_flow_and_label_sets(tmp_path):
    cal, test = _simulate(tmp_path, scenario="gmm-classification", n_cal=400, n_test=100)
    artifact = str(tmp_path / "a.json")
    out = str(tmp_path / "sets.csv")
    assert run("calibrate", "--method", "otcp", "--alpha", "0.9", "--seed", "2",
               "--in", cal, "--out", artifact) == 0
    assert run("predict", "--artifact", artifact, "--in", test, "--out", out,
               "--seed", "0") == 0
    lines = open(out).read().splitlines()
    assert lines[0] == "row,label_set"
    for ln in lines[1:]:
        _, label_set = ln.split(",", 1)
        if label_set:
            assert set(label_set.split("|")).issubset({"1", "2", "3"})


def test_conditional_cli_roundtrip(tmp_path):
    cal, test = _simulate(tmp_path, scenario="heteroscedastic", n_cal=300, n_test=60)
    artifact = str(tmp_path / "a.json")
    out = str(tmp_path / "m.csv")
    assert run("calibrate", "--method", "otcp-plus", "--alpha", "0.9", "--seed", "2",
               "--k", "50", "--in", cal, "--out", artifact) == 0
    assert run("predict", "--artifact", artifact, "--in", test, "--out", out,
               "--seed", "0") == 0
    lines = open(out).read().splitlines()
    assert len(lines) == 61
    # deterministic on identical invocation
    out2 = str(tmp_path / "m2.csv")
    assert run("predict", "--artifact", artifact, "--in", test, "--out", out2,
               "--seed", "0") == 0
    assert open(out).read() == open(out2).read()


def test_evaluate_regression_report(tmp_path, capsys):
    cal, test = _simulate(tmp_path, n_cal=400, n_test=300)
    report = str(tmp_path / "report.json")
    tables = str(tmp_path / "tables.csv")
    rc = run("evaluate", "--cal", cal, "--test", test,
             "--methods", "otcp,ball,rect,ellipsoid", "--alpha", "0.9",
             "--seed", "11", "--volume-samples", "20000",
             "--out", report, "--tables", tables)
    assert rc == 0
    doc = json.load(open(report))
    assert doc["task"] == "regression"
    methods = [r["method"] for r in doc["reports"]]
    assert methods == ["otcp", "ball", "rect", "ellipsoid"]
    for r in doc["reports"]:
        assert 0.8 <= r["marginal_coverage"] <= 1.0
        assert r["volume_estimate"] > 0
        assert r["volume_stderr"] > 0
        assert r["volume_box_restricted"] is True
    table_lines = open(tables).read().splitlines()
    assert table_lines[0] == "method,metric,group,value,stderr"
    assert any(ln.startswith("otcp,coverage") for ln in table_lines)


def test_evaluate_conditional_methods(tmp_path):
    cal, test = _simulate(tmp_path, scenario="heteroscedastic", n_cal=400, n_test=200)
    report = str(tmp_path / "report.json")
    rc = run("evaluate", "--cal", cal, "--test", test,
             "--methods", "otcp-plus,adaptive-ellipsoid", "--alpha", "0.9",
             "--seed", "13", "--k", "60", "--out", report)
    assert rc == 0
    doc = json.load(open(report))
    for r in doc["reports"]:
        assert r["volume_estimate"] is None  # query-dependent regions skip volume
        assert r["worst_set_coverage"] is not None
        assert r["worst_set_overlap"] is not None
        assert len(r["per_bin_coverage"]) == 4
    plus = doc["reports"][0]
    assert plus["method"] == "otcp-plus"
    assert plus["worst_set_coverage"] >= 0.8


def test_evaluate_classification_report(tmp_path):
    cal, test = _simulate(tmp_path, scenario="gmm-classification", n_cal=500, n_test=300)
    report = str(tmp_path / "report.json")
    rc = run("evaluate", "--cal", cal, "--test", test, "--methods", "otcp,ip,ms,aps",
             "--alpha", "0.9", "--seed", "4", "--out", report)
    assert rc == 0
    doc = json.load(open(report))
    assert doc["task"] == "classification"
    for r in doc["reports"]:
        assert r["avg_set_size"] is not None
        assert r["informativeness"] is not None
        assert r["per_label"]
        assert r["worst_slab_coverage"] is not None


def test_evaluate_method_task_mismatch(tmp_path):
    cal, test = _simulate(tmp_path, n_cal=100, n_test=50)
    rc = run("evaluate", "--cal", cal, "--test", test, "--methods", "ip",
             "--alpha", "0.9", "--seed", "1", "--out", str(tmp_path / "r.json"))
    assert rc == 2


def test_config_file_with_flag_precedence(tmp_path, capsys):
    cal, _ = _simulate(tmp_path, n_cal=150, n_test=10)
    cfg = tmp_path / "run.cfg"
    cfg.write_text("alpha=0.8\nmethod=otcp\n# comment\n")
    artifact = str(tmp_path / "a.json")
    rc = run("calibrate", "--config", str(cfg), "--seed", "3", "--in", cal,
             "--out", artifact, "--alpha", "0.9")
    assert rc == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["alpha"] == 0.9  # flag beats config
    rc = run("calibrate", "--config", str(cfg), "--seed", "3", "--in", cal,
             "--out", artifact)
    assert rc == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["alpha"] == 0.8  # config beats default


def test_baseline_artifacts_roundtrip(tmp_path):
    cal, test = _simulate(tmp_path, n_cal=300, n_test=80)
    for method in ("ball", "rect", "ellipsoid", "adaptive-ellipsoid"):
        artifact = str(tmp_path / f"{method}.json")
        out = str(tmp_path / f"{method}.csv")
        assert run("calibrate", "--method", method, "--alpha", "0.9", "--seed", "1",
                   "--in", cal, "--out", artifact) == 0
        assert run("predict", "--artifact", artifact, "--in", test, "--out", out,
                   "--seed", "0") == 0
        members = [ln.split(",")[1] for ln in open(out).read().splitlines()[1:]]
        assert set(members).issubset({"true", "false"})
        assert members.count("true") > 0


def test_scalar_classifier_artifacts_roundtrip(tmp_path):
    cal, test = _simulate(tmp_path, scenario="gmm-classification", n_cal=300, n_test=80)
    for method in ("ip", "ms", "aps"):
        artifact = str(tmp_path / f"{method}.json")
        out = str(tmp_path / f"{method}.csv")
        assert run("calibrate", "--method", method, "--alpha", "0.9", "--seed", "1",
                   "--in", cal, "--out", artifact) == 0
        assert run("predict", "--artifact", artifact, "--in", test, "--out", out,
                   "--seed", "0") == 0
        lines = open(out).read().splitlines()
        assert lines[0] == "row,label_set"
        assert len(lines) == 81


def test_default_neighbor_count_is_ten_percent():
    from otcp.cli import _default_k

    assert _default_k(1000) == 100
    assert _default_k(95) == 10
    assert _default_k(5) == 1


def test_predict_batch_throughput(tmp_path):
    # 10^4 queries against an n=1000 calibration must finish quickly
    cal, _ = _simulate(tmp_path, n_cal=1000, n_test=10)
    _, test = _simulate(tmp_path / "big", n_cal=10, n_test=10_000)
    artifact = str(tmp_path / "a.json")
    out = str(tmp_path / "pred.csv")
    assert run("calibrate", "--method", "otcp", "--alpha", "0.9", "--seed", "3",
               "--in", cal, "--out", artifact) == 0
    start = time.perf_counter()
    assert run("predict", "--artifact", artifact, "--in", test, "--out", out,
               "--seed", "0") == 0
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    assert len(open(out).read().splitlines()) == 10_001


def test_heteroscedastic_simulation_postcheck(tmp_path):
    cal, _ = _simulate(tmp_path, scenario="heteroscedastic", n_cal=4000, n_test=10, seed=8)
    table = read_table(cal)
    x = table.array("x")[:, 0]
    res = table.array("y") - table.array("fhat")
    spread_hi = res[x > 1.5].var(axis=0).sum()
    spread_lo = res[x < 0.5].var(axis=0).sum()
    assert spread_hi > 2.0 * spread_lo
