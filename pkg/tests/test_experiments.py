from pathlib import Path

import numpy as np
import pytest

from compolab import experiments as ex
from compolab.artifacts import ExperimentConfig, read_csv
from compolab.errors import ConfigError


def config(name, defaults, **params):
    return ExperimentConfig.resolve(name, defaults, overrides=params, out_dir=Path("."))


def all_rows(result):
    return {name: read_csv(text) for name, text in result.files.items() if name.endswith(".csv")}


def test_parse_archs():
    assert ex.parse_archs("1:24,48;2:12") == [(1, 24), (1, 48), (2, 12)]
    for bad in ("1:", "", "24", "0:3"):
        with pytest.raises(ConfigError):
            ex.parse_archs(bad)


def test_cos4_small_run_schema():
    res = ex.run_cos4(config("cos4", ex.cos4_defaults(), n_train=600, n_test=600, epochs=20, batch_size=60,
                             restarts=2, archs="1:12;2:6"))
    rows = all_rows(res)["cos4.csv"]
    assert [(r["depth"], r["width"], r["units"]) for r in rows] == [("1", "12", "12"), ("2", "6", "12")]
    assert all(np.isfinite(float(r["best_test_rmse"])) for r in rows)
    assert all(r["failed"] == "0" and r["best_seed"] in ("0", "1") for r in rows)
    assert rows[0]["param_count"] == "37"
    assert len(res.files["cos4_traces.jsonl"].splitlines()) == 2 * 2 * 20


def test_synthetic_scaling_slope():
    res = ex.run_scaling_study(config("scale", ex.SCALING_DEFAULTS, method="synthetic", complexities="2,4,8,16,32"))
    assert abs(res.summary["runs"]["synthetic"].fit.slope + 1.0) < 1e-10


def test_scaling_argument_checks():
    with pytest.raises(ConfigError):
        ex.run_scaling_study(config("scale", ex.SCALING_DEFAULTS, complexities="1,2"))
    with pytest.raises(ConfigError):
        ex.run_scaling_study(config("scale", ex.SCALING_DEFAULTS, complexities="1,4,2"))
    with pytest.raises(ConfigError):
        ex.run_scaling_study(config("scale", ex.SCALING_DEFAULTS, method="annealing"))


def test_binary_tree_d2_exponents_coincide():
    res = ex.run_scaling_study(config("scale", ex.SCALING_DEFAULTS, target="random_tree", d=2, complexities="1,2,3"))
    runs = res.summary["runs"]
    assert runs["shallow"].prediction.predicted_exponent == runs["deep"].prediction.predicted_exponent
    np.testing.assert_allclose(runs["shallow"].errors, runs["deep"].errors, rtol=1e-6)


def test_q_architecture_bookkeeping():
    assert ex.q_architecture() == {"layers": 11, "units": 39, "shallow_reference_units": 2049}
    assert ex.q_architecture(9, 3, 1) == {"layers": 2, "units": 12, "shallow_reference_units": 5}


def test_q_study_small():
    res = ex.run_q_study(config("qpoly", ex.QPOLY_DEFAULTS, stages=2, inner_samples=200, n_samples=101))
    rows = all_rows(res)
    assert [r["stage"] for r in rows["qpoly_stages.csv"]] == ["0", "1", "2"]
    summary = {r["quantity"]: r["value"] for r in rows["qpoly_summary.csv"]}
    assert summary["units"] == "15" and summary["exponent"] == "4"
    assert max(res.summary["stage_errors"]) < 1e-3


def test_boolean_demo_values():
    errs = {(r["algorithm"], r["parameter"]): float(r["squared_error"])
            for r in all_rows(ex.run_boolean_demo(config("boolean", ex.BOOLEAN_DEFAULTS)))["boolean_errors.csv"]}
    assert errs[("low_order", "7")] == 1.0 and errs[("low_order", "8")] == 0.0
    assert errs[("sparse", "1")] == 0.0
    maj = all_rows(ex.run_boolean_demo(config("boolean", ex.BOOLEAN_DEFAULTS, function="majority", n=3)))
    assert {(r["algorithm"], r["parameter"]): float(r["squared_error"])
            for r in maj["boolean_errors.csv"]}[("low_order", "1")] == 0.25
    rnd = all_rows(ex.run_boolean_demo(config("boolean", ex.BOOLEAN_DEFAULTS, function="random", n=5)))
    assert [float(r["squared_error"]) for r in rnd["boolean_errors.csv"] if r["parameter"] == "32"] == [0.0]
    with pytest.raises(ConfigError):
        ex.run_boolean_demo(config("boolean", ex.BOOLEAN_DEFAULTS, n=21))
    with pytest.raises(ConfigError):
        ex.run_boolean_demo(config("boolean", ex.BOOLEAN_DEFAULTS, function="xor3"))


def test_vc_and_gauss_fit():
    assert ex.run_vc(config("vc", ex.VC_DEFAULTS, kind="tree")).summary["value"] == 19600
    res = ex.run_gauss_fit(config("gauss-fit", ex.GAUSS_FIT_DEFAULTS, m=2))
    row = all_rows(res)["gauss_fit.csv"][0]
    assert row["centers"] == "9" and float(row["separation"]) == 0.5
    assert res.summary["error"] < 1e-6


def test_every_csv_carries_seed_and_surrogate():
    results = [
        ex.run_cos4(config("cos4", ex.cos4_defaults(), n_train=100, n_test=100, epochs=1, batch_size=50,
                           restarts=1, archs="1:3")),
        ex.run_scaling_study(config("scale", ex.SCALING_DEFAULTS, complexities="1,2,3")),
        ex.run_q_study(config("qpoly", ex.QPOLY_DEFAULTS, stages=1, inner_samples=100, n_samples=51)),
        ex.run_boolean_demo(config("boolean", ex.BOOLEAN_DEFAULTS, n=3)),
        ex.run_gauss_fit(config("gauss-fit", ex.GAUSS_FIT_DEFAULTS, m=1)),
        ex.run_vc(config("vc", ex.VC_DEFAULTS)),
    ]
    for res in results:
        for name, rows in all_rows(res).items():
            assert {"seed", "surrogate"} <= set(rows[0]), name


def test_tree_scaling_logs_counts_and_node_ranges():
    res = ex.run_scaling_study(config("scale", ex.SCALING_DEFAULTS, target="random_tree", d=4, complexities="1,2,3"))
    rows = all_rows(res)
    deep = next(r for r in rows["scaling_summary.csv"] if r["family"] == "deep")
    # literal count 3 nodes x 4 x 3 units against (d-1)(d+2)n
    assert (deep["param_count"], deep["stated_param_count"]) == ("36", "54")
    ranges = {r["vertex"]: r for r in rows["scaling_node_ranges.csv"]}
    assert set(ranges) == {"1.1", "1.2", "2.1"}
    assert all(-1.0 <= float(ranges["1.1"][k]) <= 1.0 for k in ("a_min", "b_min", "a_max", "b_max"))
