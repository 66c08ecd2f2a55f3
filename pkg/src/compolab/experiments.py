"""Reproducible experiments; each returns a :class:`RunResult` of deterministic data files."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .artifacts import ExperimentConfig, RunResult, csv_text
from .boolean_fourier import BOOLEAN_FUNCTIONS, fourier_expand, low_order_approx, random_function
from .errors import ConfigError
from .gaussian import fit_gaussian_coeffs, fit_tree_gaussian, default_samples, grid_centers, sup_region
from .metrics import (
    ScalingPrediction,
    ScalingRun,
    predicted_exponents,
    sample_domain,
    sup_norm_error,
    tree_error,
    vc_bounds,
)
from .networks import MLPArch, ShallowArch, param_count
from .targets import Box, CompositionalTarget, QInner, Q_DEFAULT_COEFFS, get_target
from .training import TrainConfig, _restart, best_of_restarts, fit_shallow_lsq, train_tree_staged

TEST_SEED_OFFSET = 10**6

# --- cos4 depth comparison ---------------------------------------------------

COS4_FULL = {
    "n_train": 60000,
    "n_test": 60000,
    "epochs": 2000,
    "batch_size": 3000,
    "learning_rate": 1e-4,
}
# 20x fewer SGD updates than the full protocol, so a 20x larger step.
COS4_REDUCED = {
    "n_train": 6000,
    "n_test": 6000,
    "epochs": 200,
    "batch_size": 600,
    "learning_rate": 2e-3,
}
COS4_DEFAULTS = {
    "preset": "reduced",
    **COS4_REDUCED,
    "momentum": 0.9,
    "restarts": 5,
    "archs": "1:24,48,72,128,256;2:12,24,36;3:8,16,24",
    "batchnorm_min_depth": 2,
    "delta": 0.01,
    "seed": 0,
    "traces": True,
}


def cos4_defaults(preset: str = "reduced") -> dict:
    if preset not in ("reduced", "full"):
        raise ConfigError(f"unknown preset {preset!r}")
    return {**COS4_DEFAULTS, "preset": preset, **(COS4_REDUCED if preset == "reduced" else COS4_FULL)}


def parse_archs(spec: str) -> list[tuple[int, int]]:
    """``"1:24,48;2:12"`` -> ``[(1, 24), (1, 48), (2, 12)]``."""
    out = []
    for group in filter(None, (g.strip() for g in spec.split(";"))):
        if ":" not in group:
            raise ConfigError(f"architecture group {group!r} must read depth:width,...")
        depth, widths = group.split(":", 1)
        ws = [w.strip() for w in widths.split(",") if w.strip()]
        if not ws:
            raise ConfigError(f"empty width list for depth {depth}")
        for w in ws:
            if int(depth) < 1 or int(w) < 1:
                raise ConfigError(f"invalid depth/width {depth}:{w}")
            out.append((int(depth), int(w)))
    if not out:
        raise ConfigError("architecture list is empty")
    return out


def cos4_data(p: dict):
    target = get_target("cos4")
    lo, hi = target.domain.lower[0], target.domain.upper[0]
    Xtr = np.random.default_rng(p["seed"]).uniform(lo, hi, (p["n_train"], 1))
    Xte = np.random.default_rng(p["seed"] + TEST_SEED_OFFSET).uniform(lo, hi, (p["n_test"], 1))
    return (Xtr, target(Xtr)), (Xte, target(Xte))


def run_cos4(config: ExperimentConfig) -> RunResult:
    p = config.params
    archs = parse_archs(p["archs"])
    train, test = cos4_data(p)
    cfg = TrainConfig(p["learning_rate"], p["momentum"], min(p["batch_size"], p["n_train"]),
                      p["epochs"], p["restarts"], p["seed"]).validate(p["n_train"])
    descs = [MLPArch((1,) + (w,) * depth + (1,), depth >= p["batchnorm_min_depth"], p["delta"])
             for depth, w in archs]
    tasks = [(arch, train, cfg, test, cfg.seed + r) for arch in descs for r in range(cfg.restarts)]
    start = time.perf_counter()
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            reports = list(pool.map(_restart, tasks))
    else:
        reports = [_restart(t) for t in tasks]
    rows, traces, timings = [], [], {}
    for k, ((depth, width), arch) in enumerate(zip(archs, descs)):
        group = reports[k * cfg.restarts:(k + 1) * cfg.restarts]
        ok = [r for r in group if not r.diverged]
        pc = param_count(group[0].net)
        timings[f"{depth}x{width}"] = sum(r.wall_time for r in group)
        if ok:
            best = min(ok, key=lambda r: (r.test_mse, r.seed))
            rows.append([depth, width, depth * width, pc, float(np.sqrt(best.test_mse)),
                         float(np.sqrt(best.train_mse)), best.seed, cfg.restarts, 0, p["seed"],
                         f"sgd-best-of-{cfg.restarts}"])
        else:
            rows.append([depth, width, depth * width, pc, float("nan"), float("nan"), "", cfg.restarts, 1,
                         p["seed"], f"sgd-best-of-{cfg.restarts}"])
        if p["traces"]:
            for r in group:
                for epoch, loss in enumerate(r.loss_trace, start=1):
                    traces.append(json.dumps({"depth": depth, "width": width, "seed": r.seed,
                                              "epoch": epoch, "train_mse": loss}))
    timings["total"] = time.perf_counter() - start
    cols = ["depth", "width", "units", "param_count", "best_test_rmse", "best_train_rmse", "best_seed",
            "restarts", "failed", "seed", "surrogate"]
    files = {"cos4.csv": csv_text(cols, rows, config)}
    if p["traces"]:
        files["cos4_traces.jsonl"] = "\n".join(traces) + "\n"
    seeds = sorted({cfg.seed + r for r in range(cfg.restarts)} | {p["seed"], p["seed"] + TEST_SEED_OFFSET})
    return RunResult(files, seeds, timings, {"rows": rows})


# --- scaling studies -----------------------------------------------------------

SCALING_DEFAULTS = {
    "target": "gauss_bump",
    "d": 1,
    "target_seed": 0,
    "method": "gaussian",
    "complexities": "1,2,4,8",
    "r": 2.0,
    "c": 1.0,
    "lam": 1e-10,
    "synthetic_exponent": 1.0,
    "synthetic_constant": 1.0,
    "n_samples": 2000,
    "epochs": 200,
    "batch_size": 200,
    "learning_rate": 2e-3,
    "momentum": 0.9,
    "restarts": 3,
    "seed": 0,
}

# design-matrix entries above which a shallow Gaussian fit is skipped
_GAUSS_WORK_CAP = 5 * 10**7


def _scaling_target(p):
    label = p["target"]
    if label == "gauss_bump":
        return get_target(label, d=p["d"])
    if label == "random_tree":
        return get_target(label, d=p["d"], seed=p["target_seed"])
    if label in ("cos4", "q_poly"):
        return get_target(label)
    raise ConfigError(f"target {label!r} is not supported by the scaling study")


def _shallow_gaussian_error(target, m, p):
    d = target.arity
    centers = grid_centers(m, d, p["c"])
    X = default_samples(centers)
    if len(X) * len(centers) > _GAUSS_WORK_CAP:
        return None
    net = fit_gaussian_coeffs(centers, (X, target(X)), p["lam"])
    if isinstance(target, CompositionalTarget):
        box = target.domain or Box.cube(-1.0, 1.0, d)
        return sup_norm_error(target, net, box).value
    box, spacing = sup_region(m, d, p["c"])
    if d <= 2:
        per_axis = int(round((box.upper[0] - box.lower[0]) / spacing)) + 1
        return sup_norm_error(target, net, box, "grid", max(per_axis**d, 1000)).value
    return sup_norm_error(target, net, box, "quasirandom", 10**5, seed=p["seed"]).value


def run_scaling_study(config: ExperimentConfig) -> RunResult:
    p = config.params
    ns = [float(v) for v in str(p["complexities"]).split(",") if v.strip()]
    if len(ns) < 3:
        raise ConfigError("a scaling study needs at least 3 complexity values")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigError("complexity values must be strictly increasing")
    method = p["method"]
    if method == "synthetic":
        errs = [p["synthetic_constant"] * n ** (-p["synthetic_exponent"]) for n in ns]
        pred = ScalingPrediction(p["r"], max(2, p["d"]))
        run = ScalingRun("synthetic", ns, errs, pred, ["synthetic"] * len(ns), [p["seed"]] * len(ns))
        files = {"scaling_synthetic.csv": _scaling_csv(run, config)}
        return RunResult(files, [p["seed"]], {}, {"runs": {"synthetic": run}})

    target = _scaling_target(p)
    d = target.arity
    runs: dict[str, ScalingRun] = {}
    shallow_pred = ScalingPrediction(p["r"], d)
    deep_pred = ScalingPrediction(p["r"], 2)
    start = time.perf_counter()
    if method == "gaussian":
        ms = [int(n) for n in ns]
        shallow = [(m, _shallow_gaussian_error(target, m, p)) for m in ms]
        shallow = [(m, e) for m, e in shallow if e is not None]
        if len(shallow) >= 3:
            runs["shallow"] = ScalingRun("shallow", [float(m) for m, _ in shallow], [e for _, e in shallow],
                                         shallow_pred, ["gaussian-lsq"] * len(shallow), [p["seed"]] * len(shallow))
        if isinstance(target, CompositionalTarget):
            errs = []
            for m in ms:
                net = fit_tree_gaussian(target, grid_centers(m, 2, p["c"]), p["lam"])
                errs.append(tree_error(target, net)[0])
            runs["deep"] = ScalingRun("deep", [float(m) for m in ms], errs, deep_pred,
                                      ["gaussian-lsq-per-node"] * len(ms), [p["seed"]] * len(ms))
    elif method == "sgd":
        cfg = TrainConfig(p["learning_rate"], p["momentum"], p["batch_size"], p["epochs"], p["restarts"], p["seed"])
        box = target.domain if isinstance(target, CompositionalTarget) and target.domain else Box.cube(-1.0, 1.0, d)
        rng = np.random.default_rng(p["seed"])
        Xtr = box.sample(p["n_samples"], rng)
        Xte = box.sample(p["n_samples"], np.random.default_rng(p["seed"] + TEST_SEED_OFFSET))
        errs = []
        for n in ns:
            best, _ = best_of_restarts(ShallowArch(d, int(n)), (Xtr, target(Xtr)), cfg, (Xte, target(Xte)))
            errs.append(sup_norm_error(target, best.net, box, seed=p["seed"]).value)
        surrogate = f"sgd-best-of-{cfg.restarts}"
        runs["shallow"] = ScalingRun("shallow", ns, errs, shallow_pred, [surrogate] * len(ns), [p["seed"]] * len(ns))
        if isinstance(target, CompositionalTarget):
            errs = []
            for n in ns:
                net, _ = train_tree_staged(target, int(n), cfg, n_samples=p["n_samples"])
                errs.append(tree_error(target, net)[0])
            runs["deep"] = ScalingRun("deep", ns, errs, deep_pred, [surrogate + "-per-node"] * len(ns),
                                      [p["seed"]] * len(ns))
    else:
        raise ConfigError(f"unknown scaling method {method!r}")
    if not runs:
        raise ConfigError("no family produced enough points for a scaling fit")
    files = {f"scaling_{name}.csv": _scaling_csv(run, config) for name, run in runs.items()}
    shallow_exp, deep_exp = predicted_exponents(max(1, int(p["r"])), max(2, d))
    n_max = int(ns[-1])
    # trainable scalars at the largest n; the tree family also carries the count quoted in the literature
    counts = {"shallow": ((d + 2) * n_max, ""), "deep": (4 * n_max * (d - 1), (d - 1) * (d + 2) * n_max),
              "synthetic": ("", "")}
    summary = [[name, run.fit.slope, run.fit.intercept, run.fit.residual, run.prediction.predicted_exponent,
                *counts[name], p["seed"], run.surrogates[0]] for name, run in runs.items()]
    files["scaling_summary.csv"] = csv_text(
        ["family", "fitted_slope", "intercept", "residual", "predicted_exponent", "param_count",
         "stated_param_count", "seed", "surrogate"], summary, config)
    if isinstance(target, CompositionalTarget):
        box = target.domain or Box.cube(-1.0, 1.0, d)
        ranges = target.node_input_ranges(box.sample(10**4, np.random.default_rng(p["seed"])))
        rows = [[f"{lvl}.{i}", *lo, *hi, p["seed"], "uniform-sample"] for (lvl, i), (lo, hi) in ranges.items()]
        files["scaling_node_ranges.csv"] = csv_text(
            ["vertex", "a_min", "b_min", "a_max", "b_max", "seed", "surrogate"], rows, config)
    return RunResult(files, [p["seed"]], {"total": time.perf_counter() - start},
                     {"runs": runs, "predicted": (shallow_exp, deep_exp)})


def _scaling_csv(run: ScalingRun, config: ExperimentConfig) -> str:
    fit = run.fit
    rows = [[n, e, s, seed, run.prediction.predicted_exponent, fit.slope]
            for n, e, s, seed in zip(run.complexities, run.errors, run.surrogates, run.seeds)]
    return csv_text(["n", "error", "surrogate", "seed", "predicted_exponent", "fitted_slope"], rows, config)


# --- Q polynomial staged construction -----------------------------------------

QPOLY_DEFAULTS = {
    "coefficients": ",".join(repr(c) for c in Q_DEFAULT_COEFFS),
    "stage_lo": 0.0,
    "stage_hi": 0.9,
    "inner_units": 9,
    "stage_units": 3,
    "stages": 10,
    "n_samples": 501,
    "inner_samples": 2000,
    "lsq_restarts": 2,
    "delta": 0.01,
    "seed": 0,
}


def q_architecture(inner_units: int = 9, stage_units: int = 3, stages: int = 10) -> dict:
    return {
        "layers": 1 + stages,
        "units": inner_units + stage_units * stages,
        "shallow_reference_units": 2 ** (stages + 1) + 1,
    }


def run_q_study(config: ExperimentConfig) -> RunResult:
    p = config.params
    coeffs = [float(c) for c in str(p["coefficients"]).split(",")]
    inner = QInner(coeffs)
    arch = q_architecture(p["inner_units"], p["stage_units"], p["stages"])
    rng = np.random.default_rng(p["seed"])
    Xin = rng.uniform(-1.0, 1.0, (max(p["inner_samples"], 4 * p["inner_units"]), 2))
    start = time.perf_counter()
    inner_net = fit_shallow_lsq(p["inner_units"], (Xin, inner(Xin[:, 0], Xin[:, 1])),
                                p["lsq_restarts"], p["seed"], p["delta"])
    grid = sample_domain(Box.cube(-1.0, 1.0, 2), "grid", 101**2)
    inner_err = sup_norm_error(lambda X: inner(X[:, 0], X[:, 1]), inner_net, Box.cube(-1.0, 1.0, 2), "grid", 101**2)
    rows = [[0, 1, p["inner_units"], -1.0, 1.0, inner_err.value, p["seed"], "lsq-inner-quadratic"]]
    lo, hi = p["stage_lo"], p["stage_hi"]
    t = np.linspace(lo, hi, p["n_samples"]).reshape(-1, 1)
    stage_box = Box((lo,), (hi,))
    stage_nets = []
    for s in range(1, p["stages"] + 1):
        net = fit_shallow_lsq(p["stage_units"], (t, t[:, 0] ** 2), p["lsq_restarts"], p["seed"] + s, p["delta"])
        err = sup_norm_error(lambda X: X[:, 0] ** 2, net, stage_box, "grid", 10**4)
        stage_nets.append(net)
        rows.append([s, s + 1, p["stage_units"], lo, hi, err.value, p["seed"] + s, "lsq-squaring"])
    timing = time.perf_counter() - start

    def composed(X):
        u = inner_net(X)
        for net in stage_nets:
            u = net(u.reshape(-1, 1))
        return u

    exact = inner(grid[:, 0], grid[:, 1]) ** (2 ** p["stages"])
    approx = composed(grid)
    end_to_end = float(np.max(np.abs(exact - approx))) if np.all(np.isfinite(approx)) else float("inf")
    cols = ["stage", "layer", "units", "domain_lo", "domain_hi", "sup_error", "seed", "surrogate"]
    summary = [
        ["layers", arch["layers"]],
        ["units", arch["units"]],
        ["shallow_reference_units", arch["shallow_reference_units"]],
        ["inner_scale", inner.scale],
        ["exponent", 2 ** p["stages"]],
        ["end_to_end_sup_error", end_to_end],
        ["max_stage_sup_error", max(r[5] for r in rows[1:])],
    ]
    summary = [row + [p["seed"], "lsq-staged"] for row in summary]
    files = {
        "qpoly_stages.csv": csv_text(cols, rows, config),
        "qpoly_summary.csv": csv_text(["quantity", "value", "seed", "surrogate"], summary, config),
    }
    result = {"architecture": arch, "stage_errors": [r[5] for r in rows[1:]], "inner_error": inner_err.value,
              "end_to_end": end_to_end}
    return RunResult(files, [p["seed"]], {"total": timing}, result)


# --- Boolean demo --------------------------------------------------------------

BOOLEAN_DEFAULTS = {"function": "parity", "n": 8, "seed": 0}


def run_boolean_demo(config: ExperimentConfig) -> RunResult:
    p = config.params
    n = p["n"]
    if not 1 <= n <= 20:
        raise ConfigError(f"n must lie in [1, 20], got {n}")
    name = p["function"]
    if name == "random":
        table = fourier_expand(random_function(n, p["seed"]), n)
    elif name in BOOLEAN_FUNCTIONS:
        table = fourier_expand(BOOLEAN_FUNCTIONS[name], n)
    else:
        raise ConfigError(f"unknown Boolean function {name!r}; choose from {sorted(BOOLEAN_FUNCTIONS) + ['random']}")
    rows = [["low_order", k, low_order_approx(table, k)[1], p["seed"], "exact-table"] for k in range(n + 1)]
    # sparse errors for every t from one sort: tail sums of sorted squared magnitudes
    sq = np.sort(table.coeffs**2)[::-1]
    tail = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
    ts = sorted({2**j for j in range(n + 1)} | {int(np.sum(table.degrees() <= k)) for k in range(n + 1)})
    rows += [["sparse", t, float(tail[t]), p["seed"], "exact-table"] for t in ts]
    width = max(1, (n + 3) // 4)
    coeff_rows = [[f"0x{m:0{width}x}", float(c), p["seed"], "exact-table"] for m, c in enumerate(table.coeffs)]
    files = {
        "boolean_coefficients.csv": csv_text(["subset_mask", "coefficient", "seed", "surrogate"], coeff_rows, config),
        "boolean_errors.csv": csv_text(["algorithm", "parameter", "squared_error", "seed", "surrogate"], rows, config),
    }
    return RunResult(files, [p["seed"]], {}, {"table": table})


# --- small utilities exposed as subcommands -----------------------------------

VC_DEFAULTS = {"kind": "shallow", "d": 8, "n": 10, "seed": 0}


def run_vc(config: ExperimentConfig) -> RunResult:
    p = config.params
    value = vc_bounds(p["kind"], p["d"], p["n"])
    rows = [[p["kind"], p["d"], p["n"], value, p["seed"], "closed-form"]]
    files = {"vc.csv": csv_text(["kind", "d", "n", "vc_bound", "seed", "surrogate"], rows, config)}
    return RunResult(files, [p["seed"]], {}, {"value": value})


GAUSS_FIT_DEFAULTS = {"target": "gauss_bump", "d": 1, "m": 4, "c": 1.0, "lam": 1e-10, "seed": 0}


def run_gauss_fit(config: ExperimentConfig) -> RunResult:
    from .gaussian import dumps_gaussian

    p = config.params
    target = _scaling_target({**SCALING_DEFAULTS, **p})
    centers = grid_centers(p["m"], target.arity, p["c"])
    X = default_samples(centers)
    net = fit_gaussian_coeffs(centers, (X, target(X)), p["lam"])
    err = _shallow_gaussian_error(target, p["m"], {**SCALING_DEFAULTS, **p})
    rows = [[p["target"], target.arity, p["m"], len(centers), centers.separation, err, p["seed"], "gaussian-lsq"]]
    files = {
        "gauss_fit.csv": csv_text(["target", "d", "m", "centers", "separation", "sup_error", "seed", "surrogate"],
                                  rows, config),
        "gauss_net.txt": dumps_gaussian(net),
    }
    return RunResult(files, [p["seed"]], {}, {"error": err, "net": net})


__all__ = [
    "COS4_DEFAULTS",
    "BOOLEAN_DEFAULTS",
    "GAUSS_FIT_DEFAULTS",
    "QPOLY_DEFAULTS",
    "SCALING_DEFAULTS",
    "VC_DEFAULTS",
    "cos4_defaults",
    "parse_archs",
    "q_architecture",
    "run_boolean_demo",
    "run_cos4",
    "run_gauss_fit",
    "run_q_study",
    "run_scaling_study",
    "run_vc",
]
