"""Acceptance suite behind ``compolab verify``.

Each criterion is a deterministic ``produce`` step returning data files and a
``judge`` step turning them into a verdict; criterion 10 re-runs every
``produce`` and compares the bytes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .artifacts import ExperimentConfig, csv_text, read_csv
from .boolean_fourier import fourier_expand, low_order_approx, parity, random_function, reconstruct, sparse_approx
from .boolean_fourier import cube_points
from .experiments import QPOLY_DEFAULTS, SCALING_DEFAULTS, cos4_defaults, run_cos4, run_q_study, run_scaling_study
from .gaussian import fit_gaussian_coeffs, grid_centers
from .metrics import composition_lipschitz_test, fit_scaling_exponent, vc_bounds
from .networks import MLPArch, ShallowArch, TreeArch, init_network
from .scalable_ops import apply_layer, build_scalable_operator, check_shift_invariance, operator_as_tree_target
from .targets import TrigNode
from .training import backprop_grad

BASELINE_RMSE = float(np.sqrt(0.5))
GRAD_FD_STEP = 1e-6
GRAD_TOL = 1e-5
# components below this fraction of the largest gradient entry are compared
# against that floor, since central differences resolve them only to ~1e-10
GRAD_FLOOR = 1e-3


@dataclass
class Criterion:
    number: int
    name: str
    budget: float
    produce: Callable[[], dict[str, str]]
    judge: Callable[[dict[str, str]], tuple[bool, str]]


@dataclass
class Outcome:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    budget: float


def _cfg(kind: str, params: dict) -> ExperimentConfig:
    return ExperimentConfig(kind, params, Path("."), 1)


# --- 1. gradient correctness ---------------------------------------------------

GRAD_ARCHS = [
    ShallowArch(3, 5),
    ShallowArch(8, 4),
    TreeArch(4, 3),
    TreeArch(8, 2),
    MLPArch((1, 12, 12, 1)),
    MLPArch((1, 12, 12, 1), batchnorm=True),
    MLPArch((2, 8, 1)),
    MLPArch((3, 6, 5, 1), batchnorm=True),
    MLPArch((1, 8, 8, 8, 1), batchnorm=True),
    MLPArch((4, 10, 6, 1)),
]


def central_difference(net, X, y, h: float = GRAD_FD_STEP) -> list[np.ndarray]:
    def loss():
        out, _ = net.forward(X, train=True, update_stats=False)
        return np.mean((out - y) ** 2)

    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def gradient_relative_error(analytic, numeric) -> float:
    a = np.concatenate([g.ravel() for g in analytic])
    b = np.concatenate([g.ravel() for g in numeric])
    floor = GRAD_FLOOR * max(np.max(np.abs(b)), np.finfo(float).tiny)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def _produce_gradients():
    rows = []
    for k, arch in enumerate(GRAD_ARCHS):
        net = init_network(arch, 100 + k)
        rng = np.random.default_rng(200 + k)
        for p in net.params():
            p += rng.normal(0.0, 0.3, p.shape)
        X = rng.uniform(-1.0, 1.0, (16, net.input_dim))
        y = rng.normal(size=16)
        err = gradient_relative_error(backprop_grad(net, (X, y)), central_difference(net, X, y))
        rows.append([repr(arch), err])
    return {"gradients.csv": csv_text(["architecture", "max_relative_error"], rows)}


def _judge_gradients(data):
    errs = [float(r["max_relative_error"]) for r in read_csv(data["gradients.csv"])]
    return max(errs) < GRAD_TOL, f"{len(errs)} nets, max relative error {max(errs):.2e} (tol {GRAD_TOL:g})"


# --- 2. Gaussian exactness and linearity -------------------------------------


def _produce_gaussian_exact():
    centers = grid_centers(1, 2)
    p = np.array([1.0, 0.0])
    t = np.linspace(-2.0, 2.0, 41)
    X = np.array(np.meshgrid(t, t, indexing="ij")).reshape(2, -1).T
    f = lambda Z: np.exp(-np.sum((Z - p) ** 2, axis=1))  # noqa: E731
    net = fit_gaussian_coeffs(centers, (X, f(X)), lam=0.0)
    tt = np.linspace(-4.0, 4.0, 161)
    G = np.array(np.meshgrid(tt, tt, indexing="ij")).reshape(2, -1).T
    resid = float(np.max(np.abs(net(G) - f(G))))
    hit = int(np.argmin(np.sum((centers.points - p) ** 2, axis=1)))
    others = float(np.max(np.abs(np.delete(net.coeffs, hit))))

    cs = grid_centers(2, 1)
    Xs = np.linspace(-2.5, 2.5, 61).reshape(-1, 1)
    yf, yg = np.sin(2 * Xs[:, 0]), np.cos(Xs[:, 0]) * np.exp(-0.1 * Xs[:, 0] ** 2)
    alpha, beta = 2.5, -1.3
    af = fit_gaussian_coeffs(cs, (Xs, yf)).coeffs
    ag = fit_gaussian_coeffs(cs, (Xs, yg)).coeffs
    acomb = fit_gaussian_coeffs(cs, (Xs, alpha * yf + beta * yg)).coeffs
    expected = alpha * af + beta * ag
    lin = float(np.max(np.abs(acomb - expected)) / np.max(np.abs(expected)))
    rows = [["span_sup_residual", resid], ["span_off_center_coeff", others],
            ["span_center_coeff", float(net.coeffs[hit])], ["linearity_rel_error", lin]]
    return {"gaussian_exact.csv": csv_text(["quantity", "value"], rows)}


def _judge_gaussian_exact(data):
    q = {r["quantity"]: float(r["value"]) for r in read_csv(data["gaussian_exact.csv"])}
    ok = (q["span_sup_residual"] < 1e-8 and q["span_off_center_coeff"] < 1e-8
          and abs(q["span_center_coeff"] - 1) < 1e-8 and q["linearity_rel_error"] < 1e-10)
    return ok, (f"in-span residual {q['span_sup_residual']:.1e}, off-center |a| {q['span_off_center_coeff']:.1e}, "
                f"linearity {q['linearity_rel_error']:.1e}")


# --- 3. Gaussian refinement --------------------------------------------------


def _produce_refinement():
    params = {**SCALING_DEFAULTS, "target": "gauss_bump", "d": 1, "complexities": "1,2,4,8", "method": "gaussian"}
    res = run_scaling_study(_cfg("scale", params))
    return {"refinement.csv": res.files["scaling_shallow.csv"]}


def _judge_refinement(data):
    rows = read_csv(data["refinement.csv"])
    errs = [float(r["error"]) for r in rows]
    ms = [float(r["n"]) for r in rows]
    slope = fit_scaling_exponent(list(zip(ms, errs))).slope
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ok = decreasing and errs[-1] < 1e-3 and slope <= -1
    listing = ", ".join(f"m={int(m)}: {e:.2e}" for m, e in zip(ms, errs))
    return ok, f"{listing}; strictly decreasing={decreasing}, slope {slope:.2f}"


# --- 4. Lipschitz propagation through a composition --------------------------


def _produce_lipschitz():
    rows = []
    for s in range(5):
        rng = np.random.default_rng(500 + s)
        h, h1, h2 = TrigNode(rng), TrigNode(rng), TrigNode(rng)
        table = composition_lipschitz_test(h, h1, h2, [1e-1, 1e-2, 1e-3])
        rows.append([s] + table.errors + [table.slope])
    return {"lipschitz.csv": csv_text(["seed", "err_1e-1", "err_1e-2", "err_1e-3", "slope"], rows)}


def _judge_lipschitz(data):
    slopes = [float(r["slope"]) for r in read_csv(data["lipschitz.csv"])]
    ok = all(abs(s - 1.0) <= 0.1 for s in slopes)
    return ok, "slopes " + ", ".join(f"{s:.3f}" for s in slopes)


# --- 5. cos4 depth separation at reduced scale -------------------------------

COS4_MASTER_SEEDS = (0, 1, 2, 3, 4)


def _produce_cos4():
    files = {}
    for seed in COS4_MASTER_SEEDS:
        params = {**cos4_defaults("reduced"), "archs": "1:24;2:12", "seed": seed, "traces": False}
        files[f"cos4_seed{seed}.csv"] = run_cos4(_cfg("cos4", params)).files["cos4.csv"]
    return files


def _judge_cos4(data):
    wins, beat, parts = 0, True, []
    for seed in COS4_MASTER_SEEDS:
        rows = {int(r["depth"]): float(r["best_test_rmse"]) for r in read_csv(data[f"cos4_seed{seed}.csv"])}
        shallow, deep = rows[1], rows[2]
        wins += deep <= shallow
        beat &= shallow < BASELINE_RMSE and deep < BASELINE_RMSE
        parts.append(f"{shallow:.4f}/{deep:.4f}")
    ok = wins >= 3 and beat
    return ok, f"deep<=shallow in {wins}/5 seeds, all below {BASELINE_RMSE:.4f}: {beat} (1x24/2x12: {', '.join(parts)})"


# --- 6. VC formulas ----------------------------------------------------------


def _produce_vc():
    rows = []
    for d in range(1, 11):
        for n in range(1, 6):
            rows.append(["shallow", d, n, vc_bounds("shallow", d, n), (d + 2) * n**2])
            rows.append(["tree", d, n, vc_bounds("tree", d, n), 4 * n**2 * (d - 1) ** 2])
    return {"vc.csv": csv_text(["kind", "d", "n", "value", "closed_form"], rows)}


def _judge_vc(data):
    rows = read_csv(data["vc.csv"])
    ok = len(rows) == 100 and all(r["value"] == r["closed_form"] for r in rows)
    ok &= vc_bounds("shallow", 8, 10) == 1000 and vc_bounds("tree", 8, 10) == 19600
    return ok, f"{len(rows)} cases match the closed forms"


# --- 7. Q construction ---------------------------------------------------------


def _produce_q():
    res = run_q_study(_cfg("qpoly", dict(QPOLY_DEFAULTS)))
    return {"qpoly_stages.csv": res.files["qpoly_stages.csv"], "qpoly_summary.csv": res.files["qpoly_summary.csv"]}


def _judge_q(data):
    summary = {r["quantity"]: r["value"] for r in read_csv(data["qpoly_summary.csv"])}
    stages = [float(r["sup_error"]) for r in read_csv(data["qpoly_stages.csv"]) if int(r["stage"]) > 0]
    ok = (int(summary["units"]) == 39 and int(summary["layers"]) == 11
          and int(summary["shallow_reference_units"]) == 2049 and len(stages) == 10 and max(stages) < 1e-2)
    return ok, (f"units {summary['units']}, layers {summary['layers']}, shallow reference "
                f"{summary['shallow_reference_units']}, worst squaring stage {max(stages):.1e}")


# --- 8. Boolean suite ------------------------------------------------------------


def _produce_boolean():
    rows = []
    for s in range(50):
        n = 2 + s % 9
        vals = random_function(n, 800 + s)
        table = fourier_expand(vals, n)
        parseval = abs(table.squared_norm() - float(np.mean(vals**2)))
        roundtrip = float(np.max(np.abs(table.values() - vals)))
        rows.append(["random", n, 800 + s, parseval, roundtrip])
    for n in (3, 6, 10):
        vals = random_function(n, 900 + n)
        table = fourier_expand(vals, n)
        pts = cube_points(n)
        pointwise = max(abs(reconstruct(table, x) - v) for x, v in zip(pts, vals))
        rows.append(["reconstruct", n, 900 + n, 0.0, pointwise])
    par = fourier_expand(parity, 8)
    low = low_order_approx(par, 7)[1]
    sparse = sparse_approx(par, 1)[1]
    rows.append(["parity8", 8, 0, low, sparse])
    return {"boolean.csv": csv_text(["case", "n", "seed", "a", "b"], rows)}


def _judge_boolean(data):
    rows = read_csv(data["boolean.csv"])
    rand = [r for r in rows if r["case"] == "random"]
    rec = [r for r in rows if r["case"] == "reconstruct"]
    par = [r for r in rows if r["case"] == "parity8"][0]
    parseval = max(float(r["a"]) for r in rand)
    inv = max(float(r["b"]) for r in rand + rec)
    ok = len(rand) == 50 and parseval <= 1e-12 and inv <= 1e-12 and float(par["a"]) == 1.0 and float(par["b"]) == 0.0
    return ok, (f"Parseval gap {parseval:.1e} over 50 functions, inversion error {inv:.1e}, "
                f"parity8 low-order(k=7) {float(par['a'])}, sparse(t=1) {float(par['b'])}")


# --- 9. scalable operators --------------------------------------------------------


def _position_dependent_layer(block):
    def layer(x):
        out = apply_layer(block, x)
        return out + np.arange(out.size) * 1e-3
    return layer


def _produce_scalable():
    rows = []
    for M in (1, 2, 3, 4):
        block = TrigNode(np.random.default_rng(900 + M))
        op = build_scalable_operator(block, M)
        tree = operator_as_tree_target(op)
        X = np.random.default_rng(950 + M).uniform(-1.0, 1.0, (100, 2**M))
        direct = np.array([op(x) for x in X])
        exact = bool(np.array_equal(direct, tree(X)))
        rows.append(["equivalence", M, int(exact)])
        mop = build_scalable_operator(block, M, mirror=True)
        mexact = bool(np.array_equal(np.array([mop(x) for x in X]), operator_as_tree_target(mop)(X)))
        rows.append(["mirror_equivalence", M, int(mexact)])
    block = TrigNode(np.random.default_rng(990))
    for width in (4, 8, 16):
        rows.append(["shift_invariance", width, int(check_shift_invariance(block, width, 100, seed=width).passed)])
        rows.append(["mirror_shift_invariance", width,
                     int(check_shift_invariance(block, width, 100, mirror=True, seed=width).passed)])
    neg = check_shift_invariance(block, 8, 10, layer=_position_dependent_layer(block))
    rows.append(["negative_control_fails", 8, int(not neg.passed and neg.counterexample is not None)])
    return {"scalable.csv": csv_text(["check", "size", "ok"], rows)}


def _judge_scalable(data):
    rows = read_csv(data["scalable.csv"])
    bad = [f"{r['check']}({r['size']})" for r in rows if r["ok"] != "1"]
    return not bad, "all checks passed" if not bad else "failed: " + ", ".join(bad)


CRITERIA = [
    Criterion(1, "gradient correctness", 30, _produce_gradients, _judge_gradients),
    Criterion(2, "Gaussian exactness and linearity", 10, _produce_gaussian_exact, _judge_gaussian_exact),
    Criterion(3, "Gaussian refinement (gauss_bump, m=1,2,4,8)", 60, _produce_refinement, _judge_refinement),
    Criterion(4, "composition Lipschitz scaling", 30, _produce_lipschitz, _judge_lipschitz),
    Criterion(5, "cos4 depth separation (reduced)", 900, _produce_cos4, _judge_cos4),
    Criterion(6, "VC formulas", 1, _produce_vc, _judge_vc),
    Criterion(7, "Q construction bookkeeping", 300, _produce_q, _judge_q),
    Criterion(8, "Boolean suite", 60, _produce_boolean, _judge_boolean),
    Criterion(9, "scalable-operator equivalence", 10, _produce_scalable, _judge_scalable),
]


def run_criterion(c: Criterion):
    start = time.perf_counter()
    data = c.produce()
    passed, detail = c.judge(data)
    seconds = time.perf_counter() - start
    if seconds > c.budget:
        passed, detail = False, detail + f"; runtime {seconds:.1f}s over budget {c.budget:g}s"
    return Outcome(c.number, c.name, passed, detail, seconds, c.budget), data


def format_outcome(o: Outcome) -> str:
    return f"[{'PASS' if o.passed else 'FAIL'}] {o.number:>2}. {o.name}: {o.detail} ({o.seconds:.1f}s)"


def run_acceptance(only=None, out_dir: Path | None = None, echo: bool = True) -> list[Outcome]:
    """Run criteria (all by default), print one line each, optionally write their data."""
    selected = [c for c in CRITERIA if only is None or c.number in only]
    outcomes, produced = [], {}
    for c in selected:
        outcome, data = run_criterion(c)
        produced[c.number] = data
        outcomes.append(outcome)
        if echo:
            print(format_outcome(outcome), flush=True)
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            for name, text in data.items():
                (out_dir / name).write_text(text)
    if only is None or 10 in only:
        start = time.perf_counter()
        if not produced:
            produced = {c.number: c.produce() for c in CRITERIA}
        diffs = [f"{num}:{name}" for c in CRITERIA if c.number in produced
                 for num, again in [(c.number, c.produce())]
                 for name in produced[num] if again.get(name) != produced[num][name]]
        o = Outcome(10, "determinism (byte-identical re-runs)", not diffs,
                    f"{sum(len(d) for d in produced.values())} data files re-produced"
                    + ("" if not diffs else "; differing: " + ", ".join(diffs)),
                    time.perf_counter() - start, float("inf"))
        outcomes.append(o)
        if echo:
            print(format_outcome(o), flush=True)
    return outcomes
