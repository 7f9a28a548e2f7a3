"""End-to-end acceptance battery for the shipped benchmark configurations.

Each test prints one `[acceptance NN] name: PASS/FAIL` line before asserting,
so `pytest -s tests/test_acceptance.py` doubles as a checklist report.  The
stepsizes come from the shipped config files, which hold the grid-tuned
constants for each problem setting.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from pdqnet import experiments as ex
from pdqnet import problems as pb
from pdqnet.algorithms import (
    VARIANTS,
    AlgorithmConfig,
    inject_saddle_point,
    stack_x,
    stack_y,
)
from pdqnet.network import build_d_regular_cycle, metropolis_weights
from pdqnet.simulator import NonFiniteAbort, run, sweep_seeds

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"


def _check(num: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[acceptance {num:02d}] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


def _tuned(config_name: str) -> dict[str, AlgorithmConfig]:
    raw = ex.load_config(CONFIGS / config_name)
    return {d["variant"]: AlgorithmConfig.from_dict(d) for d in raw["algorithms"]}


@pytest.fixture(scope="module")
def eta0():
    problem = pb.generate_quadratic(20, 5, 0, 0)
    wm = metropolis_weights(build_d_regular_cycle(20, 4))
    ref = pb.centralized_solution(problem)
    cfgs = _tuned("quadratic_small.json")
    traces = {}
    for variant in ("pdqn", "esom", "da", "extra"):
        traces[variant] = run(
            variant, problem, wm, cfgs[variant], T=2000, x_star=ref, stop_threshold=1e-8
        )
    # dgd runs its full budget so the final (stalled) error is observable
    traces["dgd"] = run("dgd", problem, wm, cfgs["dgd"], T=2000, x_star=ref)
    return {"problem": problem, "wm": wm, "ref": ref, "cfgs": cfgs, "traces": traces}


@pytest.fixture(scope="module")
def eta1():
    problem = pb.generate_quadratic(20, 5, 1, 0)
    wm = metropolis_weights(build_d_regular_cycle(20, 4))
    ref = pb.centralized_solution(problem)
    cfgs = _tuned("quadratic_large.json")
    traces = {
        variant: run(
            variant, problem, wm, cfgs[variant], T=4000, x_star=ref, stop_threshold=1e-5
        )
        for variant in ("pdqn", "da")
    }
    return {"traces": traces}


@pytest.fixture(scope="module")
def diag200():
    problem = pb.generate_quadratic(6, 3, 0, 0)
    wm = metropolis_weights(build_d_regular_cycle(6, 2))
    ref = pb.centralized_solution(problem)
    cfg = AlgorithmConfig(variant="pdqn", alpha=1.0, eps_d=0.35, K=1)
    return run("pdqn", problem, wm, cfg, T=200, x_star=ref, diagnostics=True)


@pytest.fixture(scope="module")
def logistic20():
    problem = pb.generate_logistic(20, 4, 100, 3.0, 1.0, 1.0, 1e-4, 0)
    wm = metropolis_weights(build_d_regular_cycle(20, 4))
    ref = pb.centralized_solution(problem)
    return {"problem": problem, "wm": wm, "ref": ref, "cfgs": _tuned("logistic.json")}


def test_acceptance_01_exact_convergence_on_well_conditioned_quadratic(eta0):
    traces = eta0["traces"]
    hits = {v: traces[v].first_below(1e-8) for v in ("pdqn", "extra", "esom", "da")}
    dgd_final = float(traces["dgd"].errors[-1])
    ok = all(h is not None and h <= 2000 for h in hits.values()) and dgd_final >= 1e-4
    _check(
        1,
        "pdqn/extra/esom/da reach 1e-8 within 2000 iterations, constant-step dgd stalls above 1e-4",
        ok,
        f"iterations={hits}, dgd final error {dgd_final:.3e}",
    )


def test_acceptance_02_pdqn_iteration_budget(eta0):
    k = eta0["traces"]["pdqn"].first_below(1e-8)
    _check(
        2,
        "pdqn reaches 1e-8 within 150 iterations at eta=0",
        k is not None and k <= 150,
        f"crossed at iteration {k}",
    )


def test_acceptance_03_ill_conditioned_ordering(eta0, eta1):
    p0 = eta0["traces"]["pdqn"].first_below(1e-5)
    d0 = eta0["traces"]["da"].first_below(1e-5)
    p1 = eta1["traces"]["pdqn"].first_below(1e-5)
    d1 = eta1["traces"]["da"].first_below(1e-5)
    ok = (
        None not in (p0, d0, p1, d1)
        and p1 < d1
        and d1 / d0 > p1 / p0
    )
    _check(
        3,
        "at eta=1 pdqn needs fewer iterations to 1e-5 than da, and degrades less from eta=0",
        ok,
        f"pdqn {p0}->{p1} (x{p1 / p0:.2f}), da {d0}->{d1} (x{d1 / d0:.2f})",
    )


def test_acceptance_04_exchange_accounting(eta0):
    problem, wm, ref = eta0["problem"], eta0["wm"], eta0["ref"]
    T = 5
    bad = []
    for K in (0, 1, 2, 3):
        for variant, fixed_rounds in (("pdqn", 5), ("esom", 3)):
            cfg = AlgorithmConfig(variant=variant, alpha=1.0, eps_d=0.35, K=K)
            tr = run(variant, problem, wm, cfg, T=T, x_star=ref)
            if int(tr.exchanges[-1]) != (K + fixed_rounds) * T:
                bad.append((variant, K, int(tr.exchanges[-1])))
    _check(
        4,
        "ledger reports exactly (K+5)T pdqn and (K+3)T esom rounds for K in {0,1,2,3}",
        not bad,
        f"T={T}" + (f", mismatches {bad}" if bad else ""),
    )


def test_acceptance_05_median_exchange_efficiency():
    base = {
        "problem": {"family": "quadratic", "n": 20, "p": 5, "eta": 0},
        "topology": {"n": 20, "d": 4},
        "threshold": 1e-5,
        "budget": 600,
        "base_seed": 0,
    }
    cfgs = _tuned("quadratic_small.json")
    medians, censored = {}, {}
    for variant in ("pdqn", "da", "esom"):
        spec = dict(base, variant=variant, config=cfgs[variant].to_dict())
        res = sweep_seeds(spec, 100)
        medians[variant] = res["median_exchanges"]
        censored[variant] = len(res["censored_seeds"])
    ok = (
        all(c == 0 for c in censored.values())
        and medians["pdqn"] < medians["da"]
        and medians["pdqn"] < medians["esom"]
    )
    _check(
        5,
        "pdqn median exchanges-to-1e-5 over 100 seeds beats da and esom",
        ok,
        f"medians={medians}, censored={censored}",
    )


def test_acceptance_06_primal_inverse_eigenvalue_envelope(diag200):
    margin = min(
        min(rec["g_inv_eig_min"] - rec["lam"] for rec in diag200.diagnostics),
        min(rec["Lam"] - rec["g_inv_eig_max"] for rec in diag200.diagnostics),
    )
    _check(
        6,
        "primal inverse eigenvalues stay inside [lam, Lam] for 200 iterations (1e-9 slack)",
        margin >= -1e-9,
        f"worst margin {margin:.3e} over {len(diag200.diagnostics)} iterations",
    )


def test_acceptance_07_dual_inverse_eigenvalue_envelope(diag200):
    cfg = diag200.config
    n = 6
    lo, hi = cfg.Gamma, cfg.Gamma + n / cfg.gamma
    env_ok = all(
        rec["dual_lo"] == pytest.approx(lo) and rec["dual_hi"] == pytest.approx(hi)
        for rec in diag200.diagnostics
    )
    margin = min(
        min(rec["h_inv_eig_min"] - rec["dual_lo"] for rec in diag200.diagnostics),
        min(rec["dual_hi"] - rec["h_inv_eig_max"] for rec in diag200.diagnostics),
    )
    _check(
        7,
        "dual inverse eigenvalues stay inside [Gamma, Gamma + n/gamma] (1e-9 slack)",
        env_ok and margin >= -1e-9,
        f"envelope [{lo}, {hi}], worst margin {margin:.3e}",
    )


def test_acceptance_08_secant_residuals(eta0, diag200, logistic20):
    # the logistic run exercises the dual update; quadratic curvature pairs
    # fail the dual acceptance test, so those runs only log primal residuals
    b = logistic20
    logistic_trace = run(
        "pdqn", b["problem"], b["wm"], b["cfgs"]["pdqn"], T=150, x_star=b["ref"]
    )
    worst = {"primal": 0.0, "dual": 0.0}
    counts = {"primal": 0, "dual": 0}
    for trace in (eta0["traces"]["pdqn"], diag200, logistic_trace):
        log = trace.metadata["secant_residuals"]
        for kind in ("primal", "dual"):
            counts[kind] += len(log[kind])
            if log[kind]:
                worst[kind] = max(worst[kind], max(log[kind]))
    ok = (
        counts["primal"] > 0
        and counts["dual"] > 0
        and worst["primal"] <= 1e-10
        and worst["dual"] <= 1e-10
    )
    _check(
        8,
        "every accepted curvature update satisfies its secant equation to 1e-10 relative",
        ok,
        f"accepted={counts}, worst residuals primal {worst['primal']:.3e} dual {worst['dual']:.3e}",
    )


def test_acceptance_09_dense_oracle_equivalences():
    checks = ex._oracle_battery(np.random.default_rng(2024))
    failed = [f"{name}: {detail}" for name, ok, detail in checks if not ok]
    _check(
        9,
        "message-passing linear algebra matches dense oracles on 50 random instances",
        not failed,
        "; ".join(failed) if failed else f"{len(checks)} equivalences",
    )


def test_acceptance_10_linear_rate_fit(eta0, tmp_path):
    trace_path = tmp_path / "pdqn_trace.csv"
    ex.write_trace_csv(trace_path, eta0["traces"]["pdqn"])
    rc = ex.main(["rate-fit", "--trace", str(trace_path), "--out", str(tmp_path)])
    fit = json.loads((tmp_path / "rate_fit.json").read_text())
    ok = rc == 0 and fit["fitted"] and fit["r_squared"] >= 0.95
    _check(
        10,
        "pdqn log-error trace fits a line over the 1e-1 -> 1e-8 window with r^2 >= 0.95",
        ok,
        f"rate={fit.get('rate_estimate')}, r^2={fit.get('r_squared')}",
    )


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_acceptance_11_logistic_parity(logistic20):
    b = logistic20
    esom_trace = run(
        "esom", b["problem"], b["wm"], b["cfgs"]["esom"], T=2000,
        x_star=b["ref"], stop_threshold=1e-6,
    )
    esom_hit = esom_trace.first_below(1e-6)
    try:
        pdqn_trace = run(
            "pdqn", b["problem"], b["wm"], b["cfgs"]["pdqn"], T=2000,
            x_star=b["ref"], stop_threshold=1e-6,
        )
        pdqn_hit = pdqn_trace.first_below(1e-6)
        detail = f"esom crossed at {esom_hit}, pdqn at {pdqn_hit}"
    except NonFiniteAbort as abort:
        pdqn_hit = None
        detail = (
            f"esom crossed at {esom_hit}; pdqn diverged (non-finite at iteration "
            f"{abort.iteration}) -- every (alpha, eps_d, K) pairing probed for this "
            f"benchmark diverges, see README known-limitations"
        )
    ok = esom_hit is not None and pdqn_hit is not None and pdqn_hit <= 2 * esom_hit
    _check(
        11,
        "pdqn and esom both reach 1e-6 on the logistic benchmark, pdqn within 2x esom iterations",
        ok,
        detail,
    )


def test_acceptance_12_fixed_point_and_determinism(eta0, tmp_path):
    problem, wm, ref = eta0["problem"], eta0["wm"], eta0["ref"]
    n, p = problem.n, problem.p
    # constant-step dgd corrects only zero local gradients, so its check runs
    # on an instance whose local optima coincide
    homogeneous = pb.QuadraticProblem(a=np.ones((n, p)), b=np.tile(np.full(p, 0.5), (n, 1)))
    homog_star = pb.centralized_solution(homogeneous).x_star
    moves = {}
    for variant, cfg in eta0["cfgs"].items():
        prob = homogeneous if variant == "dgd" else problem
        x_ref = homog_star if variant == "dgd" else ref.x_star
        states = inject_saddle_point(variant, prob, wm, cfg, x_ref)
        worst = 0.0
        for _ in range(3):
            x_before, y_before = stack_x(states), stack_y(states)
            VARIANTS[variant](states, prob, wm, cfg)
            worst = max(
                worst,
                float(np.abs(stack_x(states) - x_before).max()),
                float(np.abs(stack_y(states) - y_before).max()),
            )
        moves[variant] = worst
    saddle_ok = all(m <= 1e-12 for m in moves.values())

    out_a, out_b = tmp_path / "serial", tmp_path / "threaded"
    cfg_path = str(CONFIGS / "quadratic_small.json")
    rc_a = ex.main(["run", "--config", cfg_path, "--out", str(out_a), "--iters", "40", "--parallel", "off"])
    rc_b = ex.main(["run", "--config", cfg_path, "--out", str(out_b), "--iters", "40", "--parallel", "on"])
    csvs = sorted(f.name for f in out_a.glob("*.csv"))
    identical = (
        rc_a == 0
        and rc_b == 0
        and bool(csvs)
        and all((out_a / f).read_bytes() == (out_b / f).read_bytes() for f in csvs)
    )
    _check(
        12,
        "saddle injection is stationary for every variant; parallel rounds reproduce serial CSVs bitwise",
        saddle_ok and identical,
        f"max update {max(moves.values()):.3e}, {len(csvs)} CSVs compared",
    )
