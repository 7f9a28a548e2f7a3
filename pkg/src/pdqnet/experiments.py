"""CLI front end: config ingestion, experiment orchestration, the invariant
validation suite, rate fitting, and CSV/SVG emission.

Subcommands: run, compare, validate, rate-fit, sweep.  Exit codes: 0 success,
1 validation failure (bad config / bad inputs), 2 invariant failure (runtime
contract broken: non-finite iterates, locality or ledger violations, failed
invariant checks).

CSV schema is versioned in a leading comment line; floats are written with
%.16e so emitted files are byte-deterministic and round-trip through the
reader exactly.  SVG figures are rendered from the emitted CSV data only
(regenerating from a CSV reproduces the SVG byte-for-byte)."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import problems as pb
from .algorithms import (
    AlgorithmConfig,
    VARIANT_NAMES,
    VARIANTS,
    inject_saddle_point,
    rounds_per_iteration,
    stack_x,
    stack_y,
)
from .network import (
    WeightMatrixError,
    apply_laplacian,
    build_d_regular_cycle,
    laplacian_dense,
    metropolis_weights,
    validate_weight_matrix,
    weight_matrix_from_entries,
)
from .quasi_newton import (
    assemble_global_dual_inverse,
    assemble_global_primal_inverse,
    dual_neighborhood_direction,
    neumann_descent,
    upsilon_diagonal,
)
from .simulator import (
    ExchangeAccountingError,
    LocalityError,
    NonFiniteAbort,
    compute_diagnostics,
    run,
    sweep_seeds,
)

__all__ = [
    "TRACE_CSV_VERSION",
    "load_config",
    "validate_experiment_config",
    "write_trace_csv",
    "read_trace_csv",
    "fit_linear_rate",
    "render_convergence_svg",
    "render_histogram_svg",
    "render_sweep_svg",
    "cmd_run",
    "cmd_compare",
    "cmd_validate",
    "cmd_rate_fit",
    "cmd_sweep",
    "main",
]

TRACE_CSV_VERSION = "trace-csv v1"
SUMMARY_CSV_VERSION = "summary-csv v1"
SWEEP_CSV_VERSION = "sweep-csv v1"

TRACE_COLUMNS = ("iteration", "error", "consensus_residual", "cumulative_exchanges")
DIAG_COLUMNS = (
    "lyapunov",
    "contraction",
    "kappa",
    "sigma_norm",
    "identity_residual",
    "g_inv_eig_min",
    "g_inv_eig_max",
    "h_inv_eig_min",
    "h_inv_eig_max",
    "lam",
    "Lam",
    "dual_lo",
    "dual_hi",
)

_SVG_HASHSALT = "pdqnet"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.16e}"


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


_TOP_KEYS = {
    "problem",
    "topology",
    "algorithms",
    "iterations",
    "seed",
    "threshold",
    "diagnostics",
    "parallel",
}


def validate_experiment_config(d: dict) -> list[str]:
    """Every schema violation in an experiment config (empty when valid)."""
    errors: list[str] = []
    if not isinstance(d, dict):
        return ["config must be a JSON object"]
    unknown = sorted(set(d) - _TOP_KEYS)
    if unknown:
        errors.append(f"unknown config keys: {unknown}")
    for key in ("problem", "topology", "algorithms", "iterations"):
        if key not in d:
            errors.append(f"config missing required key: {key}")
    if errors and any(k not in d for k in ("problem", "topology", "algorithms")):
        return errors

    problem_spec = d.get("problem", {})
    errors.extend(pb.validate_problem_spec(problem_spec))

    topo = d.get("topology", {})
    if not isinstance(topo, dict):
        errors.append("topology must be an object with keys n, d")
    else:
        unknown_t = sorted(set(topo) - {"n", "d", "weights"})
        if unknown_t:
            errors.append(f"unknown topology keys: {unknown_t}")
        for key in ("n", "d"):
            if not isinstance(topo.get(key), int):
                errors.append(f"topology {key} must be an integer, got {topo.get(key)!r}")
        if (
            isinstance(topo.get("n"), int)
            and isinstance(problem_spec.get("n"), int)
            and topo["n"] != problem_spec["n"]
        ):
            errors.append(
                f"topology n={topo['n']} does not match problem n={problem_spec['n']}"
            )

    algos = d.get("algorithms")
    if not isinstance(algos, list) or len(algos) == 0:
        errors.append("algorithms must be a nonempty list of algorithm configs")
    else:
        seen = set()
        for k, entry in enumerate(algos):
            try:
                cfg = AlgorithmConfig.from_dict(entry)
            except (ValueError, TypeError) as exc:
                errors.append(f"algorithms[{k}]: {exc}")
                continue
            if cfg.variant in seen:
                errors.append(f"algorithms[{k}]: duplicate variant {cfg.variant!r}")
            seen.add(cfg.variant)
            if cfg.variant == "da" and problem_spec.get("family") == "logistic":
                errors.append(
                    f"algorithms[{k}]: da requires a quadratic problem "
                    "(no closed-form inner minimizer for logistic)"
                )

    if "iterations" in d and not (isinstance(d["iterations"], int) and d["iterations"] >= 1):
        errors.append(f"iterations must be a positive integer, got {d.get('iterations')!r}")
    if "seed" in d and not isinstance(d["seed"], int):
        errors.append(f"seed must be an integer, got {d.get('seed')!r}")
    if "threshold" in d and not (
        isinstance(d["threshold"], (int, float)) and d["threshold"] > 0
    ):
        errors.append(f"threshold must be positive, got {d.get('threshold')!r}")
    for key in ("diagnostics", "parallel"):
        if key in d and not isinstance(d[key], bool):
            errors.append(f"{key} must be a boolean, got {d.get(key)!r}")
    return errors


def _apply_overrides(d: dict, args) -> dict:
    d = dict(d)
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        d["iterations"] = args.iters
    if getattr(args, "threshold", None) is not None:
        d["threshold"] = args.threshold
    if getattr(args, "diagnostics", None) is not None:
        d["diagnostics"] = args.diagnostics == "on"
    if getattr(args, "parallel", None) is not None:
        d["parallel"] = args.parallel == "on"
    return d


def _build(d: dict) -> dict:
    """Instantiate every component of a validated config."""
    topo = build_d_regular_cycle(d["topology"]["n"], d["topology"]["d"])
    if "weights" in d["topology"]:
        wm = weight_matrix_from_entries(topo, np.array(d["topology"]["weights"], float))
    else:
        wm = metropolis_weights(topo)
    seed = int(d.get("seed", 0))
    problem = pb.problem_from_spec(d["problem"], seed)
    reference = pb.centralized_solution(problem)
    return {
        "topology": topo,
        "wm": wm,
        "problem": problem,
        "reference": reference,
        "algorithms": [AlgorithmConfig.from_dict(a) for a in d["algorithms"]],
        "iterations": int(d["iterations"]),
        "threshold": float(d.get("threshold", 1e-8)),
        "diagnostics": bool(d.get("diagnostics", False)),
        "parallel": bool(d.get("parallel", False)),
        "seed": seed,
    }


# ---------------------------------------------------------------------------
# CSV emission / ingestion


def write_trace_csv(path, trace) -> None:
    cfg = trace.config
    meta = (
        f"variant={cfg.variant} seed={trace.seed if trace.seed is not None else -1} "
        f"problem={trace.problem_digest} alpha={_fmt(cfg.alpha)} eps_d={_fmt(cfg.eps_d)} "
        f"K={cfg.K} gamma={_fmt(cfg.gamma)} Gamma={_fmt(cfg.Gamma)} "
        f"primal_step={_fmt(cfg.primal_step)}"
    )
    has_diag = trace.diagnostics is not None
    columns = TRACE_COLUMNS + (DIAG_COLUMNS if has_diag else ())
    lines = [f"# {TRACE_CSV_VERSION}", f"# {meta}", ",".join(columns)]
    for t in range(len(trace.errors)):
        row = [
            str(t),
            _fmt(trace.errors[t]),
            _fmt(trace.consensus[t]),
            str(int(trace.exchanges[t])),
        ]
        if has_diag:
            rec = trace.diagnostics[t - 1] if t >= 1 else None
            for col in DIAG_COLUMNS:
                row.append(_fmt(rec[col]) if rec is not None else "nan")
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace_csv(path) -> dict:
    """Parse a trace CSV back into metadata plus named column arrays."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing version comment line")
    version = lines[0][1:].strip()
    if version != TRACE_CSV_VERSION:
        raise ValueError(f"{path}: unsupported schema {version!r}")
    meta_raw = lines[1][1:].strip() if lines[1].startswith("#") else ""
    meta = {}
    for part in meta_raw.split():
        key, _, val = part.partition("=")
        meta[key] = val
    header_idx = 2 if lines[1].startswith("#") else 1
    columns = lines[header_idx].split(",")
    data = {c: [] for c in columns}
    for ln in lines[header_idx + 1 :]:
        for c, cell in zip(columns, ln.split(",")):
            data[c].append(float(cell))
    arrays = {c: np.array(v) for c, v in data.items()}
    return {"version": version, "meta": meta, "columns": arrays}


def _summary_rows(traces: dict, threshold: float) -> list[dict]:
    rows = []
    for variant, trace in traces.items():
        cfg = trace.config
        k = trace.first_below(threshold)
        rows.append(
            {
                "variant": variant,
                "iterations_to_threshold": -1 if k is None else k,
                "exchanges_to_threshold": -1 if k is None else int(trace.exchanges[k]),
                "final_error": float(trace.errors[-1]),
                "alpha": cfg.alpha,
                "eps_d": cfg.eps_d,
                "K": cfg.K,
                "gamma": cfg.gamma,
                "Gamma": cfg.Gamma,
                "primal_step": cfg.primal_step,
            }
        )
    return rows


def write_summary_csv(path, rows: list[dict], threshold: float) -> None:
    cols = (
        "variant",
        "iterations_to_threshold",
        "exchanges_to_threshold",
        "final_error",
        "alpha",
        "eps_d",
        "K",
        "gamma",
        "Gamma",
        "primal_step",
    )
    lines = [
        f"# {SUMMARY_CSV_VERSION}",
        f"# threshold={_fmt(threshold)}",
        ",".join(cols),
    ]
    for row in rows:
        lines.append(
            ",".join(
                str(row[c]) if c in ("variant", "iterations_to_threshold", "exchanges_to_threshold", "K") else _fmt(row[c])
                for c in cols
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# SVG rendering (pure functions of CSV files)


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=True)
    matplotlib.rcParams["svg.hashsalt"] = _SVG_HASHSALT
    import matplotlib.pyplot as plt

    return plt


def _save_svg(fig, out_path):
    fig.savefig(out_path, format="svg", metadata={"Date": None})


def render_convergence_svg(csv_paths, out_path, x_column: str = "iteration", title: str = "") -> None:
    """Log-error convergence figure built from emitted trace CSVs."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for path in csv_paths:
        parsed = read_trace_csv(path)
        cols = parsed["columns"]
        label = parsed["meta"].get("variant", Path(path).stem)
        err = cols["error"]
        x = cols[x_column]
        mask = err > 0
        ax.semilogy(x[mask], err[mask], label=label)
    ax.set_xlabel("cumulative exchanges per node" if x_column == "cumulative_exchanges" else "iteration")
    ax.set_ylabel("relative error")
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, out_path)
    plt.close(fig)


def render_histogram_svg(sweep_csv_path, out_path, title: str = "") -> None:
    """Histogram of exchanges-to-threshold per variant from a sweep CSV."""
    plt = _plt()
    rows = _read_sweep_csv(sweep_csv_path)
    by_variant: dict[str, list[float]] = {}
    censored: dict[str, int] = {}
    for row in rows:
        v = row["variant"]
        if row["status"] == "crossed":
            by_variant.setdefault(v, []).append(float(row["exchanges"]))
        else:
            censored[v] = censored.get(v, 0) + 1
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for v in sorted(by_variant):
        ax.hist(by_variant[v], bins=20, alpha=0.55, label=f"{v} (censored: {censored.get(v, 0)})")
    ax.set_xlabel("exchanges to threshold per node")
    ax.set_ylabel("trial count")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, out_path)
    plt.close(fig)


def render_sweep_svg(sweep_csv_path, out_path, title: str = "") -> None:
    """Iterations-to-threshold versus the swept value, one line per variant."""
    plt = _plt()
    rows = _read_sweep_csv(sweep_csv_path)
    by_variant: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        v = row["variant"]
        it = float(row["iterations"]) if row["status"] == "crossed" else np.nan
        by_variant.setdefault(v, []).append((float(row["value"]), it))
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for v in sorted(by_variant):
        pts = sorted(by_variant[v])
        ax.plot([a for a, _ in pts], [b for _, b in pts], marker="o", label=v)
    ax.set_xlabel("swept value")
    ax.set_ylabel("iterations to threshold")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, out_path)
    plt.close(fig)


def _write_sweep_csv(path, axis: str, rows: list[dict]) -> None:
    cols = ("axis", "value", "variant", "status", "iterations", "exchanges", "final_error")
    lines = [f"# {SWEEP_CSV_VERSION}", f"# axis={axis}", ",".join(cols)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_sweep_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]
    if not lines or lines[0][1:].strip() != SWEEP_CSV_VERSION:
        raise ValueError(f"{path}: not a {SWEEP_CSV_VERSION} file")
    header_idx = 2 if lines[1].startswith("#") else 1
    cols = lines[header_idx].split(",")
    return [dict(zip(cols, ln.split(","))) for ln in lines[header_idx + 1 :]]


# ---------------------------------------------------------------------------
# rate fitting


def fit_linear_rate(errors: np.ndarray) -> dict:
    """Least-squares geometric rate over the window from the first iteration
    with error below 1e-1 to the first below 1e-8.  Needs at least 3 points
    and 3 decades of decay inside the window; otherwise reports no-fit."""
    errors = np.asarray(errors, dtype=float)
    below_hi = np.nonzero(errors < 1e-1)[0]
    below_lo = np.nonzero(errors < 1e-8)[0]
    if below_hi.size == 0 or below_lo.size == 0:
        return {
            "fitted": False,
            "reason": "trace never enters the 1e-1 to 1e-8 fit window",
            "rate_estimate": None,
            "r_squared": None,
            "window": None,
            "n_points": 0,
        }
    start, end = int(below_hi[0]), int(below_lo[0])
    t = np.arange(start, end + 1)
    window = errors[start : end + 1]
    valid = np.isfinite(window) & (window > 0)
    t, window = t[valid], window[valid]
    if t.size < 3:
        return {
            "fitted": False,
            "reason": f"window [{start}, {end}] has fewer than 3 usable points",
            "rate_estimate": None,
            "r_squared": None,
            "window": (start, end),
            "n_points": int(t.size),
        }
    logs = np.log(window)
    decades = (logs.max() - logs.min()) / np.log(10.0)
    if decades < 3.0:
        return {
            "fitted": False,
            "reason": f"window spans only {decades:.2f} decades (need 3)",
            "rate_estimate": None,
            "r_squared": None,
            "window": (start, end),
            "n_points": int(t.size),
        }
    slope, intercept = np.polyfit(t, logs, 1)
    fit = slope * t + intercept
    ss_res = float(np.sum((logs - fit) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return {
        "fitted": True,
        "reason": None,
        "rate_estimate": float(np.exp(slope)),
        "r_squared": float(r2),
        "window": (start, end),
        "n_points": int(t.size),
    }


# ---------------------------------------------------------------------------
# subcommands


def _execute_variants(bundle, diagnostics_variants=(), stop_at_threshold=False):
    """Run every configured variant; returns (traces, aborts)."""
    traces, aborts = {}, {}
    for cfg in bundle["algorithms"]:
        try:
            traces[cfg.variant] = run(
                cfg.variant,
                bundle["problem"],
                bundle["wm"],
                cfg,
                T=bundle["iterations"],
                x_star=bundle["reference"],
                diagnostics=cfg.variant in diagnostics_variants,
                parallel=bundle["parallel"],
                stop_threshold=bundle["threshold"] if stop_at_threshold else None,
                seed=bundle["seed"],
            )
        except NonFiniteAbort as exc:
            aborts[cfg.variant] = exc
    return traces, aborts


def _report_config_errors(errors) -> int:
    for e in errors:
        print(f"config error: {e}", file=sys.stderr)
    return 1


def _write_abort_snapshots(out_dir, aborts) -> None:
    for variant, exc in aborts.items():
        snap_path = Path(out_dir) / f"{variant}_abort.json"
        snap_path.write_text(json.dumps(exc.snapshot, indent=1), encoding="utf-8")
        print(
            f"{variant}: aborted at iteration {exc.iteration} "
            f"(snapshot: {snap_path})",
            file=sys.stderr,
        )


def cmd_run(args) -> int:
    raw = load_config(args.config)
    raw = _apply_overrides(raw, args)
    errors = validate_experiment_config(raw)
    if errors:
        return _report_config_errors(errors)
    bundle = _build(raw)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    diag = {"pdqn"} if bundle["diagnostics"] else set()
    traces, aborts = _execute_variants(bundle, diagnostics_variants=diag)
    csv_paths = []
    for variant, trace in traces.items():
        path = out_dir / f"{variant}_trace.csv"
        write_trace_csv(path, trace)
        csv_paths.append(path)
    rows = _summary_rows(traces, bundle["threshold"])
    write_summary_csv(out_dir / "summary.csv", rows, bundle["threshold"])
    if csv_paths:
        render_convergence_svg(csv_paths, out_dir / "convergence.svg", "iteration")
    for row in rows:
        print(
            f"{row['variant']}: iterations_to_threshold={row['iterations_to_threshold']} "
            f"exchanges={row['exchanges_to_threshold']} final_error={row['final_error']:.3e}"
        )
    if aborts:
        _write_abort_snapshots(out_dir, aborts)
        return 2
    return 0


def cmd_compare(args) -> int:
    raw = load_config(args.config)
    raw = _apply_overrides(raw, args)
    errors = validate_experiment_config(raw)
    if isinstance(raw.get("algorithms"), list) and len(raw["algorithms"]) < 2:
        errors.append("compare needs at least 2 algorithms")
    if errors:
        return _report_config_errors(errors)
    bundle = _build(raw)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces, aborts = _execute_variants(bundle)
    csv_paths = []
    for variant, trace in traces.items():
        path = out_dir / f"{variant}_trace.csv"
        write_trace_csv(path, trace)
        csv_paths.append(path)
    rows = _summary_rows(traces, bundle["threshold"])
    write_summary_csv(out_dir / "summary.csv", rows, bundle["threshold"])
    if csv_paths:
        render_convergence_svg(
            csv_paths, out_dir / "compare_iterations.svg", "iteration"
        )
        render_convergence_svg(
            csv_paths, out_dir / "compare_exchanges.svg", "cumulative_exchanges"
        )
    for row in rows:
        print(
            f"{row['variant']}: iterations_to_threshold={row['iterations_to_threshold']} "
            f"exchanges={row['exchanges_to_threshold']} final_error={row['final_error']:.3e}"
        )
    if aborts:
        _write_abort_snapshots(out_dir, aborts)
        return 2
    return 0


def _oracle_battery(rng) -> list[tuple[str, bool, str]]:
    """Dense-oracle equivalence checks on small random instances."""
    checks = []
    lap_worst = 0.0
    series_worst = 0.0
    inverse_worst = 0.0
    dual_worst = 0.0
    for _ in range(50):
        n = int(rng.integers(3, 7))
        d = 2
        p = int(rng.integers(2, 5))
        topo = build_d_regular_cycle(n, d)
        wm = metropolis_weights(topo)
        x = rng.standard_normal((n, p))
        dense = laplacian_dense(wm, p)
        lap_blockwise = (np.eye(n) - wm.dense) @ x
        got = apply_laplacian(wm, x)
        lap_worst = max(lap_worst, float(np.abs(got - lap_blockwise).max()))
        direct = (dense @ x.ravel()).reshape(n, p)
        lap_worst = max(lap_worst, float(np.abs(got - direct).max()))

        # any draw: the recursion must match the dense truncated operator
        B = np.empty((n, p, p))
        for i in range(n):
            M = rng.standard_normal((p, p))
            B[i] = M @ M.T + 0.5 * np.eye(p)
        g = rng.standard_normal((n, p))
        alpha = float(rng.uniform(0.2, 2.0))
        K = int(rng.integers(0, 6))
        d_series = neumann_descent(g, B, wm, alpha, K)
        G_inv_K = assemble_global_primal_inverse(B, wm, alpha, K)
        d_dense = -(G_inv_K @ g.ravel()).reshape(n, p)
        series_worst = max(
            series_worst,
            float(np.linalg.norm(d_series - d_dense) / max(np.linalg.norm(d_dense), 1e-300)),
        )

        # curvature floor 1 and alpha <= 0.5 keep the series ratio below 0.45,
        # so the K=40 tail sits under the comparison tolerance
        B1 = np.empty((n, p, p))
        for i in range(n):
            M = rng.standard_normal((p, p))
            B1[i] = M @ M.T + np.eye(p)
        alpha1 = float(rng.uniform(0.1, 0.5))
        d_trunc = neumann_descent(g, B1, wm, alpha1, 40)
        D_blocks = np.zeros((n * p, n * p))
        for i in range(n):
            D_blocks[i * p : (i + 1) * p, i * p : (i + 1) * p] = B1[i]
        G_full = D_blocks + alpha1 * dense
        d_exact = -np.linalg.solve(G_full, g.ravel()).reshape(n, p)
        inverse_worst = max(
            inverse_worst,
            float(np.linalg.norm(d_trunc - d_exact) / max(np.linalg.norm(d_exact), 1e-300)),
        )

        gamma, Gamma = 0.1, 0.1
        C_blocks = []
        for i in range(n):
            m = topo.sizes[i]
            M = rng.standard_normal((m * p, m * p))
            C_blocks.append(M @ M.T + gamma * np.eye(m * p))
        h = rng.standard_normal((n, p))
        e = np.zeros((n, p))
        for i in range(n):
            ups = upsilon_diagonal(topo, i, p)
            h_nbhd = np.concatenate([h[j] for j in topo.neighborhoods[i]])
            e_nbhd = dual_neighborhood_direction(C_blocks[i], h_nbhd, Gamma, ups)
            for k, j in enumerate(topo.neighborhoods[i]):
                e[j] += e_nbhd[k * p : (k + 1) * p]
        H_inv = assemble_global_dual_inverse(C_blocks, Gamma, topo, p)
        e_exact = (H_inv @ h.ravel()).reshape(n, p)
        dual_worst = max(
            dual_worst,
            float(np.linalg.norm(e - e_exact) / max(np.linalg.norm(e_exact), 1e-300)),
        )
    checks.append(
        (
            "disagreement operator matches dense Kronecker form",
            lap_worst <= 1e-12,
            f"max abs deviation {lap_worst:.3e} (tol 1e-12)",
        )
    )
    checks.append(
        (
            "series primal descent matches dense truncated operator",
            series_worst <= 1e-12,
            f"max rel deviation {series_worst:.3e} (tol 1e-12)",
        )
    )
    checks.append(
        (
            "series primal descent matches dense inverse at K=40",
            inverse_worst <= 1e-8,
            f"max rel deviation {inverse_worst:.3e} (tol 1e-8)",
        )
    )
    checks.append(
        (
            "scattered dual direction matches dense assembled inverse",
            dual_worst <= 1e-10,
            f"max rel deviation {dual_worst:.3e} (tol 1e-10)",
        )
    )
    return checks


def _fixed_point_checks(bundle) -> list[tuple[str, bool, str]]:
    checks = []
    problem = bundle["problem"]
    wm = bundle["wm"]
    x_star = bundle["reference"].x_star
    if problem.family != "quadratic":
        return [
            (
                "fixed-point injection",
                True,
                "skipped: defined for quadratic problems",
            )
        ]
    n, p = problem.n, problem.p
    homogeneous = pb.QuadraticProblem(a=np.ones((n, p)), b=np.tile(np.full(p, 0.5), (n, 1)))
    homog_star = pb.centralized_solution(homogeneous).x_star
    for cfg in bundle["algorithms"]:
        variant = cfg.variant
        # constant-step mixing corrects only zero local gradients, so the
        # dgd check runs on an instance whose local optima all coincide
        prob = homogeneous if variant == "dgd" else problem
        ref = homog_star if variant == "dgd" else x_star
        states = inject_saddle_point(variant, prob, wm, cfg, ref)
        x_before, y_before = stack_x(states), stack_y(states)
        VARIANTS[variant](states, prob, wm, cfg)
        move = max(
            float(np.abs(stack_x(states) - x_before).max()),
            float(np.abs(stack_y(states) - y_before).max()),
        )
        checks.append(
            (
                f"{variant} saddle point is stationary",
                move <= 1e-12,
                f"max update magnitude {move:.3e} (tol 1e-12)",
            )
        )
    return checks


def cmd_validate(args) -> int:
    raw = load_config(args.config)
    raw = _apply_overrides(raw, args)
    errors = validate_experiment_config(raw)
    if errors:
        return _report_config_errors(errors)
    try:
        bundle = _build(raw)
    except WeightMatrixError as exc:
        print(f"weight-matrix validation failure: {exc}", file=sys.stderr)
        return 1

    checks: list[tuple[str, bool, str]] = []
    measured = validate_weight_matrix(bundle["wm"])
    checks.append(
        (
            "weight-matrix conditions",
            True,
            f"delta={measured['delta']:.4f} Delta={measured['Delta']:.4f} "
            f"second eigenvalue modulus={measured['second_eigenvalue_modulus']:.6f}",
        )
    )
    checks.extend(_oracle_battery(np.random.default_rng(2024)))
    checks.extend(_fixed_point_checks(bundle))

    for cfg in bundle["algorithms"]:
        try:
            trace = run(
                cfg.variant,
                bundle["problem"],
                bundle["wm"],
                cfg,
                T=3,
                x_star=bundle["reference"],
                seed=bundle["seed"],
            )
        except NonFiniteAbort as exc:
            checks.append((f"{cfg.variant} exchange schedule", False, str(exc)))
            continue
        per_iter = np.diff(trace.exchanges)
        expected = rounds_per_iteration(cfg.variant, cfg.K)
        ok = bool((per_iter == expected).all())
        checks.append(
            (
                f"{cfg.variant} exchange schedule",
                ok,
                f"rounds per iteration {sorted(set(per_iter.tolist()))} (declared {expected})",
            )
        )

    pdqn_cfgs = [c for c in bundle["algorithms"] if c.variant == "pdqn"]
    if pdqn_cfgs:
        cfg = pdqn_cfgs[0]
        T = min(60, bundle["iterations"])
        try:
            trace = run(
                "pdqn",
                bundle["problem"],
                bundle["wm"],
                cfg,
                T=T,
                x_star=bundle["reference"],
                diagnostics=True,
                seed=bundle["seed"],
            )
        except NonFiniteAbort as exc:
            checks.append(("pdqn diagnostic run", False, str(exc)))
            trace = None
        if trace is not None:
            recs = trace.diagnostics
            slack = 1e-9
            g_lo = min(r["g_inv_eig_min"] - (r["lam"] - slack) for r in recs)
            g_hi = min((r["Lam"] + slack) - r["g_inv_eig_max"] for r in recs)
            checks.append(
                (
                    "primal inverse eigenvalues inside measured envelope",
                    g_lo >= 0 and g_hi >= 0,
                    f"worst lower margin {g_lo:.3e}, worst upper margin {g_hi:.3e}",
                )
            )
            h_lo = min(r["h_inv_eig_min"] - (r["dual_lo"] - slack) for r in recs)
            h_hi = min((r["dual_hi"] + slack) - r["h_inv_eig_max"] for r in recs)
            checks.append(
                (
                    "dual inverse eigenvalues inside regularization envelope",
                    h_lo >= 0 and h_hi >= 0,
                    f"worst lower margin {h_lo:.3e}, worst upper margin {h_hi:.3e}",
                )
            )
            ident = max(r["identity_residual"] for r in recs)
            scale = max(1.0, max(r["sigma_norm"] for r in recs))
            checks.append(
                (
                    "stationarity identity holds at eps_d=1 scaling"
                    if cfg.eps_d == 1.0
                    else "stationarity identity residual recorded",
                    (ident <= 1e-7 * scale) if cfg.eps_d == 1.0 else True,
                    f"max residual {ident:.3e} (sigma scale {scale:.3e})",
                )
            )
            secants = trace.metadata["secant_residuals"]
            for kind in ("primal", "dual"):
                vals = secants[kind]
                if vals:
                    worst = max(vals)
                    checks.append(
                        (
                            f"accepted {kind} secant equations hold",
                            worst <= 1e-10,
                            f"max rel residual {worst:.3e} over {len(vals)} accepted updates",
                        )
                    )
                else:
                    checks.append(
                        (
                            f"accepted {kind} secant equations hold",
                            True,
                            "no accepted updates in the probe run",
                        )
                    )

    failed = [c for c in checks if not c[1]]
    for name, ok, detail in checks:
        print(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
    if failed:
        print(f"{len(failed)} invariant check(s) failed", file=sys.stderr)
        return 2
    print(f"all {len(checks)} invariant checks passed")
    return 0


def cmd_rate_fit(args) -> int:
    try:
        parsed = read_trace_csv(args.trace)
    except (OSError, ValueError) as exc:
        print(f"cannot read trace: {exc}", file=sys.stderr)
        return 1
    result = fit_linear_rate(parsed["columns"]["error"])
    if result["fitted"]:
        print(
            f"rate_estimate={result['rate_estimate']:.6f} "
            f"r_squared={result['r_squared']:.6f} "
            f"window=[{result['window'][0]}, {result['window'][1]}] "
            f"n_points={result['n_points']}"
        )
    else:
        print(f"no-fit: {result['reason']}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        payload = dict(result)
        if payload["window"] is not None:
            payload["window"] = list(payload["window"])
        (out_dir / "rate_fit.json").write_text(
            json.dumps(payload, indent=1), encoding="utf-8"
        )
    return 0


def cmd_sweep(args) -> int:
    raw = load_config(args.config)
    raw = _apply_overrides(raw, args)
    errors = validate_experiment_config(raw)
    axis = args.axis
    values = args.values
    if axis in ("eta", "K", "alpha"):
        if not values:
            errors.append(f"axis {axis!r} needs --values")
        if axis == "K" and values and any(float(v) != int(float(v)) or float(v) < 0 for v in values):
            errors.append("K values must be nonnegative integers")
    if errors:
        return _report_config_errors(errors)
    bundle = _build(raw)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []

    def one_cell(value_label, variant, cfg, problem, reference):
        try:
            trace = run(
                variant,
                problem,
                bundle["wm"],
                cfg,
                T=bundle["iterations"],
                x_star=reference,
                stop_threshold=bundle["threshold"],
                seed=bundle["seed"],
            )
        except NonFiniteAbort as exc:
            return {
                "axis": axis,
                "value": value_label,
                "variant": variant,
                "status": f"aborted@{exc.iteration}",
                "iterations": -1,
                "exchanges": -1,
                "final_error": "nan",
            }
        k = trace.first_below(bundle["threshold"])
        return {
            "axis": axis,
            "value": value_label,
            "variant": variant,
            "status": "crossed" if k is not None else "budget",
            "iterations": -1 if k is None else k,
            "exchanges": -1 if k is None else int(trace.exchanges[k]),
            "final_error": _fmt(trace.errors[-1]),
        }

    if axis == "eta":
        if raw["problem"]["family"] != "quadratic":
            print("config error: eta sweep needs a quadratic problem", file=sys.stderr)
            return 1
        for v in values:
            spec = dict(raw["problem"], eta=float(v))
            problem = pb.problem_from_spec(spec, bundle["seed"])
            reference = pb.centralized_solution(problem)
            for cfg in bundle["algorithms"]:
                rows.append(one_cell(_fmt(float(v)), cfg.variant, cfg, problem, reference))
    elif axis in ("K", "alpha"):
        applicable = [c for c in bundle["algorithms"] if c.variant in ("pdqn", "esom")]
        if not applicable:
            print(
                f"config error: axis {axis!r} applies to pdqn/esom and none are configured",
                file=sys.stderr,
            )
            return 1
        from dataclasses import replace as _replace

        for v in values:
            for cfg in applicable:
                cfg2 = (
                    _replace(cfg, K=int(float(v)))
                    if axis == "K"
                    else _replace(cfg, alpha=float(v))
                )
                label = str(int(float(v))) if axis == "K" else _fmt(float(v))
                rows.append(
                    one_cell(label, cfg.variant, cfg2, bundle["problem"], bundle["reference"])
                )
    elif axis == "seeds":
        trials = args.trials or 20
        for cfg in bundle["algorithms"]:
            spec = {
                "variant": cfg.variant,
                "problem": raw["problem"],
                "topology": {"n": raw["topology"]["n"], "d": raw["topology"]["d"]},
                "config": cfg.to_dict(),
                "threshold": bundle["threshold"],
                "budget": bundle["iterations"],
                "base_seed": bundle["seed"],
            }
            result = sweep_seeds(spec, trials)
            for rec in result["records"]:
                rows.append(
                    {
                        "axis": "seeds",
                        "value": str(rec["seed"]),
                        "variant": cfg.variant,
                        "status": "crossed" if rec["crossed"] else "censored",
                        "iterations": rec.get("iterations", -1),
                        "exchanges": rec.get("exchanges", -1),
                        "final_error": "nan",
                    }
                )
    else:
        print(f"config error: unknown axis {axis!r}", file=sys.stderr)
        return 1

    sweep_csv = out_dir / "sweep.csv"
    _write_sweep_csv(sweep_csv, axis, rows)
    if axis == "seeds":
        render_histogram_svg(sweep_csv, out_dir / "sweep.svg", title="exchanges to threshold")
    else:
        render_sweep_svg(sweep_csv, out_dir / "sweep.svg", title=f"sweep over {axis}")
    n_failed = sum(1 for r in rows if r["status"].startswith("aborted"))
    print(f"sweep complete: {len(rows)} cells, {n_failed} aborted (recorded)")
    return 0


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pdqnet",
        description=(
            "Decentralized consensus optimization testbed: primal-dual "
            "quasi-Newton and baselines on a locality-enforcing simulator."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, need_out=True):
        p.add_argument("--config", required=True, help="JSON experiment config")
        if need_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--iters", type=int, default=None)
        p.add_argument("--threshold", type=float, default=None)
        p.add_argument("--diagnostics", choices=["on", "off"], default=None)
        p.add_argument("--parallel", choices=["on", "off"], default=None)

    p_run = sub.add_parser("run", help="run configured variants; emit traces + summary")
    add_common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="compare >= 2 variants on both axes")
    add_common(p_cmp)
    p_cmp.set_defaults(fn=cmd_compare)

    p_val = sub.add_parser("validate", help="run the invariant suite")
    add_common(p_val, need_out=False)
    p_val.set_defaults(fn=cmd_validate)

    p_fit = sub.add_parser("rate-fit", help="geometric rate fit of a trace CSV")
    p_fit.add_argument("--trace", required=True, help="trace CSV path")
    p_fit.add_argument("--out", default=None, help="optional output directory")
    p_fit.set_defaults(fn=cmd_rate_fit)

    p_swp = sub.add_parser("sweep", help="sweep eta | K | alpha | seeds")
    add_common(p_swp)
    p_swp.add_argument("--axis", required=True, choices=["eta", "K", "alpha", "seeds"])
    p_swp.add_argument("--values", nargs="*", type=float, default=None)
    p_swp.add_argument("--trials", type=int, default=None, help="trials for the seeds axis")
    p_swp.set_defaults(fn=cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (LocalityError, ExchangeAccountingError) as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 2
    except NonFiniteAbort as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
