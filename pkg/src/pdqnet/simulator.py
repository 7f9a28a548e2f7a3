"""Synchronous round-based execution harness.

Every neighbor read in an iteration goes through ``Network.exchange``: one
call is one metered round in which each node sends one p-vector per neighbor
(broadcast) or one per chosen neighbor (scatter).  Delivery is restricted to
graph neighbors and delivered payloads are immutable, so node update code is
structurally unable to peek at non-neighbor state.  A ledger counts rounds
per iteration and ``run`` asserts the counts against each variant's declared
schedule.

Per-node computations within a phase are independent; ``parallel=True`` maps
them over a thread pool and produces bitwise-identical traces to serial
execution (results are assembled in node order).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import problems as pb
from .algorithms import (
    AlgorithmConfig,
    VARIANTS,
    init_states,
    rounds_per_iteration,
    stack_x,
    stack_y,
)
from .network import Topology, WeightMatrix, apply_laplacian, laplacian_dense, smallest_nonzero_laplacian_eigenvalue
from .quasi_newton import (
    assemble_global_dual_inverse,
    assemble_global_primal_inverse,
    dual_inverse_eig_bounds,
    primal_eig_extremes,
    primal_inverse_eig_bounds,
)

__all__ = [
    "LocalityError",
    "ExchangeAccountingError",
    "NonFiniteAbort",
    "ExchangeLedger",
    "Network",
    "ConvergenceTrace",
    "relative_error",
    "consensus_residual",
    "run",
    "compute_diagnostics",
    "sweep_seeds",
]


class LocalityError(RuntimeError):
    """A node attempted to communicate outside its neighborhood."""


class ExchangeAccountingError(RuntimeError):
    """Per-iteration round count differed from the variant's schedule."""


class NonFiniteAbort(RuntimeError):
    """A run produced a non-finite iterate; carries the state snapshot."""

    def __init__(self, message: str, iteration: int, snapshot: dict):
        super().__init__(message)
        self.iteration = iteration
        self.snapshot = snapshot


class ExchangeLedger:
    """Counts exchange rounds, grouped by iteration."""

    def __init__(self):
        self.per_iteration: list[int] = []
        self.payload_dims: list[int] = []
        self.loose_rounds = 0
        self._open = False
        self._count = 0

    def begin_iteration(self):
        if self._open:
            raise RuntimeError("iteration already open")
        self._open = True
        self._count = 0

    def note_round(self, dim: int):
        self.payload_dims.append(int(dim))
        if self._open:
            self._count += 1
        else:
            self.loose_rounds += 1

    def end_iteration(self) -> int:
        if not self._open:
            raise RuntimeError("no open iteration")
        self._open = False
        self.per_iteration.append(self._count)
        return self._count

    @property
    def total_rounds(self) -> int:
        return sum(self.per_iteration) + self.loose_rounds

    def cumulative(self) -> np.ndarray:
        """Cumulative rounds after each completed iteration."""
        return np.cumsum(self.per_iteration, dtype=int)


class Network:
    """Metered locality-enforcing message fabric.

    ``exchange(payloads)`` takes one entry per node: an array broadcasts the
    same vector to every neighbor; a dict ``{j: vec}`` scatters per-neighbor
    content.  Returns per-node mailboxes ``{sender: read-only vector}``.
    """

    def __init__(self, topology: Topology, parallel: bool = False, max_workers: int | None = None):
        self.topology = topology
        self.parallel = parallel
        self.ledger = ExchangeLedger()
        self.secant_log = {"primal": [], "dual": []}
        self._pool = ThreadPoolExecutor(max_workers=max_workers) if parallel else None

    def exchange(self, payloads) -> list[dict]:
        t = self.topology
        if len(payloads) != t.n:
            raise ValueError(f"expected {t.n} payload entries, got {len(payloads)}")
        mailboxes: list[dict] = [{} for _ in range(t.n)]
        dim = None
        for i, payload in enumerate(payloads):
            neighbors = t.neighbors(i)
            if isinstance(payload, dict):
                allowed = set(neighbors)
                for j, vec in payload.items():
                    if j not in allowed:
                        raise LocalityError(
                            f"node {i} attempted to send to non-neighbor {j}"
                        )
                    out = np.array(vec, dtype=float, copy=True)
                    out.setflags(write=False)
                    mailboxes[j][i] = out
                    dim = out.size
            else:
                out = np.array(payload, dtype=float, copy=True)
                out.setflags(write=False)
                dim = out.size
                for j in neighbors:
                    mailboxes[j][i] = out
        self.ledger.note_round(dim if dim is not None else 0)
        return mailboxes

    def map_nodes(self, fn, n: int) -> list:
        if self._pool is not None:
            return list(self._pool.map(fn, range(n)))
        return [fn(i) for i in range(n)]

    def record_secant(self, kind: str, value: float):
        self.secant_log[kind].append(value)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


@dataclass
class ConvergenceTrace:
    """Per-iteration record of a run (index 0 is the initial state)."""

    variant: str
    config: AlgorithmConfig
    errors: np.ndarray
    consensus: np.ndarray
    exchanges: np.ndarray
    diagnostics: list | None = None
    seed: int | None = None
    problem_digest: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.errors) == len(self.consensus) == len(self.exchanges)):
            raise ValueError("trace columns must have equal length")
        if (np.asarray(self.errors) < 0).any():
            raise ValueError("relative errors must be nonnegative")

    @property
    def iterations(self) -> int:
        return len(self.errors) - 1

    def first_below(self, tol: float) -> int | None:
        """First iteration index with error <= tol, or None."""
        hits = np.nonzero(self.errors <= tol)[0]
        return int(hits[0]) if hits.size else None

    def exchanges_to(self, tol: float) -> int | None:
        """Cumulative per-node exchanges at the first crossing of tol."""
        k = self.first_below(tol)
        return int(self.exchanges[k]) if k is not None else None


def relative_error(x_stack: np.ndarray, x_star: np.ndarray) -> float:
    """Mean squared node deviation from the reference, relative to ``||x*||^2``:
    ``(1/n) sum_i ||x_i - x*||^2 / ||x*||^2``."""
    x_stack = np.asarray(x_stack, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    denom = float(np.sum(x_star**2))
    if denom <= 0.0:
        raise ValueError("reference solution must be nonzero")
    return float(np.mean(np.sum((x_stack - x_star) ** 2, axis=1))) / denom


def consensus_residual(wm: WeightMatrix, x_stack: np.ndarray) -> float:
    """Frobenius norm of the disagreement ``(I - Z) x``."""
    return float(np.linalg.norm(apply_laplacian(wm, x_stack)))


def _snapshot(variant, states, iteration) -> dict:
    return {
        "variant": variant,
        "iteration": int(iteration),
        "x": stack_x(states).tolist(),
        "y": stack_y(states).tolist(),
    }


def _resolve_x_star(problem, x_star):
    if x_star is None:
        return pb.centralized_solution(problem).x_star
    if isinstance(x_star, pb.ReferenceSolution):
        return x_star.x_star
    return np.asarray(x_star, dtype=float)


def run(
    variant: str,
    problem,
    wm: WeightMatrix,
    cfg: AlgorithmConfig,
    T: int,
    x_star=None,
    diagnostics: bool = False,
    parallel: bool = False,
    x0: np.ndarray | None = None,
    y0: np.ndarray | None = None,
    stop_threshold: float | None = None,
    seed: int | None = None,
) -> ConvergenceTrace:
    """Execute T synchronous iterations (optionally stopping at a threshold).

    Records the relative error and consensus residual at every iteration
    including the initial state, plus cumulative exchange rounds from the
    ledger.  Raises NonFiniteAbort with a state snapshot if iterates blow up,
    and ExchangeAccountingError if any iteration's round count deviates from
    the variant's declared schedule.
    """
    if T < 1:
        raise ValueError(f"need T >= 1, got T={T}")
    if cfg.variant != variant:
        raise ValueError(f"config is for variant {cfg.variant!r}, not {variant!r}")
    if diagnostics and variant != "pdqn":
        raise ValueError("diagnostics are defined for the pdqn variant only")
    x_ref = _resolve_x_star(problem, x_star)
    iterate = VARIANTS[variant]
    expected_rounds = rounds_per_iteration(variant, cfg.K)
    states = init_states(variant, problem, wm, cfg, x0=x0, y0=y0)

    errors = [relative_error(stack_x(states), x_ref)]
    consensus = [consensus_residual(wm, stack_x(states))]
    exchanges = [0]
    diag_records: list = [] if diagnostics else None

    with Network(wm.topology, parallel=parallel) as net:
        for t_iter in range(1, T + 1):
            net.ledger.begin_iteration()
            try:
                iterate(states, problem, wm, cfg, net=net)
            except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
                raise NonFiniteAbort(
                    f"{variant} aborted at iteration {t_iter}: {exc}",
                    iteration=t_iter,
                    snapshot=_snapshot(variant, states, t_iter),
                ) from exc
            rounds = net.ledger.end_iteration()
            if rounds != expected_rounds:
                raise ExchangeAccountingError(
                    f"{variant} iteration {t_iter} used {rounds} rounds, "
                    f"schedule says {expected_rounds}"
                )
            xs = stack_x(states)
            err = relative_error(xs, x_ref)
            if not (np.isfinite(err) and np.isfinite(xs).all()):
                raise NonFiniteAbort(
                    f"{variant} produced a non-finite iterate at iteration {t_iter}",
                    iteration=t_iter,
                    snapshot=_snapshot(variant, states, t_iter),
                )
            errors.append(err)
            consensus.append(consensus_residual(wm, xs))
            exchanges.append(net.ledger.total_rounds)
            if diagnostics:
                diag_records.append(compute_diagnostics(states, problem, wm, cfg, x_ref))
            if stop_threshold is not None and err <= stop_threshold:
                break
        secants = {k: list(v) for k, v in net.secant_log.items()}

    return ConvergenceTrace(
        variant=variant,
        config=cfg,
        errors=np.array(errors),
        consensus=np.array(consensus),
        exchanges=np.array(exchanges, dtype=int),
        diagnostics=diag_records,
        seed=seed,
        problem_digest=pb.problem_digest(problem),
        metadata={"secant_residuals": secants, "final_states": states, "x_star": x_ref},
    )


def _recover_pre_transform_dual(wm: WeightMatrix, y_stack: np.ndarray):
    """Coefficients nu with y = sqrt(I - Z) nu, plus the norm of y's component
    in the disagreement null space (where nu is undefined)."""
    W = wm.dense
    vals, vecs = np.linalg.eigh(np.eye(wm.topology.n) - W)
    coeff = vecs.T @ y_stack
    nonzero = vals > 1e-12
    scaled = np.zeros_like(coeff)
    scaled[nonzero] = coeff[nonzero] / np.sqrt(vals[nonzero])[:, None]
    nu = vecs @ scaled
    null_norm = float(np.linalg.norm(coeff[~nonzero]))
    return nu, null_norm


def compute_diagnostics(
    states,
    problem,
    wm: WeightMatrix,
    cfg: AlgorithmConfig,
    x_star,
    beta: float = 2.0,
    phi: float = 2.0,
    zeta: float | None = None,
) -> dict:
    """Dense per-iteration analysis record for a pdqn run (desk scale).

    Assembles the series inverse and the dual inverse globally, evaluates the
    stationarity error vector sigma_t satisfying

        grad f(x_{t+1}) - grad f(x*) + y_{t+1} - y* + sigma_t = 0,

    the Lyapunov value ||z - z*||^2 in the metric blockdiag(alpha R_t, H_t)
    with z = [x; nu], and the contraction constant kappa_t for the supplied
    (beta, phi, zeta).  kappa_t comes from sufficient conditions and may be
    nonpositive; it is informational.  Eigenvalue envelopes for both inverse
    approximations are computed from measured curvature extremes.
    """
    for s in states:
        if s.B is None or s.C is None or s.x_prev is None or s.y_nbhd_prev is None:
            raise ValueError(
                "diagnostics need post-iteration pdqn states with lagged data"
            )
    t = wm.topology
    n, p = t.n, problem.p
    alpha, K, gamma, Gamma = cfg.alpha, cfg.K, cfg.gamma, cfg.Gamma
    x_star = _resolve_x_star(problem, x_star)

    x_new = stack_x(states)
    x_old = np.stack([s.x_prev for s in states])
    y_new = stack_y(states)
    y_old = np.empty((n, p))
    for i, s in enumerate(states):
        pos = t.neighborhoods[i].index(i)
        y_old[i] = s.y_nbhd_prev[pos * p : (pos + 1) * p]

    B = np.stack([s.B for s in states])
    G_inv = assemble_global_primal_inverse(B, wm, alpha, K)
    G = np.linalg.inv(G_inv)
    H_inv = assemble_global_dual_inverse([s.C for s in states], Gamma, t, p)
    H = np.linalg.inv(H_inv)
    lap = laplacian_dense(wm, p)
    R = G - alpha * lap

    gf_new = np.concatenate([pb.local_gradient(problem, i, x_new[i]) for i in range(n)])
    gf_old = np.concatenate([s.fgrad_prev for s in states])
    gf_star = np.concatenate(
        [pb.local_gradient(problem, i, x_star) for i in range(n)]
    )
    x_new_f = x_new.ravel()
    x_old_f = x_old.ravel()
    x_star_f = np.tile(x_star, n)
    y_new_f = y_new.ravel()
    y_star_f = -gf_star

    dev = lap @ (x_new_f - x_star_f)
    sigma = (
        (gf_old - gf_new)
        + alpha * dev
        - alpha * (H_inv @ dev)
        + (G - alpha * lap) @ (x_new_f - x_old_f)
    )
    identity_residual = float(
        np.linalg.norm(gf_new - gf_star + y_new_f - y_star_f + sigma)
    )

    nu_new, null_new = _recover_pre_transform_dual(wm, y_new)
    nu_old, null_old = _recover_pre_transform_dual(wm, y_old)
    nu_star, null_star = _recover_pre_transform_dual(
        wm, (-gf_star).reshape(n, p)
    )
    null_tol = 1e-8 * max(1.0, float(np.linalg.norm(y_new_f)))
    nu_flagged = null_new > null_tol

    def lyapunov(x_f, nu):
        dx = x_f - x_star_f
        dn = (nu - nu_star).ravel()
        return float(alpha * dx @ (R @ dx) + dn @ (H @ dn))

    lyap_post = lyapunov(x_new_f, nu_new)
    lyap_pre = lyapunov(x_old_f, nu_old)

    psi, Psi = primal_eig_extremes(B)
    lam, Lam, rho = primal_inverse_eig_bounds(psi, Psi, wm.delta, wm.Delta, alpha, K)
    dual_lo, dual_hi = dual_inverse_eig_bounds(Gamma, gamma, n)
    Sigma = 1.0 / Lam - 2.0 * alpha * (1.0 - wm.delta)
    P = Gamma + n / gamma
    delta_hat = smallest_nonzero_laplacian_eigenvalue(wm)
    bounds = pb.convexity_bounds(problem)
    mu, L = bounds.mu, bounds.L
    if zeta is None:
        zeta = (mu + L) / (mu * L)

    term1_pref = beta**2 / (P * (beta - 1.0) * delta_hat) - (
        2.0 * beta * phi * Gamma**2
    ) / (P * (phi - 1.0) * delta_hat)
    term1 = (alpha * Sigma - 2.0 * alpha * zeta * L**2 / Sigma) / term1_pref
    term2 = 2.0 * alpha * delta_hat / (phi * beta * (mu + L))
    term3_pref = Sigma - 2.0 * beta * phi * alpha / (P * (phi - 1.0) * delta_hat)
    term3 = (
        2.0 * mu * L / (mu + L) - 1.0 / zeta - 4.0 * alpha**2 * P * zeta * (1.0 - wm.delta)
    ) / term3_pref
    kappa = float(min(term1, term2, term3))

    g_inv_eigs = np.linalg.eigvalsh(G_inv)
    h_inv_eigs = np.linalg.eigvalsh(H_inv)

    return {
        "sigma": sigma,
        "sigma_norm": float(np.linalg.norm(sigma)),
        "identity_residual": identity_residual,
        "R": R,
        "J": np.block(
            [[alpha * R, np.zeros((n * p, n * p))], [np.zeros((n * p, n * p)), H]]
        ),
        "z": np.concatenate([x_new_f, nu_new.ravel()]),
        "z_star": np.concatenate([x_star_f, nu_star.ravel()]),
        "nu": nu_new,
        "nu_star": nu_star,
        "nu_null_residual": null_new,
        "nu_flagged": bool(nu_flagged),
        "lyapunov": lyap_post,
        "lyapunov_pre": lyap_pre,
        "contraction": lyap_post / lyap_pre if lyap_pre > 0 else float("nan"),
        "g_inv_eig_min": float(g_inv_eigs[0]),
        "g_inv_eig_max": float(g_inv_eigs[-1]),
        "h_inv_eig_min": float(h_inv_eigs[0]),
        "h_inv_eig_max": float(h_inv_eigs[-1]),
        "lam": lam,
        "Lam": Lam,
        "rho": rho,
        "psi": psi,
        "Psi": Psi,
        "dual_lo": dual_lo,
        "dual_hi": dual_hi,
        "Sigma": Sigma,
        "P": P,
        "delta_hat": delta_hat,
        "mu": mu,
        "L": L,
        "beta": beta,
        "phi": phi,
        "zeta": zeta,
        "kappa": kappa,
        "kappa_terms": (float(term1), float(term2), float(term3)),
    }


def sweep_seeds(spec: dict, n_trials: int) -> dict:
    """Exchanges-to-threshold distribution over seeds.

    ``spec`` keys: variant, problem (generator spec), topology {n, d},
    config (algorithm config dict), threshold, budget (max iterations),
    optional base_seed.  Trials that never cross within the budget (or abort)
    are reported as censored.
    """
    from .network import build_d_regular_cycle, metropolis_weights

    if n_trials < 1:
        raise ValueError(f"need n_trials >= 1, got {n_trials}")
    required = {"variant", "problem", "topology", "config", "threshold", "budget"}
    missing = sorted(required - set(spec))
    if missing:
        raise ValueError(f"sweep spec missing keys: {missing}")
    variant = spec["variant"]
    topo = build_d_regular_cycle(spec["topology"]["n"], spec["topology"]["d"])
    wm = metropolis_weights(topo)
    cfg = AlgorithmConfig.from_dict(spec["config"])
    threshold = float(spec["threshold"])
    budget = int(spec["budget"])
    base_seed = int(spec.get("base_seed", 0))

    records = []
    exchange_counts = []
    censored = []
    for trial in range(n_trials):
        seed = base_seed + trial
        problem = pb.problem_from_spec(spec["problem"], seed)
        try:
            trace = run(
                variant,
                problem,
                wm,
                cfg,
                T=budget,
                stop_threshold=threshold,
                seed=seed,
            )
            crossed = trace.first_below(threshold)
        except NonFiniteAbort as exc:
            records.append(
                {"seed": seed, "crossed": False, "reason": f"aborted: {exc}"}
            )
            censored.append(seed)
            continue
        if crossed is None:
            records.append({"seed": seed, "crossed": False, "reason": "budget"})
            censored.append(seed)
        else:
            count = int(trace.exchanges[crossed])
            records.append(
                {
                    "seed": seed,
                    "crossed": True,
                    "iterations": crossed,
                    "exchanges": count,
                }
            )
            exchange_counts.append(count)
    return {
        "variant": variant,
        "threshold": threshold,
        "budget": budget,
        "records": records,
        "exchanges": exchange_counts,
        "censored_seeds": censored,
        "median_exchanges": float(np.median(exchange_counts)) if exchange_counts else None,
    }
