"""Node-local iteration logic for the five methods.

Each iterate function advances every node by one synchronous iteration.  All
neighbor reads go through an exchange object (``net``): each call to
``net.exchange`` is one metered round in which every node sends one p-vector
per neighbor.  Rounds per iteration are fixed constants:

    pdqn   K+5  (x broadcast, K direction rounds, updated-x broadcast,
                 h broadcast, dual-contribution scatter, updated-y broadcast)
    esom   K+3  (x broadcast, K direction rounds, updated-x broadcast,
                 h broadcast)
    da     2    (updated-x broadcast, h broadcast)
    dgd    1    (x broadcast)
    extra  1    (x broadcast)

The pdqn dual update is ascent: y+ = y + eps_d * alpha * (H^{-1} h), with the
neighborhood contributions e^i_j scattered and summed so node i applies
(H^{-1} h)_i without ever forming H.  esom keeps the same primal machinery but
replaces the local curvature block with the exact local Hessian and takes the
first-order dual step y+ = y + eps_d * alpha * h.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import problems as pb
from .network import WeightMatrix
from .quasi_newton import (
    bfgs_update_dual,
    bfgs_update_primal,
    clip_spectrum,
    curvature_pair_accepted,
    dual_neighborhood_direction,
    dual_variations,
    neumann_diagonal_block,
    neumann_first_term,
    neumann_recursion_step,
    upsilon_diagonal,
)

__all__ = [
    "AlgorithmConfig",
    "NodeState",
    "StepsizeSearchError",
    "VARIANT_NAMES",
    "VARIANTS",
    "rounds_per_iteration",
    "init_states",
    "pdqn_iterate",
    "da_iterate",
    "dgd_iterate",
    "extra_iterate",
    "esom_iterate",
    "tune_stepsize",
    "inject_saddle_point",
    "stack_x",
    "stack_y",
]

VARIANT_NAMES = ("pdqn", "da", "dgd", "extra", "esom")


@dataclass(frozen=True)
class AlgorithmConfig:
    """Per-variant parameters.  alpha weights the quadratic penalty, eps_d
    scales the dual step, K is the series depth, gamma/Gamma regularize the
    dual curvature blocks, primal_step drives dgd/extra."""

    variant: str
    alpha: float = 1.0
    eps_d: float = 1.0
    K: int = 1
    gamma: float = 0.1
    Gamma: float = 0.1
    primal_step: float = 0.1
    clip_primal_curvature: tuple[float, float] | None = None

    def __post_init__(self):
        if self.variant not in VARIANT_NAMES:
            raise ValueError(
                f"unknown variant {self.variant!r}; expected one of {VARIANT_NAMES}"
            )
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"need alpha > 0, got {self.alpha}")
        if not (np.isfinite(self.eps_d) and self.eps_d > 0):
            raise ValueError(f"need eps_d > 0, got {self.eps_d}")
        if not (isinstance(self.K, (int, np.integer)) and self.K >= 0):
            raise ValueError(f"need integer K >= 0, got {self.K!r}")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"need gamma > 0, got {self.gamma}")
        if not (np.isfinite(self.Gamma) and 0 < self.Gamma <= 1):
            raise ValueError(f"need 0 < Gamma <= 1, got {self.Gamma}")
        if not (np.isfinite(self.primal_step) and self.primal_step > 0):
            raise ValueError(f"need primal_step > 0, got {self.primal_step}")
        if self.clip_primal_curvature is not None:
            lo, hi = self.clip_primal_curvature
            if not (np.isfinite(lo) and np.isfinite(hi) and 0 < lo <= hi):
                raise ValueError(
                    f"need 0 < lo <= hi for the curvature clip, got ({lo}, {hi})"
                )
            object.__setattr__(self, "clip_primal_curvature", (float(lo), float(hi)))
        object.__setattr__(self, "K", int(self.K))

    def to_dict(self) -> dict:
        d = {
            "variant": self.variant,
            "alpha": self.alpha,
            "eps_d": self.eps_d,
            "K": self.K,
            "gamma": self.gamma,
            "Gamma": self.Gamma,
            "primal_step": self.primal_step,
        }
        if self.clip_primal_curvature is not None:
            d["clip_primal_curvature"] = list(self.clip_primal_curvature)
        return d

    @staticmethod
    def from_dict(d: dict) -> "AlgorithmConfig":
        known = {
            "variant",
            "alpha",
            "eps_d",
            "K",
            "gamma",
            "Gamma",
            "primal_step",
            "clip_primal_curvature",
        }
        extra = sorted(set(d) - known)
        if extra:
            raise ValueError(f"unknown algorithm config keys: {extra}")
        if "variant" not in d:
            raise ValueError("algorithm config requires a 'variant' tag")
        kwargs = dict(d)
        clip = kwargs.get("clip_primal_curvature")
        if clip is not None:
            kwargs["clip_primal_curvature"] = (float(clip[0]), float(clip[1]))
        return AlgorithmConfig(**kwargs)


@dataclass
class NodeState:
    """Everything node i owns: current iterates, curvature blocks, and the
    lagged quantities feeding the secant updates."""

    x: np.ndarray
    y: np.ndarray
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    upsilon: np.ndarray | None = None
    x_prev: np.ndarray | None = None
    fgrad_prev: np.ndarray | None = None
    y_nbhd: np.ndarray | None = None
    y_nbhd_prev: np.ndarray | None = None
    h_nbhd_prev: np.ndarray | None = None
    mix_prev: np.ndarray | None = None
    scratch: dict = field(default_factory=dict)


class StepsizeSearchError(RuntimeError):
    """No stepsize candidate produced a converging probe."""


def rounds_per_iteration(variant: str, K: int) -> int:
    """Exchange rounds one iteration costs (the ledger asserts this)."""
    if variant == "pdqn":
        return K + 5
    if variant == "esom":
        return K + 3
    if variant == "da":
        return 2
    if variant in ("dgd", "extra"):
        return 1
    raise ValueError(f"unknown variant {variant!r}")


class _DirectExchange:
    """Unmetered in-process exchange with the simulator's delivery semantics,
    used when iterate functions are called without a harness network."""

    def __init__(self, topology):
        self.topology = topology
        self.secant_log = {"primal": [], "dual": []}

    def exchange(self, payloads):
        t = self.topology
        mailboxes = [{} for _ in range(t.n)]
        for i, payload in enumerate(payloads):
            if isinstance(payload, dict):
                targets = payload.items()
            else:
                targets = ((j, payload) for j in t.neighbors(i))
            for j, vec in targets:
                out = np.array(vec, dtype=float, copy=True)
                out.setflags(write=False)
                mailboxes[j][i] = out
        return mailboxes

    def map_nodes(self, fn, n):
        return [fn(i) for i in range(n)]

    def record_secant(self, kind, value):
        self.secant_log[kind].append(value)


def _net_or_direct(net, wm: WeightMatrix):
    return _DirectExchange(wm.topology) if net is None else net


def _mix(i, x_i, mailbox, w_row, neighbors):
    # (Z x)_i = w_ii x_i + sum over neighbors of w_ij x_j
    acc = w_row[i] * x_i
    for j in neighbors:
        acc = acc + w_row[j] * mailbox[j]
    return acc


def _concat_nbhd(i, own, mailbox, neighborhood):
    return np.concatenate([own if j == i else mailbox[j] for j in neighborhood])


def init_states(
    variant: str,
    problem,
    wm: WeightMatrix,
    cfg: AlgorithmConfig,
    x0: np.ndarray | None = None,
    y0: np.ndarray | None = None,
) -> list[NodeState]:
    """Initial node states (default x = y = 0).  pdqn nodes also hold their
    neighborhood's initial duals, filled by one unmetered bootstrap exchange
    of the caller-supplied initial values."""
    if variant not in VARIANT_NAMES:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANT_NAMES}")
    if variant == "da" and problem.family != "quadratic":
        raise ValueError(
            "dual ascent needs the closed-form inner minimizer and supports "
            "quadratic problems only"
        )
    t = wm.topology
    n, p = t.n, problem.p
    x0 = np.zeros((n, p)) if x0 is None else np.array(x0, dtype=float, copy=True)
    y0 = np.zeros((n, p)) if y0 is None else np.array(y0, dtype=float, copy=True)
    if x0.shape != (n, p) or y0.shape != (n, p):
        raise ValueError(f"initial iterates must have shape {(n, p)}")
    states = []
    for i in range(n):
        s = NodeState(x=x0[i].copy(), y=y0[i].copy())
        if variant == "pdqn":
            m = t.sizes[i]
            s.B = np.eye(p)
            s.C = (1.0 + cfg.gamma) * np.eye(m * p)
            s.upsilon = upsilon_diagonal(t, i, p)
            s.y_nbhd = np.concatenate([y0[j] for j in t.neighborhoods[i]])
        states.append(s)
    return states


def pdqn_iterate(states, problem, wm: WeightMatrix, cfg: AlgorithmConfig, net=None):
    """One primal-dual quasi-Newton iteration (K+5 exchange rounds)."""
    net = _net_or_direct(net, wm)
    t = wm.topology
    n, p = t.n, problem.p
    alpha, K = cfg.alpha, cfg.K

    mail_x = net.exchange([s.x for s in states])

    def primal_setup(i):
        s = states[i]
        w_row = wm.row(i)
        fgrad = pb.local_gradient(problem, i, s.x)
        g = fgrad + s.y + alpha * (s.x - _mix(i, s.x, mail_x[i], w_row, t.neighbors(i)))
        if s.x_prev is not None:
            u = s.x - s.x_prev
            r = fgrad - s.fgrad_prev
            if curvature_pair_accepted(u, r):
                B_new = bfgs_update_primal(s.B, u, r)
                if cfg.clip_primal_curvature is not None:
                    B_new = clip_spectrum(B_new, *cfg.clip_primal_curvature)
                net.record_secant(
                    "primal",
                    float(np.linalg.norm(B_new @ u - r) / np.linalg.norm(r)),
                )
            else:
                B_new = s.B
        else:
            B_new = s.B
        D_inv = np.linalg.inv(neumann_diagonal_block(B_new, alpha, w_row[i]))
        d = neumann_first_term(D_inv, g)
        return fgrad, g, B_new, D_inv, d

    setup = net.map_nodes(primal_setup, n)
    for i, (fgrad, g, B_new, D_inv, d) in enumerate(setup):
        s = states[i]
        s.B = B_new
        s.x_prev = s.x.copy()
        s.fgrad_prev = fgrad
        s.scratch["g"] = g
        s.scratch["D_inv"] = D_inv
        s.scratch["d"] = d

    for _ in range(K):
        mail_d = net.exchange([s.scratch["d"] for s in states])

        def direction_step(i):
            s = states[i]
            w_row = wm.row(i)
            nbr_sum = np.zeros(p)
            for j in t.neighbors(i):
                nbr_sum = nbr_sum + w_row[j] * mail_d[i][j]
            return neumann_recursion_step(
                s.scratch["D_inv"], s.scratch["g"], alpha, w_row[i], s.scratch["d"], nbr_sum
            )

        new_d = net.map_nodes(direction_step, n)
        for i, d in enumerate(new_d):
            states[i].scratch["d"] = d

    for s in states:
        s.x = s.x + s.scratch["d"]

    mail_x_new = net.exchange([s.x for s in states])

    def constraint_violation(i):
        s = states[i]
        return s.x - _mix(i, s.x, mail_x_new[i], wm.row(i), t.neighbors(i))

    h = net.map_nodes(constraint_violation, n)

    mail_h = net.exchange(h)

    def dual_direction(i):
        s = states[i]
        h_nbhd = _concat_nbhd(i, h[i], mail_h[i], t.neighborhoods[i])
        if s.y_nbhd_prev is not None:
            pair = dual_variations(
                s.y_nbhd, s.y_nbhd_prev, h_nbhd, s.h_nbhd_prev, cfg.gamma, s.upsilon
            )
            if curvature_pair_accepted(pair.variable_variation, pair.gradient_variation):
                C_new = bfgs_update_dual(s.C, pair, cfg.gamma)
                dh = h_nbhd - s.h_nbhd_prev
                net.record_secant(
                    "dual",
                    float(
                        np.linalg.norm(C_new @ pair.variable_variation - dh)
                        / np.linalg.norm(dh)
                    ),
                )
            else:
                C_new = s.C
        else:
            C_new = s.C
        e_nbhd = dual_neighborhood_direction(C_new, h_nbhd, cfg.Gamma, s.upsilon)
        return C_new, h_nbhd, e_nbhd

    dual = net.map_nodes(dual_direction, n)
    scatter_payloads = []
    for i, (C_new, h_nbhd, e_nbhd) in enumerate(dual):
        s = states[i]
        s.C = C_new
        s.h_nbhd_prev = h_nbhd
        nbhd = t.neighborhoods[i]
        chunks = {j: e_nbhd[k * p : (k + 1) * p] for k, j in enumerate(nbhd)}
        s.scratch["e_own"] = chunks.pop(i)
        scatter_payloads.append(chunks)

    mail_e = net.exchange(scatter_payloads)

    def dual_step(i):
        s = states[i]
        e = s.scratch["e_own"].copy()
        for j in t.neighbors(i):
            e = e + mail_e[i][j]
        return s.y + cfg.eps_d * alpha * e

    new_y = net.map_nodes(dual_step, n)
    for i, y in enumerate(new_y):
        states[i].y = y

    mail_y = net.exchange([s.y for s in states])
    for i, s in enumerate(states):
        s.y_nbhd_prev = s.y_nbhd
        s.y_nbhd = _concat_nbhd(i, s.y, mail_y[i], t.neighborhoods[i])
        s.scratch.clear()
    return states


def esom_iterate(states, problem, wm: WeightMatrix, cfg: AlgorithmConfig, net=None):
    """One exact-Hessian iteration with a first-order dual step (K+3 rounds).

    Same primal machinery as pdqn with the curvature block pinned to the
    exact local Hessian; the dual step uses the local violation directly.
    """
    net = _net_or_direct(net, wm)
    t = wm.topology
    n, p = t.n, problem.p
    alpha, K = cfg.alpha, cfg.K

    mail_x = net.exchange([s.x for s in states])

    def primal_setup(i):
        s = states[i]
        w_row = wm.row(i)
        fgrad = pb.local_gradient(problem, i, s.x)
        g = fgrad + s.y + alpha * (s.x - _mix(i, s.x, mail_x[i], w_row, t.neighbors(i)))
        B = pb.local_hessian(problem, i, s.x)
        D_inv = np.linalg.inv(neumann_diagonal_block(B, alpha, w_row[i]))
        return g, D_inv, neumann_first_term(D_inv, g)

    setup = net.map_nodes(primal_setup, n)
    for i, (g, D_inv, d) in enumerate(setup):
        states[i].scratch.update(g=g, D_inv=D_inv, d=d)

    for _ in range(K):
        mail_d = net.exchange([s.scratch["d"] for s in states])

        def direction_step(i):
            s = states[i]
            w_row = wm.row(i)
            nbr_sum = np.zeros(p)
            for j in t.neighbors(i):
                nbr_sum = nbr_sum + w_row[j] * mail_d[i][j]
            return neumann_recursion_step(
                s.scratch["D_inv"], s.scratch["g"], alpha, w_row[i], s.scratch["d"], nbr_sum
            )

        new_d = net.map_nodes(direction_step, n)
        for i, d in enumerate(new_d):
            states[i].scratch["d"] = d

    for s in states:
        s.x = s.x + s.scratch["d"]

    mail_x_new = net.exchange([s.x for s in states])

    def constraint_violation(i):
        s = states[i]
        return s.x - _mix(i, s.x, mail_x_new[i], wm.row(i), t.neighbors(i))

    h = net.map_nodes(constraint_violation, n)
    # Delivered for schedule parity with the dual accounting; the first-order
    # dual step needs only the local block.
    net.exchange(h)
    for i, s in enumerate(states):
        s.y = s.y + cfg.eps_d * alpha * h[i]
        s.scratch.clear()
    return states


def da_iterate(states, problem, wm: WeightMatrix, cfg: AlgorithmConfig, net=None):
    """One dual-ascent iteration: closed-form inner minimization, then a dual
    step along the constraint violation (2 rounds)."""
    net = _net_or_direct(net, wm)
    t = wm.topology
    n = t.n
    for i, s in enumerate(states):
        s.x = pb.local_argmin_L0(problem, i, s.y)
    mail_x = net.exchange([s.x for s in states])

    def constraint_violation(i):
        s = states[i]
        return s.x - _mix(i, s.x, mail_x[i], wm.row(i), t.neighbors(i))

    h = net.map_nodes(constraint_violation, n)
    net.exchange(h)
    for i, s in enumerate(states):
        s.y = s.y + cfg.eps_d * h[i]
    return states


def dgd_iterate(states, problem, wm: WeightMatrix, cfg: AlgorithmConfig, net=None):
    """One mixing-plus-gradient step (1 round); inexact under constant step."""
    net = _net_or_direct(net, wm)
    t = wm.topology
    mail_x = net.exchange([s.x for s in states])

    def step(i):
        s = states[i]
        mix = _mix(i, s.x, mail_x[i], wm.row(i), t.neighbors(i))
        return mix - cfg.primal_step * pb.local_gradient(problem, i, s.x)

    new_x = net.map_nodes(step, t.n)
    for i, x in enumerate(new_x):
        states[i].x = x
    return states


def extra_iterate(states, problem, wm: WeightMatrix, cfg: AlgorithmConfig, net=None):
    """One exact first-order iteration (1 round).

    First step x1 = (x0 + Zx0)/2 - eps grad0; afterwards
    x+ = x + Zx - (x_prev + Zx_prev)/2 - eps (grad - grad_prev).
    """
    net = _net_or_direct(net, wm)
    t = wm.topology
    eps = cfg.primal_step
    mail_x = net.exchange([s.x for s in states])

    def step(i):
        s = states[i]
        mix = _mix(i, s.x, mail_x[i], wm.row(i), t.neighbors(i))
        fgrad = pb.local_gradient(problem, i, s.x)
        if s.x_prev is None:
            x_new = 0.5 * (s.x + mix) - eps * fgrad
        else:
            x_new = (
                s.x + mix - 0.5 * (s.x_prev + s.mix_prev) - eps * (fgrad - s.fgrad_prev)
            )
        return x_new, mix, fgrad

    results = net.map_nodes(step, t.n)
    for i, (x_new, mix, fgrad) in enumerate(results):
        s = states[i]
        s.x_prev = s.x
        s.mix_prev = mix
        s.fgrad_prev = fgrad
        s.x = x_new
    return states


VARIANTS = {
    "pdqn": pdqn_iterate,
    "da": da_iterate,
    "dgd": dgd_iterate,
    "extra": extra_iterate,
    "esom": esom_iterate,
}

_TUNED_FIELD = {
    "pdqn": "alpha",
    "esom": "alpha",
    "da": "eps_d",
    "dgd": "primal_step",
    "extra": "primal_step",
}

DEFAULT_STEP_GRID = tuple(2.0**k for k in range(-8, 4))


def tune_stepsize(
    variant: str,
    problem,
    wm: WeightMatrix,
    grid=None,
    base: AlgorithmConfig | None = None,
    iterations: int = 200,
) -> AlgorithmConfig:
    """Largest grid value whose 200-iteration probe stays finite and is still
    decreasing over its final quartile.  Tunes alpha for pdqn/esom, eps_d for
    da, primal_step for dgd/extra.  Raises StepsizeSearchError if every
    candidate fails."""
    if base is None:
        base = AlgorithmConfig(variant=variant)
    if base.variant != variant:
        raise ValueError(f"base config is for {base.variant!r}, not {variant!r}")
    grid = DEFAULT_STEP_GRID if grid is None else tuple(float(v) for v in grid)
    if len(grid) == 0 or not all(np.isfinite(v) and v > 0 for v in grid):
        raise ValueError("stepsize grid must be a nonempty list of finite positives")
    field_name = _TUNED_FIELD[variant]
    x_star = pb.centralized_solution(problem).x_star
    x_star_sq = float(np.sum(x_star**2))
    iterate = VARIANTS[variant]
    T = int(iterations)

    def probe(cfg):
        states = init_states(variant, problem, wm, cfg)
        errs = np.empty(T + 1)
        with np.errstate(all="ignore"):
            for t_iter in range(T + 1):
                xs = np.stack([s.x for s in states])
                errs[t_iter] = float(np.mean(np.sum((xs - x_star) ** 2, axis=1))) / x_star_sq
                if not np.isfinite(errs[t_iter]):
                    return None
                if t_iter < T:
                    try:
                        iterate(states, problem, wm, cfg)
                    except (ValueError, FloatingPointError, np.linalg.LinAlgError):
                        return None
        return errs

    accepted = None
    for candidate in sorted(grid):
        cfg = replace(base, **{field_name: candidate})
        errs = probe(cfg)
        if errs is None:
            continue
        if errs[3 * T // 4] > errs[T] and errs[T] <= errs[0]:
            accepted = cfg
    if accepted is None:
        raise StepsizeSearchError(
            f"no {field_name} in {sorted(grid)} produced a finite, decreasing "
            f"probe for {variant}"
        )
    return accepted


def inject_saddle_point(
    variant: str, problem, wm: WeightMatrix, cfg: AlgorithmConfig, x_star: np.ndarray
) -> list[NodeState]:
    """States seeded at the saddle: x_i = x*, y_i = -grad f_i(x*), with the
    lagged slots each recursion needs filled consistently (extra additionally
    gets matching previous iterate, mixing, and gradient)."""
    t = wm.topology
    n = t.n
    x_star = np.asarray(x_star, dtype=float)
    x0 = np.tile(x_star, (n, 1))
    y0 = np.stack([-pb.local_gradient(problem, i, x_star) for i in range(n)])
    states = init_states(variant, problem, wm, cfg, x0=x0, y0=y0)
    if variant == "extra":
        W = wm.dense
        mix = W @ x0
        for i, s in enumerate(states):
            s.x_prev = x0[i].copy()
            s.mix_prev = mix[i]
            s.fgrad_prev = pb.local_gradient(problem, i, s.x)
    return states


def stack_x(states) -> np.ndarray:
    """(n, p) array of current primal iterates."""
    return np.stack([s.x for s in states])


def stack_y(states) -> np.ndarray:
    """(n, p) array of current dual iterates."""
    return np.stack([s.y for s in states])
