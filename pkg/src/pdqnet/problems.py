"""Problem families for consensus experiments: condition-number-controlled
diagonal quadratics and distributed logistic regression, with node-local
gradient/Hessian access and centralized reference oracles.

Node ``i`` owns ``f_i``; the network objective is ``f(x) = sum_i f_i(x_i)``
subject to consensus.  The logistic regularizer ``(reg/2) ||x||^2`` is split
as ``(reg/(2n)) ||x_i||^2`` per node so the node objectives sum back to the
aggregate at consensus and every ``f_i`` stays strongly convex.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "QuadraticProblem",
    "LogisticProblem",
    "ReferenceSolution",
    "ConvexityBounds",
    "generate_quadratic",
    "generate_logistic",
    "local_value",
    "local_gradient",
    "local_hessian",
    "local_argmin_L0",
    "aggregate_value",
    "aggregate_gradient",
    "aggregate_hessian",
    "centralized_solution",
    "convexity_bounds",
    "problem_to_dict",
    "problem_from_dict",
    "problem_digest",
    "validate_problem_spec",
    "problem_from_spec",
]


@dataclass(frozen=True)
class QuadraticProblem:
    """Per node: ``f_i(x) = 0.5 x' diag(a_i) x + b_i' x`` with ``a_i > 0``."""

    a: np.ndarray  # (n, p) diagonals, strictly positive
    b: np.ndarray  # (n, p)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 2 or a.shape != b.shape:
            raise ValueError("a and b must both be (n, p)")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ValueError("non-finite problem data")
        if not (a > 0).all():
            raise ValueError("all diagonal entries must be strictly positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def family(self) -> str:
        return "quadratic"

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def p(self) -> int:
        return self.a.shape[1]


@dataclass(frozen=True)
class LogisticProblem:
    """Per node: ``q`` labelled feature vectors plus a shared ridge weight.

    ``f_i(x) = (reg/(2n)) ||x||^2 + sum_l log(1 + exp(-v_il u_il' x))``.
    """

    features: np.ndarray  # (n, q, p)
    labels: np.ndarray  # (n, q) in {-1, +1}
    reg_weight: float

    def __post_init__(self):
        U = np.asarray(self.features, dtype=float)
        V = np.asarray(self.labels, dtype=float)
        if U.ndim != 3 or V.shape != U.shape[:2]:
            raise ValueError("features must be (n, q, p) with labels (n, q)")
        if not np.isin(V, (-1.0, 1.0)).all():
            raise ValueError("labels must be in {-1, +1}")
        if not self.reg_weight > 0:
            raise ValueError("reg_weight must be positive for strong convexity")
        object.__setattr__(self, "features", U)
        object.__setattr__(self, "labels", V)

    @property
    def family(self) -> str:
        return "logistic"

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def q(self) -> int:
        return self.features.shape[1]

    @property
    def p(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True)
class ReferenceSolution:
    """Minimizer of the aggregate objective with its residual certificate."""

    x_star: np.ndarray
    f_star: float
    method: str  # "closed-form" | "high-accuracy oracle"
    residual_norm: float


@dataclass(frozen=True)
class ConvexityBounds:
    """Aggregate-Hessian eigenvalue bounds ``0 < mu <= L``."""

    mu: float
    L: float


def generate_quadratic(n: int, p: int, eta: float, seed: int) -> QuadraticProblem:
    """Diagonal quadratics with condition number controlled by ``eta``.

    Per node, ``ceil(p/2)`` diagonal entries are drawn uniformly from the grid
    ``{1, 10, ..., 10^eta}`` and ``floor(p/2)`` from ``{1, 1/10, ..., 10^-eta}``,
    so the aggregate diagonal lies in ``[n 10^-eta, n 10^eta]``.  Offsets are
    uniform on ``[0, 1]^p``.  Deterministic given the seed.
    """
    if p < 2:
        raise ValueError(f"need p >= 2, got p={p}")
    if eta < 0:
        raise ValueError(f"need eta >= 0, got eta={eta}")
    rng = np.random.default_rng(seed)
    emax = int(eta)
    hi = 10.0 ** rng.integers(0, emax + 1, size=(n, (p + 1) // 2)).astype(float)
    lo = 10.0 ** (-rng.integers(0, emax + 1, size=(n, p // 2)).astype(float))
    a = np.hstack([hi, lo])
    b = rng.uniform(0, 1, size=(n, p))
    return QuadraticProblem(a=a, b=b)


def generate_logistic(
    n: int,
    p: int,
    q: int,
    mean: float,
    std_pos: float,
    std_neg: float,
    reg_weight: float,
    seed: int,
) -> LogisticProblem:
    """Balanced two-class Gaussian features per node: label ``+1`` features from
    ``normal(mean * 1, std_pos)``, label ``-1`` from ``normal(-mean * 1, std_neg)``.
    Deterministic given the seed."""
    if q < 1:
        raise ValueError(f"need q >= 1, got q={q}")
    if reg_weight <= 0:
        raise ValueError("reg_weight must be positive")
    rng = np.random.default_rng(seed)
    half = q // 2
    U = np.empty((n, q, p))
    V = np.empty((n, q))
    for i in range(n):
        U[i, :half] = rng.normal(mean, std_pos, size=(half, p))
        U[i, half:] = rng.normal(-mean, std_neg, size=(q - half, p))
        V[i, :half] = 1.0
        V[i, half:] = -1.0
    return LogisticProblem(features=U, labels=V, reg_weight=reg_weight)


def _sigmoid_of_negative(z: np.ndarray) -> np.ndarray:
    """``1 / (1 + exp(z))`` evaluated without exponentiating large positives."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    ez = np.exp(-z[pos])
    out[pos] = ez / (1.0 + ez)
    out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
    return out


def local_value(problem, i: int, x_i: np.ndarray) -> float:
    """Objective value of node ``i`` at ``x_i``."""
    x = np.asarray(x_i, dtype=float)
    if problem.family == "quadratic":
        return float(0.5 * x @ (problem.a[i] * x) + problem.b[i] @ x)
    U, V = problem.features[i], problem.labels[i]
    z = V * (U @ x)
    reg = problem.reg_weight / problem.n
    return float(0.5 * reg * x @ x + np.logaddexp(0.0, -z).sum())


def local_gradient(problem, i: int, x_i: np.ndarray) -> np.ndarray:
    """Gradient of node ``i``'s objective at ``x_i``."""
    x = np.asarray(x_i, dtype=float)
    if problem.family == "quadratic":
        return problem.a[i] * x + problem.b[i]
    U, V = problem.features[i], problem.labels[i]
    z = V * (U @ x)
    w = _sigmoid_of_negative(z)
    reg = problem.reg_weight / problem.n
    return reg * x - (V * w) @ U


def local_hessian(problem, i: int, x_i: np.ndarray) -> np.ndarray:
    """Hessian of node ``i``'s objective at ``x_i`` (constant for quadratics)."""
    x = np.asarray(x_i, dtype=float)
    p = problem.p
    if problem.family == "quadratic":
        return np.diag(problem.a[i])
    U, V = problem.features[i], problem.labels[i]
    z = V * (U @ x)
    w = _sigmoid_of_negative(z)
    reg = problem.reg_weight / problem.n
    return reg * np.eye(p) + (U * (w * (1.0 - w))[:, None]).T @ U


def local_argmin_L0(problem, i: int, y_i: np.ndarray) -> np.ndarray:
    """Closed-form minimizer of ``f_i(x) + y_i' x`` (quadratics only)."""
    if problem.family != "quadratic":
        raise ValueError(
            "the inner minimizer has no closed form for the logistic objective; "
            "dual ascent supports quadratic problems only"
        )
    return -(problem.b[i] + np.asarray(y_i, dtype=float)) / problem.a[i]


def aggregate_value(problem, x: np.ndarray) -> float:
    """``sum_i f_i(x)`` at a common point ``x``."""
    return float(sum(local_value(problem, i, x) for i in range(problem.n)))


def aggregate_gradient(problem, x: np.ndarray) -> np.ndarray:
    """``sum_i grad f_i(x)`` at a common point ``x``."""
    g = np.zeros(problem.p)
    for i in range(problem.n):
        g += local_gradient(problem, i, x)
    return g


def aggregate_hessian(problem, x: np.ndarray) -> np.ndarray:
    """``sum_i hess f_i(x)`` at a common point ``x``."""
    H = np.zeros((problem.p, problem.p))
    for i in range(problem.n):
        H += local_hessian(problem, i, x)
    return H


def centralized_solution(problem) -> ReferenceSolution:
    """Minimizer of the aggregate objective.

    Quadratic instances solve the diagonal normal equations exactly; logistic
    instances run a damped Newton iteration until the aggregate gradient norm
    is at most ``1e-13 * max(1, ||x||)``.
    """
    if problem.family == "quadratic":
        asum = problem.a.sum(axis=0)
        bsum = problem.b.sum(axis=0)
        x = -bsum / asum
        residual = float(np.linalg.norm(asum * x + bsum))
        return ReferenceSolution(
            x_star=x,
            f_star=aggregate_value(problem, x),
            method="closed-form",
            residual_norm=residual,
        )
    x = np.zeros(problem.p)
    for _ in range(200):
        g = aggregate_gradient(problem, x)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= 1e-13 * max(1.0, float(np.linalg.norm(x))):
            break
        H = aggregate_hessian(problem, x)
        dx = np.linalg.solve(H, -g)
        step = 1.0
        while step > 1e-8:
            if np.linalg.norm(aggregate_gradient(problem, x + step * dx)) < gnorm:
                break
            step *= 0.5
        x = x + step * dx
    residual = float(np.linalg.norm(aggregate_gradient(problem, x)))
    if residual > 1e-12 * max(1.0, float(np.linalg.norm(x))):
        raise RuntimeError(f"reference solve stalled at gradient norm {residual:.3e}")
    return ReferenceSolution(
        x_star=x,
        f_star=aggregate_value(problem, x),
        method="high-accuracy oracle",
        residual_norm=residual,
    )


def convexity_bounds(problem) -> ConvexityBounds:
    """Bounds ``mu I <= hess f_i <= L I`` valid for every node and point."""
    if problem.family == "quadratic":
        return ConvexityBounds(mu=float(problem.a.min()), L=float(problem.a.max()))
    reg = problem.reg_weight / problem.n
    # sigmoid curvature weight is at most 1/4 per sample
    worst = 0.0
    for i in range(problem.n):
        U = problem.features[i]
        worst = max(worst, float(np.linalg.eigvalsh(0.25 * U.T @ U).max()))
    return ConvexityBounds(mu=reg, L=reg + worst)


def problem_to_dict(problem) -> dict:
    if problem.family == "quadratic":
        return {
            "family": "quadratic",
            "a": problem.a.tolist(),
            "b": problem.b.tolist(),
        }
    return {
        "family": "logistic",
        "features": problem.features.tolist(),
        "labels": problem.labels.tolist(),
        "reg_weight": problem.reg_weight,
    }


def problem_from_dict(d: dict):
    if d["family"] == "quadratic":
        return QuadraticProblem(a=np.array(d["a"], float), b=np.array(d["b"], float))
    if d["family"] == "logistic":
        return LogisticProblem(
            features=np.array(d["features"], float),
            labels=np.array(d["labels"], float),
            reg_weight=float(d["reg_weight"]),
        )
    raise ValueError(f"unknown problem family {d.get('family')!r}")


def problem_digest(problem) -> str:
    """Short stable digest of the problem data for trace metadata."""
    payload = json.dumps(problem_to_dict(problem), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def validate_problem_spec(spec: dict) -> list[str]:
    """All schema violations in a generator spec (empty list when valid)."""
    if not isinstance(spec, dict):
        return [f"problem spec must be an object, got {type(spec).__name__}"]
    errors = []
    family = spec.get("family")
    if family not in ("quadratic", "logistic"):
        errors.append(f"problem family must be 'quadratic' or 'logistic', got {family!r}")
        return errors
    required = (
        {"family", "n", "p", "eta"}
        if family == "quadratic"
        else {"family", "n", "p", "q", "mean", "std_pos", "std_neg", "reg_weight"}
    )
    missing = sorted(required - set(spec))
    unknown = sorted(set(spec) - required)
    if missing:
        errors.append(f"problem spec missing keys: {missing}")
    if unknown:
        errors.append(f"problem spec has unknown keys: {unknown}")
    if missing:
        return errors
    if not (isinstance(spec["n"], int) and spec["n"] >= 1):
        errors.append(f"problem n must be a positive integer, got {spec['n']!r}")
    if not (isinstance(spec["p"], int) and spec["p"] >= 2):
        errors.append(f"problem p must be an integer >= 2, got {spec['p']!r}")
    if family == "quadratic":
        if not (isinstance(spec["eta"], (int, float)) and spec["eta"] >= 0):
            errors.append(f"eta must be a nonnegative number, got {spec['eta']!r}")
    else:
        if not (isinstance(spec["q"], int) and spec["q"] >= 1):
            errors.append(f"q must be a positive integer, got {spec['q']!r}")
        for key in ("mean", "std_pos", "std_neg", "reg_weight"):
            if not isinstance(spec[key], (int, float)):
                errors.append(f"{key} must be a number, got {spec[key]!r}")
        if isinstance(spec.get("reg_weight"), (int, float)) and spec["reg_weight"] <= 0:
            errors.append("reg_weight must be positive")
    return errors


def problem_from_spec(spec: dict, seed: int):
    """Generate a problem instance from a generator spec plus a seed."""
    errors = validate_problem_spec(spec)
    if errors:
        raise ValueError("invalid problem spec: " + "; ".join(errors))
    if spec["family"] == "quadratic":
        return generate_quadratic(spec["n"], spec["p"], spec["eta"], seed)
    return generate_logistic(
        spec["n"],
        spec["p"],
        spec["q"],
        spec["mean"],
        spec["std_pos"],
        spec["std_neg"],
        spec["reg_weight"],
        seed,
    )
