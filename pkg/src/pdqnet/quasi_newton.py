"""Curvature engine: primal BFGS updates, the truncated-series primal descent
with block-diagonal splitting, and the neighborhood dual BFGS with closed-form
update and distributed direction assembly.

Primal side: each node keeps ``B_i`` approximating its local objective Hessian;
the network matrix ``G = B + alpha (I - Z)`` is inverted approximately by a
K-term series built on the splitting ``G = D - M`` with

    ``D_i = B_i + 2 alpha (1 - w_ii) I``   (block diagonal)
    ``M   = alpha (I - 2 Z_diag + Z)``     (graph-sparse)

so each series term costs one neighbor exchange.

Dual side: each node keeps a neighborhood matrix ``C_i`` over the stacked
coordinates of ``n_i``, updated from normalized variation pairs and regularized
by ``gamma I``; directions ``(C_i^{-1} + Gamma Ups_i) h_{n_i}`` are scattered
and summed so that the network applies ``H^{-1} = sum_i S_i' C_i^{-1} S_i + Gamma I``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Topology, WeightMatrix

__all__ = [
    "VariationPair",
    "curvature_pair_accepted",
    "bfgs_update_primal",
    "clip_spectrum",
    "neumann_diagonal_block",
    "neumann_first_term",
    "neumann_recursion_step",
    "neumann_descent",
    "upsilon_diagonal",
    "dual_variations",
    "bfgs_update_dual",
    "dual_neighborhood_direction",
    "assemble_global_primal_inverse",
    "assemble_global_dual_inverse",
    "primal_eig_extremes",
    "primal_inverse_eig_bounds",
    "dual_inverse_eig_bounds",
]

EPS_SKIP = 1e-12


@dataclass(frozen=True)
class VariationPair:
    """Variable/gradient variation pair feeding a secant update."""

    variable_variation: np.ndarray
    gradient_variation: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.variable_variation, dtype=float)
        s = np.asarray(self.gradient_variation, dtype=float)
        if v.shape != s.shape:
            raise ValueError("variation vectors must have equal length")
        object.__setattr__(self, "variable_variation", v)
        object.__setattr__(self, "gradient_variation", s)


def curvature_pair_accepted(u: np.ndarray, r: np.ndarray, eps_skip: float = EPS_SKIP) -> bool:
    """Shared skip rule: accept only when ``u'r`` clears a relative threshold
    guarding both non-positive curvature and catastrophic cancellation."""
    u = np.asarray(u, dtype=float)
    r = np.asarray(r, dtype=float)
    return float(u @ r) > eps_skip * float(np.linalg.norm(u)) * float(np.linalg.norm(r))


def bfgs_update_primal(B: np.ndarray, u: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Rank-two secant update of a node's local curvature matrix.

    Returns ``B + r r'/(u'r) - B u u' B/(u'B u)`` when the pair is accepted,
    otherwise ``B`` unchanged.  Accepted updates satisfy ``B+ u = r``.
    """
    B = np.asarray(B, dtype=float)
    u = np.asarray(u, dtype=float)
    r = np.asarray(r, dtype=float)
    if not (np.isfinite(B).all() and np.isfinite(u).all() and np.isfinite(r).all()):
        raise ValueError("non-finite input to the primal curvature update")
    if not curvature_pair_accepted(u, r):
        return B
    Bu = B @ u
    return B + np.outer(r, r) / (u @ r) - np.outer(Bu, Bu) / (u @ Bu)


def clip_spectrum(B: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Eigenvalue clip of a symmetric matrix into ``[lo, hi]`` (optional
    curvature safeguard; off by default in the algorithms)."""
    vals, vecs = np.linalg.eigh(np.asarray(B, dtype=float))
    return (vecs * np.clip(vals, lo, hi)) @ vecs.T


def neumann_diagonal_block(B_i: np.ndarray, alpha: float, w_ii: float) -> np.ndarray:
    """Block-diagonal splitting term ``D_i = B_i + 2 alpha (1 - w_ii) I``."""
    p = B_i.shape[0]
    return B_i + 2.0 * alpha * (1.0 - w_ii) * np.eye(p)


def neumann_first_term(D_inv_i: np.ndarray, g_i: np.ndarray) -> np.ndarray:
    """Series seed ``d = -D_i^{-1} g_i`` (the K = 0 direction)."""
    return -(D_inv_i @ g_i)


def neumann_recursion_step(
    D_inv_i: np.ndarray,
    g_i: np.ndarray,
    alpha: float,
    w_ii: float,
    d_i: np.ndarray,
    neighbor_sum: np.ndarray,
) -> np.ndarray:
    """One series term: ``d_i <- D_i^{-1} ((M d)_i - g_i)`` with
    ``(M d)_i = alpha ((1 - w_ii) d_i + sum_{j != i} w_ij d_j)``;
    ``neighbor_sum`` is the weighted sum over delivered neighbor directions."""
    Md_i = alpha * ((1.0 - w_ii) * d_i + neighbor_sum)
    return D_inv_i @ (Md_i - g_i)


def neumann_descent(
    g: np.ndarray, B: np.ndarray, wm: WeightMatrix, alpha: float, K: int
) -> np.ndarray:
    """Direction ``d = -(series inverse of B + alpha (I - Z)) g`` with K extra
    terms; block ``i`` of each recursion step reads only neighbor blocks."""
    if K < 0:
        raise ValueError(f"need K >= 0, got K={K}")
    g = np.asarray(g, dtype=float)
    B = np.asarray(B, dtype=float)
    W = wm.dense
    n = g.shape[0]
    diag = np.diag(W)
    D_inv = np.stack(
        [np.linalg.inv(neumann_diagonal_block(B[i], alpha, diag[i])) for i in range(n)]
    )
    d = -np.einsum("ijk,ik->ij", D_inv, g)
    off = W - np.diag(diag)
    for _ in range(K):
        Md = alpha * ((1.0 - diag)[:, None] * d + off @ d)
        d = np.einsum("ijk,ik->ij", D_inv, Md - g)
    return d


def upsilon_diagonal(t: Topology, i: int, p: int) -> np.ndarray:
    """Diagonal of the neighborhood normalization: ``1/m_j`` repeated ``p``
    times for each ``j`` in the sorted self-inclusive neighborhood of ``i``."""
    return np.repeat([1.0 / t.sizes[j] for j in t.neighborhoods[i]], p)


def dual_variations(
    y_nbhd_new: np.ndarray,
    y_nbhd_old: np.ndarray,
    h_nbhd_new: np.ndarray,
    h_nbhd_old: np.ndarray,
    gamma: float,
    upsilon: np.ndarray,
) -> VariationPair:
    """Normalized neighborhood variation pair:
    ``v = Ups (y_new - y_old)``, ``s = (h_new - h_old) - gamma v``."""
    v = upsilon * (np.asarray(y_nbhd_new, float) - np.asarray(y_nbhd_old, float))
    s = (np.asarray(h_nbhd_new, float) - np.asarray(h_nbhd_old, float)) - gamma * v
    return VariationPair(variable_variation=v, gradient_variation=s)


def bfgs_update_dual(C: np.ndarray, pair: VariationPair, gamma: float) -> np.ndarray:
    """Regularized rank-two update of a neighborhood dual curvature block.

    Accepted updates satisfy the recovered raw secant ``C+ v = h_new - h_old``
    (because ``(C+ - gamma I) v = s``) and keep all eigenvalues at or above
    ``gamma``.  Pairs failing the positivity threshold leave ``C`` unchanged.
    """
    C = np.asarray(C, dtype=float)
    v = pair.variable_variation
    s = pair.gradient_variation
    if not (np.isfinite(C).all() and np.isfinite(v).all() and np.isfinite(s).all()):
        raise ValueError("non-finite input to the dual curvature update")
    if not curvature_pair_accepted(v, s):
        return C
    Cv = C @ v
    return C + np.outer(s, s) / (v @ s) - np.outer(Cv, Cv) / (v @ Cv) + gamma * np.eye(len(v))


def dual_neighborhood_direction(
    C: np.ndarray, h_nbhd: np.ndarray, Gamma: float, upsilon: np.ndarray
) -> np.ndarray:
    """Magnitude of the neighborhood dual direction ``(C^{-1} + Gamma Ups) h``;
    the ascent sign is applied by the caller."""
    h = np.asarray(h_nbhd, dtype=float)
    return np.linalg.solve(C, h) + Gamma * upsilon * h


def assemble_global_primal_inverse(
    B: np.ndarray, wm: WeightMatrix, alpha: float, K: int
) -> np.ndarray:
    """Dense K-term series inverse of ``B + alpha (I - Z)`` (diagnostic oracle):
    ``D^{-1/2} sum_k (D^{-1/2} M D^{-1/2})^k D^{-1/2}``."""
    B = np.asarray(B, dtype=float)
    n, p = B.shape[0], B.shape[1]
    W = wm.dense
    diag = np.diag(W)
    D_inv_half = np.zeros((n * p, n * p))
    for i in range(n):
        vals, vecs = np.linalg.eigh(neumann_diagonal_block(B[i], alpha, diag[i]))
        block = (vecs / np.sqrt(vals)) @ vecs.T
        D_inv_half[i * p : (i + 1) * p, i * p : (i + 1) * p] = block
    M = alpha * np.kron(np.eye(n) - 2.0 * np.diag(diag) + W, np.eye(p))
    T = D_inv_half @ M @ D_inv_half
    series = np.eye(n * p)
    term = np.eye(n * p)
    for _ in range(K):
        term = term @ T
        series = series + term
    return D_inv_half @ series @ D_inv_half


def assemble_global_dual_inverse(
    C_blocks, Gamma: float, t: Topology, p: int
) -> np.ndarray:
    """Dense ``H^{-1} = sum_i S_i' C_i^{-1} S_i + Gamma I`` where ``S_i``
    selects the stacked coordinates of neighborhood ``i`` (diagnostic only)."""
    n = t.n
    H_inv = Gamma * np.eye(n * p)
    for i in range(n):
        idx = np.concatenate([np.arange(j * p, (j + 1) * p) for j in t.neighborhoods[i]])
        H_inv[np.ix_(idx, idx)] += np.linalg.inv(np.asarray(C_blocks[i], dtype=float))
    return H_inv


def primal_eig_extremes(B: np.ndarray) -> tuple[float, float]:
    """Measured eigenvalue extremes (psi, Psi) over all node curvature blocks."""
    lo, hi = np.inf, -np.inf
    for block in B:
        vals = np.linalg.eigvalsh(block)
        lo = min(lo, float(vals[0]))
        hi = max(hi, float(vals[-1]))
    return lo, hi


def primal_inverse_eig_bounds(
    psi: float, Psi: float, delta: float, Delta: float, alpha: float, K: int
) -> tuple[float, float, float]:
    """Eigenvalue envelope ``[lam, Lam]`` of the K-term primal series inverse
    for measured curvature extremes and weight-diagonal bounds; also returns
    the series contraction factor ``rho``."""
    lam = 1.0 / (2.0 * alpha * (1.0 - delta) + Psi)
    rho = (2.0 * alpha * (1.0 - delta)) / (2.0 * alpha * (1.0 - delta) + psi)
    if rho > 0.0:
        Lam = (1.0 - rho ** (K + 1)) / ((1.0 - rho) * (2.0 * alpha * (1.0 - Delta) + psi))
    else:
        Lam = 1.0 / (2.0 * alpha * (1.0 - Delta) + psi)
    return lam, Lam, rho


def dual_inverse_eig_bounds(Gamma: float, gamma: float, n: int) -> tuple[float, float]:
    """Eigenvalue envelope ``[Gamma, Gamma + n/gamma]`` of the assembled dual
    inverse (each neighborhood block contributes at most ``1/gamma``)."""
    return Gamma, Gamma + n / gamma
