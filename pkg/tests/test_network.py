import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from pdqnet.network import (
    TopologyError,
    WeightMatrixError,
    apply_laplacian,
    apply_mixing,
    build_d_regular_cycle,
    graph_distances,
    laplacian_dense,
    make_topology,
    metropolis_weights,
    smallest_nonzero_laplacian_eigenvalue,
    topology_from_dict,
    topology_to_dict,
    validate_weight_matrix,
    weight_matrix_from_entries,
    weights_from_dict,
    weights_to_dict,
)


def test_make_topology_neighborhoods_sorted_and_self_inclusive():
    t = make_topology(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    assert t.neighborhoods[1] == (0, 1, 2)
    assert t.sizes[1] == 3
    assert t.neighbors(1) == (0, 2)
    assert 1 not in t.neighbors(1)


def test_make_topology_rejects_self_loops_and_range():
    with pytest.raises(TopologyError, match="self loop"):
        make_topology(3, [(0, 0)])
    with pytest.raises(TopologyError, match="out of range"):
        make_topology(3, [(0, 5)])
    with pytest.raises(TopologyError, match="disconnected"):
        make_topology(4, [(0, 1), (2, 3)])
    with pytest.raises(TopologyError, match="positive"):
        make_topology(0, [])


def test_make_topology_deduplicates_edges():
    t = make_topology(3, [(0, 1), (1, 0), (1, 2), (0, 2)])
    assert t.edges == ((0, 1), (0, 2), (1, 2))


@pytest.mark.parametrize("n,d", [(6, 2), (20, 4), (7, 4), (5, 4)])
def test_cycle_is_d_regular(n, d):
    t = build_d_regular_cycle(n, d)
    assert all(s == d + 1 for s in t.sizes)
    # edge (i, j) present iff ring distance <= d/2
    for i in range(n):
        for j in t.neighbors(i):
            ring = min((i - j) % n, (j - i) % n)
            assert ring <= d // 2


def test_cycle_rejects_bad_degree():
    with pytest.raises(TopologyError, match="even"):
        build_d_regular_cycle(6, 3)
    with pytest.raises(TopologyError, match="2 <= d <= n-1"):
        build_d_regular_cycle(4, 4)


def test_graph_distances_on_ring():
    t = build_d_regular_cycle(8, 2)
    assert graph_distances(t, 0) == [0, 1, 2, 3, 4, 3, 2, 1]


def test_metropolis_weights_conditions(wm20):
    measured = validate_weight_matrix(wm20)
    W = wm20.dense
    assert_allclose(W.sum(axis=1), 1.0, atol=1e-14)
    assert_allclose(W, W.T, atol=0)
    assert measured["delta"] > 0
    assert measured["Delta"] < 1
    assert measured["second_eigenvalue_modulus"] < 1
    assert wm20.delta == pytest.approx(W.diagonal().min())
    assert wm20.Delta == pytest.approx(W.diagonal().max())


def test_metropolis_on_regular_cycle_has_uniform_diagonal(wm20):
    # all degrees equal, so w_ij = 1/(d+1) on edges and w_ii = 1/(d+1)
    d = wm20.topology.sizes[0] - 1
    assert_allclose(wm20.dense.diagonal(), 1.0 / (d + 1), atol=1e-14)


def test_dense_weights_are_read_only(wm20):
    with pytest.raises(ValueError):
        wm20.dense[0, 0] = 0.5


def test_validate_lists_every_violation():
    t = build_d_regular_cycle(4, 2)
    W = np.full((4, 4), 0.25)
    W[0, 1] = 0.4  # breaks symmetry, row sums, and the sparsity pattern
    W[2, 2] = -0.1
    wm = metropolis_weights(t)
    bad = wm.__class__(topology=t, dense=W, delta=-0.1, Delta=0.4)
    with pytest.raises(WeightMatrixError) as exc:
        validate_weight_matrix(bad, t)
    msg = str(exc.value)
    assert "asymmetry" in msg
    assert "row sums" in msg
    assert "off the graph pattern" in msg
    assert "delta" in msg


def test_from_entries_rejects_off_pattern_weight():
    t = build_d_regular_cycle(6, 2)
    W = metropolis_weights(t).dense.copy()
    W[0, 3] = W[3, 0] = 1e-6  # (0, 3) is not an edge at d=2
    with pytest.raises(WeightMatrixError, match="off the graph pattern"):
        weight_matrix_from_entries(t, W)


def test_from_entries_rejects_heavy_second_eigenvalue():
    t = make_topology(2, [(0, 1)])
    with pytest.raises(WeightMatrixError, match="second eigenvalue"):
        weight_matrix_from_entries(t, [[0.0, 1.0], [1.0, 0.0]])


def test_apply_mixing_matches_dense(wm20, rng):
    x = rng.standard_normal((20, 5))
    assert_allclose(apply_mixing(wm20, x), wm20.dense @ x, atol=1e-14)


def test_apply_laplacian_matches_kronecker(wm20, rng):
    x = rng.standard_normal((20, 5))
    got = apply_laplacian(wm20, x)
    dense = laplacian_dense(wm20, 5)
    assert_allclose(got.ravel(), dense @ x.ravel(), atol=1e-13)


def test_laplacian_annihilates_consensus(wm20):
    x = np.tile(np.arange(5.0), (20, 1))
    assert_allclose(apply_laplacian(wm20, x), 0.0, atol=1e-14)


def test_smallest_nonzero_laplacian_eigenvalue(wm20):
    lam = smallest_nonzero_laplacian_eigenvalue(wm20)
    eigs = np.linalg.eigvalsh(np.eye(20) - wm20.dense)
    assert lam == pytest.approx(eigs[eigs > 1e-10].min())
    assert lam > 0


def test_serialization_round_trip(wm20):
    t2 = topology_from_dict(topology_to_dict(wm20.topology))
    assert t2 == wm20.topology
    wm2 = weights_from_dict(weights_to_dict(wm20))
    assert_allclose(wm2.dense, wm20.dense, atol=0)
    assert wm2.topology == wm20.topology


@given(
    n=st.integers(min_value=4, max_value=12),
    half=st.integers(min_value=1, max_value=3),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_mixing_preserves_consensus_and_contracts(n, half, seed):
    d = min(2 * half, 2 * ((n - 1) // 2))
    t = build_d_regular_cycle(n, d)
    wm = metropolis_weights(t)
    validate_weight_matrix(wm)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    mixed = apply_mixing(wm, x)
    # column means are invariant under doubly stochastic mixing
    assert_allclose(mixed.mean(axis=0), x.mean(axis=0), atol=1e-12)
    # disagreement cannot grow
    dev = x - x.mean(axis=0)
    dev_mixed = mixed - mixed.mean(axis=0)
    assert np.linalg.norm(dev_mixed) <= np.linalg.norm(dev) + 1e-12


@given(seed=st.integers(min_value=0, max_value=10_000))
def test_laplacian_is_positive_semidefinite(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 10))
    d = 2
    wm = metropolis_weights(build_d_regular_cycle(n, d))
    x = rng.standard_normal((n, 3))
    quad = float(np.sum(x * apply_laplacian(wm, x)))
    assert quad >= -1e-12
