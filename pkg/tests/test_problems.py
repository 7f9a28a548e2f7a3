import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from pdqnet import problems as pb


def _numeric_gradient(problem, i, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (pb.local_value(problem, i, x + e) - pb.local_value(problem, i, x - e)) / (2 * h)
    return g


def test_quadratic_generator_shapes_and_determinism():
    p1 = pb.generate_quadratic(20, 5, 1, 3)
    p2 = pb.generate_quadratic(20, 5, 1, 3)
    assert p1.a.shape == (20, 5) and p1.b.shape == (20, 5)
    assert_allclose(p1.a, p2.a, atol=0)
    assert_allclose(p1.b, p2.b, atol=0)
    assert pb.problem_digest(p1) == pb.problem_digest(p2)
    assert pb.problem_digest(p1) != pb.problem_digest(pb.generate_quadratic(20, 5, 1, 4))


def test_quadratic_eta_zero_is_identity_curvature():
    problem = pb.generate_quadratic(10, 4, 0, 0)
    assert_allclose(problem.a, 1.0, atol=0)


def test_quadratic_eta_controls_conditioning():
    problem = pb.generate_quadratic(40, 6, 2, 0)
    assert problem.a.max() <= 100.0 and problem.a.min() >= 0.01
    assert problem.a.max() > 1.0 and problem.a.min() < 1.0
    assert problem.b.min() >= 0.0 and problem.b.max() <= 1.0


def test_quadratic_rejects_bad_data():
    with pytest.raises(ValueError, match="strictly positive"):
        pb.QuadraticProblem(a=np.zeros((2, 2)), b=np.zeros((2, 2)))
    with pytest.raises(ValueError, match="\\(n, p\\)"):
        pb.QuadraticProblem(a=np.ones((2, 2)), b=np.zeros((3, 2)))


def test_logistic_generator_layout():
    problem = pb.generate_logistic(20, 4, 100, 3.0, 1.0, 1.0, 1e-4, 0)
    assert problem.features.shape == (20, 100, 4)
    assert problem.labels.shape == (20, 100)
    assert set(np.unique(problem.labels)) == {-1.0, 1.0}
    # first half of each node's samples is the positive class
    assert (problem.labels[:, :50] == 1.0).all()
    assert (problem.labels[:, 50:] == -1.0).all()
    # positive-class features are centered near +mean, negative near -mean
    assert problem.features[:, :50, :].mean() == pytest.approx(3.0, abs=0.1)
    assert problem.features[:, 50:, :].mean() == pytest.approx(-3.0, abs=0.1)


def test_local_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    quad = pb.generate_quadratic(5, 3, 1, 1)
    logi = pb.generate_logistic(4, 3, 12, 3.0, 1.0, 1.0, 1e-4, 1)
    for problem in (quad, logi):
        for i in range(3):
            x = rng.standard_normal(3)
            assert_allclose(
                pb.local_gradient(problem, i, x),
                _numeric_gradient(problem, i, x),
                rtol=1e-5,
                atol=1e-7,
            )


def test_local_hessian_matches_gradient_differences():
    rng = np.random.default_rng(1)
    logi = pb.generate_logistic(4, 3, 12, 3.0, 1.0, 1.0, 1e-4, 1)
    x = rng.standard_normal(3)
    h = 1e-6
    H = pb.local_hessian(logi, 0, x)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        col = (pb.local_gradient(logi, 0, x + e) - pb.local_gradient(logi, 0, x - e)) / (2 * h)
        assert_allclose(H[:, k], col, rtol=1e-4, atol=1e-6)
    assert_allclose(H, H.T, atol=1e-14)


def test_logistic_gradient_stable_at_extreme_arguments():
    problem = pb.generate_logistic(3, 2, 8, 3.0, 1.0, 1.0, 1e-4, 0)
    for scale in (1e3, 1e6, 1e8):
        g = pb.local_gradient(problem, 0, np.full(2, scale))
        assert np.isfinite(g).all()
        g = pb.local_gradient(problem, 0, np.full(2, -scale))
        assert np.isfinite(g).all()


def test_centralized_solution_quadratic_stationary(quad20):
    problem, ref = quad20
    assert ref.method == "closed-form"
    assert_allclose(pb.aggregate_gradient(problem, ref.x_star), 0.0, atol=1e-12)
    # closed form: x* = -(sum b) / (sum a)
    manual = -problem.b.sum(axis=0) / problem.a.sum(axis=0)
    assert_allclose(ref.x_star, manual, atol=1e-14)


def test_centralized_solution_logistic_stationary():
    problem = pb.generate_logistic(6, 3, 20, 3.0, 1.0, 1.0, 1e-4, 0)
    ref = pb.centralized_solution(problem)
    assert ref.method == "high-accuracy oracle"
    grad = pb.aggregate_gradient(problem, ref.x_star)
    assert np.linalg.norm(grad) <= 1e-10
    assert ref.residual_norm <= 1e-10


def test_local_argmin_solves_shifted_problem():
    problem = pb.generate_quadratic(5, 3, 1, 0)
    rng = np.random.default_rng(2)
    y = rng.standard_normal(3)
    x = pb.local_argmin_L0(problem, 2, y)
    assert_allclose(pb.local_gradient(problem, 2, x) + y, 0.0, atol=1e-13)


def test_local_argmin_rejects_logistic():
    problem = pb.generate_logistic(3, 2, 8, 3.0, 1.0, 1.0, 1e-4, 0)
    with pytest.raises(ValueError, match="no closed form"):
        pb.local_argmin_L0(problem, 0, np.zeros(2))


def test_convexity_bounds_bracket_local_hessians():
    rng = np.random.default_rng(3)
    quad = pb.generate_quadratic(6, 4, 2, 0)
    bounds = pb.convexity_bounds(quad)
    for i in range(quad.n):
        eigs = np.linalg.eigvalsh(pb.local_hessian(quad, i, np.zeros(4)))
        assert bounds.mu <= eigs.min() + 1e-12
        assert eigs.max() <= bounds.L + 1e-12

    logi = pb.generate_logistic(4, 3, 12, 3.0, 1.0, 1.0, 1e-4, 0)
    lb = pb.convexity_bounds(logi)
    assert 0 < lb.mu <= lb.L
    for i in range(logi.n):
        for _ in range(5):
            x = rng.standard_normal(3) * rng.uniform(0.1, 10)
            eigs = np.linalg.eigvalsh(pb.local_hessian(logi, i, x))
            assert lb.mu <= eigs.min() + 1e-12
            assert eigs.max() <= lb.L + 1e-9


def test_problem_dict_round_trip():
    for problem in (
        pb.generate_quadratic(4, 3, 1, 5),
        pb.generate_logistic(3, 2, 8, 3.0, 1.0, 1.0, 1e-4, 5),
    ):
        back = pb.problem_from_dict(pb.problem_to_dict(problem))
        assert back.family == problem.family
        assert pb.problem_digest(back) == pb.problem_digest(problem)


def test_validate_problem_spec_accepts_shipped_shapes():
    assert pb.validate_problem_spec({"family": "quadratic", "n": 20, "p": 5, "eta": 0}) == []
    assert (
        pb.validate_problem_spec(
            {
                "family": "logistic",
                "n": 20,
                "p": 4,
                "q": 100,
                "mean": 3.0,
                "std_pos": 1.0,
                "std_neg": 1.0,
                "reg_weight": 1e-4,
            }
        )
        == []
    )


def test_validate_problem_spec_reports_each_violation():
    errors = pb.validate_problem_spec(
        {"family": "quadratic", "n": 0, "p": -1, "eta": -2, "extra": 1}
    )
    joined = " | ".join(errors)
    assert "n" in joined and "p" in joined and "eta" in joined and "extra" in joined
    assert pb.validate_problem_spec({"family": "gaussian"}) != []
    assert pb.validate_problem_spec([]) != []


def test_problem_from_spec_dispatch_and_rejection():
    problem = pb.problem_from_spec({"family": "quadratic", "n": 4, "p": 2, "eta": 0}, 9)
    assert problem.family == "quadratic"
    assert pb.problem_digest(problem) == pb.problem_digest(pb.generate_quadratic(4, 2, 0, 9))
    with pytest.raises(ValueError):
        pb.problem_from_spec({"family": "quadratic", "n": 4}, 0)


@given(
    n=st.integers(min_value=2, max_value=8),
    p=st.integers(min_value=2, max_value=4),
    eta=st.integers(min_value=0, max_value=2),
    seed=st.integers(min_value=0, max_value=1000),
)
def test_centralized_quadratic_is_global_minimum(n, p, eta, seed):
    problem = pb.generate_quadratic(n, p, eta, seed)
    ref = pb.centralized_solution(problem)
    rng = np.random.default_rng(seed + 1)
    for _ in range(5):
        x = ref.x_star + rng.standard_normal(p) * rng.uniform(1e-3, 10)
        assert pb.aggregate_value(problem, x) >= ref.f_star - 1e-10


@given(seed=st.integers(min_value=0, max_value=1000))
def test_quadratic_local_value_gradient_consistency(seed):
    problem = pb.generate_quadratic(3, 2, 1, seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(2)
    # quadratic identity: f(x) = 0.5 x' grad(x) + 0.5 b' x
    val = pb.local_value(problem, 0, x)
    g = pb.local_gradient(problem, 0, x)
    assert val == pytest.approx(0.5 * x @ g + 0.5 * problem.b[0] @ x, abs=1e-10)
