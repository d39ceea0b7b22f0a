import numpy as np
import pytest

from pdgsim import objectives
from pdgsim.objectives import generate_sensing_instance, global_value, gradient, \
    lipschitz_bound, optimum, quadratic_sensing_problem, rendezvous_problem, value


def central_difference(problem, agent, theta, h=1e-5):
    d = theta.shape[0]
    out = np.empty(d)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[j] = (value(problem, agent, theta + e) - value(problem, agent, theta - e)) / (2 * h)
    return out


def test_rendezvous_gradient_example():
    problem = rendezvous_problem([[0.0, 4.0], [1.0, 1.0]])
    g = gradient(problem, 1, np.array([2.0, 2.0]))
    assert np.allclose(g, [4.0, -4.0], atol=1e-15)


def test_sensing_gradient_scalar_example():
    # d=1, M=1, z=3, sigma=0: grad at theta=1 is 2(1-3) = -4
    problem = quadratic_sensing_problem(np.ones((1, 1, 1)), [[3.0]], 0.0)
    assert gradient(problem, 1, np.array([1.0]))[0] == pytest.approx(-4.0, abs=1e-15)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 100:
        kind = rng.integers(2)
        m, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        if kind == 0:
            problem = generate_sensing_instance(m, int(rng.integers(1, 5)), d,
                                                noise_scale=0.5, seed=int(rng.integers(10**6)),
                                                sigma=float(rng.random()))
        else:
            problem = rendezvous_problem(rng.standard_normal((m, d)))
        agent = int(rng.integers(1, m + 1))
        theta = rng.standard_normal(d)
        g = gradient(problem, agent, theta)
        fd = central_difference(problem, agent, theta)
        assert np.linalg.norm(g - fd) <= 1e-6 * (1.0 + np.linalg.norm(g))
        checked += 1


def test_optimum_scalar_mean_example():
    # m=3, M_i=1, z={1,2,3}: normal equations give the sample mean
    M = np.ones((3, 1, 1))
    z = np.array([[1.0], [2.0], [3.0]])
    opt = optimum(quadratic_sensing_problem(M, z, 0.0))
    assert opt.theta_star[0] == pytest.approx(2.0, abs=1e-12)


def test_optimum_rendezvous_mean():
    opt = optimum(rendezvous_problem([[0.0], [4.0]]))
    assert opt.theta_star[0] == pytest.approx(2.0, abs=1e-15)


def test_optimality_residual_on_random_instances():
    rng = np.random.default_rng(9)
    for seed in rng.integers(10**6, size=10):
        problem = generate_sensing_instance(5, 3, 2, noise_scale=0.3, seed=int(seed), sigma=0.1)
        opt = optimum(problem)
        assert np.linalg.norm(opt.residual_gradients.sum(axis=0)) <= 1e-10


def test_lipschitz_examples():
    assert lipschitz_bound(rendezvous_problem([[0.0], [1.0]])) == 2.0
    problem = quadratic_sensing_problem(3.0 * np.ones((1, 1, 1)), [[0.0]], 1.0)
    assert lipschitz_bound(problem) == pytest.approx(20.0, abs=1e-12)


def test_lipschitz_bound_holds_on_random_pairs():
    problem = generate_sensing_instance(4, 3, 3, noise_scale=1.0, seed=21, sigma=0.2)
    L = lipschitz_bound(problem)
    rng = np.random.default_rng(22)
    for _ in range(1000):
        i = int(rng.integers(1, 5))
        u, v = rng.standard_normal((2, 3)) * 3.0
        lhs = np.linalg.norm(gradient(problem, i, u) - gradient(problem, i, v))
        assert lhs <= L * np.linalg.norm(u - v) * (1.0 + 1e-12)


def test_convexity_witness():
    problem = generate_sensing_instance(3, 2, 2, noise_scale=0.5, seed=5, sigma=0.0)
    rng = np.random.default_rng(6)
    for _ in range(1000):
        i = int(rng.integers(1, 4))
        u, v = rng.standard_normal((2, 2)) * 2.0
        gap = value(problem, i, u) - value(problem, i, v) \
            - gradient(problem, i, v) @ (u - v)
        assert gap >= -1e-10


def test_noiseless_recovery():
    problem = generate_sensing_instance(5, 3, 2, noise_scale=0.0, seed=12)
    rng = np.random.default_rng([12, 0x0B7])
    rng.standard_normal((5, 3, 2))
    theta_true = rng.standard_normal(2)
    opt = optimum(problem)
    assert np.linalg.norm(opt.theta_star - theta_true) <= 1e-10


def test_global_minimum():
    problem = generate_sensing_instance(4, 3, 2, noise_scale=0.4, seed=8, sigma=0.05)
    opt = optimum(problem)
    rng = np.random.default_rng(13)
    for _ in range(50):
        theta = opt.theta_star + rng.standard_normal(2)
        assert global_value(problem, theta) >= opt.f_star - 1e-12


def test_generation_deterministic():
    a = generate_sensing_instance(5, 3, 2, noise_scale=0.1, seed=1)
    b = generate_sensing_instance(5, 3, 2, noise_scale=0.1, seed=1)
    assert np.array_equal(a.M, b.M) and np.array_equal(a.z, b.z)
    c = generate_sensing_instance(5, 3, 2, noise_scale=0.1, seed=2)
    assert not np.array_equal(a.M, c.M)


def test_json_roundtrip_exact():
    problem = generate_sensing_instance(3, 2, 2, noise_scale=0.3, seed=44, sigma=0.7)
    back = objectives.from_json(objectives.to_json(problem))
    assert np.array_equal(problem.M, back.M)
    assert np.array_equal(problem.z, back.z)
    assert np.array_equal(problem.sigma, back.sigma)
    rdv = rendezvous_problem([[0.25, -1.5]])
    back = objectives.from_json(objectives.to_json(rdv))
    assert np.array_equal(rdv.x0, back.x0)


def test_rank_deficiency_error():
    problem = quadratic_sensing_problem(np.zeros((2, 2, 2)), np.zeros((2, 2)), 0.0)
    with pytest.raises(ValueError, match="rank deficient"):
        optimum(problem)


def test_query_validation():
    problem = rendezvous_problem([[0.0, 0.0]])
    with pytest.raises(ValueError, match="out of range"):
        gradient(problem, 2, np.zeros(2))
    with pytest.raises(ValueError, match="non-finite"):
        gradient(problem, 1, np.array([np.nan, 0.0]))


def test_batch_helpers_match_scalar_paths():
    problem = generate_sensing_instance(3, 2, 2, noise_scale=0.2, seed=77, sigma=0.3)
    rng = np.random.default_rng(78)
    pts = rng.standard_normal((6, 2))
    vals = objectives.global_values(problem, pts)
    grads = objectives.global_gradients(problem, pts)
    for n in range(6):
        assert vals[n] == pytest.approx(objectives.global_value(problem, pts[n]), rel=1e-12)
        assert np.allclose(grads[n], objectives.global_gradient(problem, pts[n]), atol=1e-12)
