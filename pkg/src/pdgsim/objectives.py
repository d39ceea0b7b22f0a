"""Per-agent convex objectives with exact gradients and closed-form optima.

Two kinds are supported: the quadratic sensing objective
f_i(theta) = ||z_i - M_i theta||^2 + sigma_i ||theta||^2 used for distributed
parameter estimation, and the rendezvous objective f_i(x) = ||x_{i,0} - x||^2
whose gradient reveals the (sensitive) initial position. Both admit a direct
solve for the minimizer of F = (1/m) sum_i f_i, which serves as ground truth
in every convergence test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

KINDS = ("quadratic-sensing", "rendezvous")


@dataclass(frozen=True)
class Problem:
    kind: str
    m: int
    d: int
    # quadratic-sensing: M (m,s,d), z (m,s), sigma (m,); rendezvous: x0 (m,d)
    M: np.ndarray | None = None
    z: np.ndarray | None = None
    sigma: np.ndarray | None = None
    x0: np.ndarray | None = None

    @property
    def s(self) -> int | None:
        return None if self.M is None else self.M.shape[1]


@dataclass(frozen=True)
class Optimum:
    theta_star: np.ndarray
    f_star: float
    residual_gradients: np.ndarray  # (m, d) per-agent gradients at theta_star


def quadratic_sensing_problem(M, z, sigma) -> Problem:
    M = np.asarray(M, dtype=float)
    z = np.asarray(z, dtype=float)
    m, s, d = M.shape
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (m,)).copy()
    if z.shape != (m, s):
        raise ValueError(f"observations shape {z.shape} does not match measurements {(m, s)}")
    if np.any(sigma < 0):
        raise ValueError("regularization weights must be nonnegative")
    return Problem(kind="quadratic-sensing", m=m, d=d, M=M, z=z, sigma=sigma)


def rendezvous_problem(x0) -> Problem:
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim != 2:
        raise ValueError("positions must be an (m, d) array")
    m, d = x0.shape
    return Problem(kind="rendezvous", m=m, d=d, x0=x0)


def generate_sensing_instance(m: int, s: int, d: int, noise_scale: float, seed,
                              sigma: float = 0.0, measurement_scale: float = 1.0) -> Problem:
    """Random sensing instance: standard-normal M_i, z_i = M_i theta_true + noise.

    Deterministic per seed. ``measurement_scale`` multiplies the M_i entries
    (and the noise), which rescales the objective without moving its optimum
    in the noiseless case.
    """
    if min(m, s, d) < 1:
        raise ValueError("m, s, d must be positive")
    rng = np.random.default_rng([int(seed), 0x0B7])
    M = measurement_scale * rng.standard_normal((m, s, d))
    theta_true = rng.standard_normal(d)
    z = np.einsum("msd,d->ms", M, theta_true)
    z = z + noise_scale * measurement_scale * rng.standard_normal((m, s))
    return quadratic_sensing_problem(M, z, sigma)


def value(problem: Problem, agent: int, theta: np.ndarray) -> float:
    """f_agent(theta); agents are 1-based."""
    _check_query(problem, agent, theta)
    i = agent - 1
    if problem.kind == "quadratic-sensing":
        resid = problem.z[i] - problem.M[i] @ theta
        return float(resid @ resid + problem.sigma[i] * (theta @ theta))
    diff = problem.x0[i] - theta
    return float(diff @ diff)


def global_value(problem: Problem, theta: np.ndarray) -> float:
    """F(theta) = (1/m) sum_i f_i(theta)."""
    return sum(value(problem, i, theta) for i in range(1, problem.m + 1)) / problem.m


def gradient(problem: Problem, agent: int, theta: np.ndarray) -> np.ndarray:
    """Exact analytic gradient of f_agent at theta; agents are 1-based."""
    _check_query(problem, agent, theta)
    i = agent - 1
    theta = np.asarray(theta, dtype=float)
    if problem.kind == "quadratic-sensing":
        return 2.0 * problem.M[i].T @ (problem.M[i] @ theta - problem.z[i]) + 2.0 * problem.sigma[i] * theta
    return 2.0 * (theta - problem.x0[i])


def gradients(problem: Problem, x: np.ndarray) -> np.ndarray:
    """Stacked per-agent gradients; row i is grad f_{i+1} at x[i]."""
    x = np.asarray(x, dtype=float)
    if problem.kind == "quadratic-sensing":
        resid = np.einsum("msd,md->ms", problem.M, x) - problem.z
        return 2.0 * np.einsum("msd,ms->md", problem.M, resid) + 2.0 * problem.sigma[:, None] * x
    return 2.0 * (x - problem.x0)


def global_gradient(problem: Problem, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return gradients(problem, np.tile(theta, (problem.m, 1))).mean(axis=0)


def global_values(problem: Problem, points: np.ndarray) -> np.ndarray:
    """F evaluated at a batch of query points; points has shape (n, d)."""
    points = np.asarray(points, dtype=float)
    if problem.kind == "quadratic-sensing":
        resid = np.einsum("msd,nd->nms", problem.M, points) - problem.z[None]
        reg = (problem.sigma[None, :] * (points ** 2).sum(axis=1)[:, None]).sum(axis=1)
        return ((resid ** 2).sum(axis=(1, 2)) + reg) / problem.m
    diff = points[:, None, :] - problem.x0[None]
    return (diff ** 2).sum(axis=(1, 2)) / problem.m


def global_gradients(problem: Problem, points: np.ndarray) -> np.ndarray:
    """grad F at a batch of query points; returns (n, d)."""
    points = np.asarray(points, dtype=float)
    if problem.kind == "quadratic-sensing":
        resid = np.einsum("msd,nd->nms", problem.M, points) - problem.z[None]
        out = 2.0 * np.einsum("msd,nms->nd", problem.M, resid)
        out = out + 2.0 * problem.sigma.sum() * points
        return out / problem.m
    return 2.0 * (points - problem.x0.mean(axis=0)[None])


def lipschitz_bound(problem: Problem) -> float:
    """Tight analytic bound on every agent's gradient Lipschitz constant."""
    if problem.kind == "rendezvous":
        return 2.0
    per_agent = [2.0 * (np.linalg.norm(problem.M[i].T @ problem.M[i], 2) + problem.sigma[i])
                 for i in range(problem.m)]
    return float(max(per_agent))


def optimum(problem: Problem) -> Optimum:
    """Minimizer of F by direct solve (sensing) or averaging (rendezvous)."""
    if problem.kind == "rendezvous":
        theta = problem.x0.mean(axis=0)
    else:
        normal = np.einsum("msd,mse->de", problem.M, problem.M)
        normal = normal + problem.sigma.sum() * np.eye(problem.d)
        cond = np.linalg.cond(normal)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError(
                f"normal matrix is rank deficient (condition estimate {cond:.3e}); "
                "the instance does not determine a unique optimum"
            )
        rhs = np.einsum("msd,ms->d", problem.M, problem.z)
        theta = np.linalg.solve(normal, rhs)
    resid = gradients(problem, np.tile(theta, (problem.m, 1)))
    return Optimum(theta_star=theta, f_star=global_value(problem, theta), residual_gradients=resid)


def scale_problem(problem: Problem, factor: float) -> Problem:
    """Rescale a sensing instance's measurements by ``factor`` (objective scales by factor^2)."""
    if problem.kind != "quadratic-sensing":
        raise ValueError("only sensing instances support measurement scaling")
    return quadratic_sensing_problem(factor * problem.M, factor * problem.z,
                                     factor * factor * problem.sigma)


def with_regularization(problem: Problem, sigma) -> Problem:
    if problem.kind != "quadratic-sensing":
        raise ValueError("only sensing instances carry a regularization weight")
    return quadratic_sensing_problem(problem.M, problem.z, sigma)


def to_json(problem: Problem) -> str:
    doc = {"kind": problem.kind, "m": problem.m, "d": problem.d}
    if problem.kind == "quadratic-sensing":
        doc["s"] = problem.s
        doc["M"] = problem.M.tolist()
        doc["z"] = problem.z.tolist()
        doc["sigma"] = problem.sigma.tolist()
    else:
        doc["x0"] = problem.x0.tolist()
    return json.dumps(doc)


def from_json(text: str) -> Problem:
    doc = json.loads(text)
    if doc["kind"] == "quadratic-sensing":
        return quadratic_sensing_problem(doc["M"], doc["z"], doc["sigma"])
    if doc["kind"] == "rendezvous":
        return rendezvous_problem(doc["x0"])
    raise ValueError(f"unknown problem kind {doc['kind']!r}")


def _check_query(problem: Problem, agent: int, theta) -> None:
    if not 1 <= agent <= problem.m:
        raise ValueError(f"agent {agent} out of range 1..{problem.m}")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.d,):
        raise ValueError(f"query point shape {theta.shape} does not match d={problem.d}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("query point has non-finite entries")
