import numpy as np

from sdinclusion import coefficients as co
from sdinclusion.convexset import Ball, Hull
from sdinclusion.semigroup import SemigroupOperator
from sdinclusion.tonelli import InclusionScenario, InitialCondition


def scenario(A, F, G, x0, T, dH=1, rule=None, cov=None, eta=1.0, L=None, p=4.0,
             norm_cap=1e12):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    dE = A.shape[0]
    return InclusionScenario(
        dE, dH, SemigroupOperator.from_matrix(A, T), F, G,
        co.CoefficientHypotheses(eta, L or co.linear(1.0), p),
        InitialCondition(x0, cov), T, rule or co.Steiner(), norm_cap)


def constant(v, dE):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    return co.Singleton(v, np.zeros((v.size, dE)))


def ou(lam, sigma, x0, T):
    return scenario([[-lam]], constant([0.0], 1), constant([sigma], 1), [x0], T)


def tube_benchmark(T=1.0, rule=None):
    """Set-valued 2-d benchmark: triangle tube drift, ball-valued diffusion."""
    F = co.Tube([0.5, 0.0], [[-0.5, 0.3], [-0.3, -0.5]],
                Hull(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])), co.Affine(0.5, 0.25))
    G = co.Tube(np.array([0.3, 0.0, 0.0, 0.3]),
                np.array([[0.1, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.1]]),
                Ball(np.zeros(4), 0.1))
    return scenario([[-1.0, 1.0], [0.0, -1.0]], F, G, [1.0, 0.0], T, dH=2, rule=rule,
                    cov=0.04 * np.eye(2), eta=1.25, L=co.linear(0.125))


def lipschitz_single(T=1.0):
    """Single-valued Lipschitz 2-d scenario with multiplicative noise."""
    F = co.Singleton([0.2, -0.1], [[-0.5, 0.4], [-0.4, -0.5]])
    G = co.Singleton([0.3, 0.0, 0.1, 0.3], [[0.1, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.1]])
    return scenario([[-0.5, 0.0], [0.0, -1.0]], F, G, [1.0, -0.5], T, dH=2)


def ensemble(traj, dt, n=None):
    """Wrap raw trajectories (paths, nodes, dE) as a PathEnsemble."""
    from sdinclusion.tonelli import PathEnsemble

    traj = np.asarray(traj, dtype=float)
    P, nodes, _ = traj.shape
    return PathEnsemble("test", n, dt, dt * (nodes - 1), 0, np.arange(P), traj,
                        np.zeros((P, nodes - 1, 1)))


def brownian(paths, T, dt, seed, dim=1):
    from sdinclusion.driver import generate_batch

    dW = generate_batch(seed, range(paths), dim, T, dt)
    W = np.concatenate([np.zeros((paths, 1, dim)), np.cumsum(dW, axis=1)], axis=1)
    return ensemble(W, dt)
