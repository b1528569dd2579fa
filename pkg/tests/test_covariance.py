import numpy as np
import pytest
from scipy import integrate, linalg

from dynemu import TimeGrid, kernels
from dynemu.covariance import (
    KernelStack,
    assemble_replica_kernels,
    conditioning_indices,
    cross_blocks,
    kernels_from_linearization,
    mean_recursion,
    sigma_prime,
)
from dynemu.errors import ConfigError, NonDiagonalizable
from dynemu.simulator import AffineModel, integrate_ode
from dynemu.coupling import InputTrajectory

from _util import random_spd, random_stable, rel_err


def const_kernels(A, b, H, grid):
    N = grid.N
    return kernels_from_linearization(np.broadcast_to(A, (N,) + A.shape), np.broadcast_to(b, (N, A.shape[0])),
                                      np.broadcast_to(H, (N + 1,) + H.shape), grid.dt)


def test_time_grid_validation():
    with pytest.raises(ConfigError):
        TimeGrid([0.0])
    with pytest.raises(ConfigError):
        TimeGrid([0.0, 1.0, 1.0])
    g = TimeGrid.regular(0.0, 0.5, 4)
    assert g.N == 4 and np.allclose(g.dt, 0.5)
    assert g.key == TimeGrid(g.times.copy()).key != TimeGrid.regular(0.0, 0.5, 5).key
    assert list(conditioning_indices(7, 3)) == [3, 6]


def test_scalar_kernels_and_mean():
    grid = TimeGrid.regular(0.0, 1.0, 3)
    rk = const_kernels(np.array([[-1.0]]), np.array([2.0]), np.eye(1), grid)
    assert np.allclose(rk.h, np.exp(-1.0))
    assert np.allclose(rk.k, 2.0 * (1 - np.exp(-1.0)))
    assert np.all(rk.h == rk.h[0])
    z = mean_recursion(rk, [0.5]).z_tilde[:, 0]
    assert np.allclose(z, 2.0 + (0.5 - 2.0) * np.exp(-grid.times), rtol=1e-14)


def test_mean_pure_drift_and_zero():
    grid = TimeGrid.regular(1.0, 0.3, 5)
    rk = const_kernels(np.zeros((2, 2)), np.array([1.0, -2.0]), np.eye(2), grid)
    z = mean_recursion(rk, [3.0, 4.0]).z_tilde
    assert np.allclose(z, [3.0, 4.0] + np.outer(grid.times - 1.0, [1.0, -2.0]), rtol=1e-14)
    rk0 = const_kernels(random_stable(np.random.default_rng(0), 2), np.zeros(2), np.eye(2), grid)
    assert np.all(mean_recursion(rk0, np.zeros(2)).z_tilde == 0.0)


def test_mean_matches_rk4():
    rng = np.random.default_rng(4)
    model = AffineModel(random_stable(rng, 3), b0=rng.standard_normal(3), Bu=rng.standard_normal((3, 1)),
                        xi0=rng.standard_normal(3))
    grid = TimeGrid(np.r_[0.0, np.cumsum(rng.uniform(0.2, 1.0, 8))])
    x = InputTrajectory(np.zeros(0), rng.standard_normal((8, 1)), grid.key)
    rk = assemble_replica_kernels(model, x, grid)
    z = mean_recursion(rk, model.xi0).z_tilde
    assert rel_err(z, integrate_ode(model, x, grid, substeps=200)) < 1e-8


def test_defective_interval_reported():
    model = AffineModel([[-1.0, 1.0], [0.0, -1.0]])
    grid = TimeGrid.regular(0, 1, 2)
    x = InputTrajectory(np.zeros(0), np.zeros((2, 0)), grid.key)
    with pytest.raises(NonDiagonalizable) as err:
        assemble_replica_kernels(model, x, grid, replica=3)
    assert err.value.interval == 0 and err.value.replica == 3


def test_sigma_prime_trivial():
    grid = TimeGrid.regular(0.0, 1.0, 1)
    rk = const_kernels(np.zeros((1, 1)), np.zeros(1), np.eye(1), grid)
    cov = sigma_prime([rk], np.eye(1), np.ones((1, 1)), grid)
    assert np.allclose(cov.matrix, [[1.0]], rtol=1e-15)


def test_sigma_prime_identical_replicas():
    rng = np.random.default_rng(2)
    grid = TimeGrid.regular(0.0, 0.7, 4)
    rk = const_kernels(random_stable(rng, 2), rng.standard_normal(2), rng.standard_normal((1, 2)), grid)
    cov = sigma_prime([rk, rk], random_spd(rng, 2), np.ones((2, 2)), grid)
    for i in range(1, 5):
        for j in range(1, 5):
            b11 = cov.block(i, 0, j, 0)
            assert np.allclose(cov.block(i, 0, j, 1), b11, rtol=1e-13, atol=0)
            assert np.allclose(cov.block(i, 1, j, 1), b11, rtol=1e-13, atol=0)


def test_sigma_prime_exactly_symmetric_and_psd():
    rng = np.random.default_rng(6)
    grid = TimeGrid(np.r_[0.0, np.cumsum(rng.uniform(0.2, 1.0, 5))])
    rks = [const_kernels(random_stable(rng, 3), rng.standard_normal(3), rng.standard_normal((2, 3)), grid)
           for _ in range(3)]
    P = rng.uniform(0, 1, (3, 2))
    K = np.exp(-np.sum((P[:, None] - P[None]) ** 2, -1))
    S = sigma_prime(rks, random_spd(rng, 3), K, grid).matrix
    assert np.array_equal(S, S.T)
    assert np.linalg.eigvalsh(S).min() >= -1e-10 * np.max(np.diag(S))


def test_upper_blocks_match_lower_by_transposition():
    # the two recursion directions must agree: S^{ab}_{ij} = (S^{ba}_{ji})^T
    rng = np.random.default_rng(7)
    grid = TimeGrid.regular(0.0, 0.5, 4)
    st = KernelStack([const_kernels(random_stable(rng, 2), np.zeros(2), np.eye(2), grid) for _ in range(2)])
    K = np.array([[1.0, 0.6], [0.6, 1.0]])
    idx = np.arange(1, 5)
    B = cross_blocks(st, st, random_spd(rng, 2), K, idx, idx)
    D = B.reshape(16, 16)
    assert np.allclose(D, D.T, rtol=0, atol=1e-13 * np.abs(D).max())


def test_state_covariance_matches_quadrature():
    # time-varying inputs: direct quadrature of the stochastic-convolution covariance
    rng = np.random.default_rng(9)
    m, N = 2, 3
    grid = TimeGrid(np.r_[0.0, np.cumsum(rng.uniform(0.3, 0.8, N))])
    As = [np.stack([random_stable(rng, m) for _ in range(N)]) for _ in range(2)]
    rks = [kernels_from_linearization(A, np.zeros((N, m)), np.broadcast_to(np.eye(m), (N + 1, m, m)), grid.dt)
           for A in As]
    CCt = random_spd(rng, m)
    K = np.array([[1.0, 0.5], [0.5, 1.0]])
    B = cross_blocks(KernelStack(rks), KernelStack(rks), CCt, K, np.arange(1, N + 1), np.arange(1, N + 1))

    def Phi(A, t, s):  # transition from s to t, s <= t
        out = np.eye(m)
        for l in range(N):
            lo, hi = max(grid.times[l], s), min(grid.times[l + 1], t)
            if hi > lo:
                out = linalg.expm((hi - lo) * A[l]) @ out
        return out

    for (i, j, a, b) in [(3, 3, 0, 1), (3, 1, 1, 0), (2, 3, 0, 0), (1, 1, 1, 1)]:
        ti, tj = grid.times[i], grid.times[j]
        f = lambda s: Phi(As[a], ti, s) @ CCt @ Phi(As[b], tj, s).T
        pts = [t for t in grid.times if t < min(ti, tj)] + [min(ti, tj)]
        ref = sum(integrate.quad_vec(f, lo, hi, epsrel=1e-12, epsabs=0)[0] for lo, hi in zip(pts[:-1], pts[1:]))
        assert rel_err(B[i - 1, a, :, j - 1, b], K[a, b] * ref) < 1e-8


def test_recursion_matches_closed_form_small():
    rng = np.random.default_rng(10)
    grid = TimeGrid.regular(0.5, 0.4, 5)
    A = [random_stable(rng, 2) for _ in range(2)]
    rks = [const_kernels(a, np.zeros(2), np.eye(2), grid) for a in A]
    CCt = random_spd(rng, 2)
    K = np.array([[1.0, 0.3], [0.3, 1.0]])
    idx = np.arange(1, 6)
    B = cross_blocks(KernelStack(rks), KernelStack(rks), CCt, K, idx, idx)
    eds = [kernels.eigendecompose(a) for a in A]
    for i in idx:
        for j in idx:
            for a in range(2):
                for b in range(2):
                    ref = kernels.sigma_const(eds[a], eds[b], CCt, grid.times[i], grid.times[j], grid.times[0],
                                              np.sqrt(K[a, b]))
                    assert np.allclose(B[i - 1, a, :, j - 1, b], ref, rtol=0, atol=1e-12)


def test_empty_design():
    grid = TimeGrid.regular(0.0, 1.0, 3)
    cov = sigma_prime([], np.eye(1), np.zeros((0, 0)), grid)
    assert cov.dim == 0


def test_logspm_sigma_prime_psd():
    from dynemu import pipeline
    raw = pipeline.logspm.default_config()
    raw["grid"]["N"] = 50
    cfg = pipeline.load_config(raw)
    thetas = pipeline.sample_parameters(cfg.ranges, 10, 3)
    ks = [assemble_replica_kernels(cfg.model, cfg.input(t), cfg.grid) for t in thetas]
    from dynemu.coupling import coupling_matrix
    W = coupling_matrix(cfg.design_set(thetas), None, cfg.metric)
    S = sigma_prime(ks, cfg.CCt, W * W, cfg.grid).matrix
    assert S.shape == (500, 500)
    assert np.linalg.eigvalsh(S).min() >= -1e-8 * np.diag(S).max()
