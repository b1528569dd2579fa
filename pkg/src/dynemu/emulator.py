"""Emulation step: the conditional mean recursion, marginal variances, and a dense oracle.

The mean recursion runs on top of a :class:`~dynemu.conditioner.ConditionedEmulator`::

    y~_0     = xi0
    y~_{i+1} = h_i y~_i + k_i + sum_a g^{*a}_i z'_{i a}
    ybar_i   = H_i y~_i

Everything on the right that depends on the new input is evaluated batched
over all intervals and design replicas, so one emulation costs O(N n) small
matrix products plus N eigendecompositions and a length-N scalar loop.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import kernels
from .coupling import DesignSet, InputTrajectory, MetricSpec, coupling_matrix, pairwise_rho
from .covariance import (
    KernelStack,
    TimeGrid,
    conditioning_indices,
    cross_blocks,
    kernels_from_linearization,
    state_covariances,
)
from .errors import ConfigError, MismatchedGrids, NonDiagonalizable


@dataclass
class EmulationResult:
    """``mean`` has shape (N+1, m'); ``variance``, if computed, (N+1, m', m')."""

    mean: np.ndarray
    online_input: InputTrajectory
    variance: np.ndarray | None = None
    timing: float = 0.0


def _check_input(ce, x: InputTrajectory):
    if x.grid_ref != ce.grid.key:
        raise MismatchedGrids("online input is not defined on the emulator's grid")
    if x.n_intervals != ce.grid.N:
        raise ConfigError(f"online input has {x.n_intervals} forcing rows, grid has {ce.grid.N} intervals")
    if ce.model.shared_forcing and ce.n and not np.array_equal(x.forcing, ce.design[0].forcing):
        raise ConfigError("this model shares forcing across replicas; the online forcing differs from the design's")


def _online_weights(ce, x):
    if ce.n == 0:
        return np.zeros(0)
    return np.exp(-pairwise_rho(x.params, ce._design_params, ce.metric)[0])


def _online_eigen(ce, x):
    A, b = ce.model.linearize_batch(x.params, x.forcing)
    try:
        M, Minv, lam, cond = kernels.eigendecompose_batch(A, ce.config.cond_threshold)
    except NonDiagonalizable as exc:
        raise NonDiagonalizable("online drift matrix is not diagonalizable", interval=exc.interval) from exc
    return A, b, M, Minv, lam, cond


def emulate_mean(ce, x: InputTrajectory) -> EmulationResult:
    """Conditional mean of the online replica's observations at every grid time."""
    _check_input(ce, x)
    t_start = time.perf_counter()
    dt = ce.grid.dt
    A, b, M, Minv, lam, _ = _online_eigen(ce, x)
    h = kernels.propagator_batch(M, Minv, lam, dt)
    f = kernels.drift_batch(M, Minv, lam, b, dt)

    if ce.n:
        w2 = _online_weights(ce, x)
        C = Minv @ ce.CCt  # (N, m, m), shared by all design replicas
        Y = np.einsum("ipr,airq->iapq", C, ce.design_MinvT)
        Phi = kernels.phi1(lam[:, None, :, None] + np.swapaxes(ce.design_lam, 0, 1)[:, :, None, :],
                           dt[:, None, None, None])
        s = np.einsum("iapq,iaq->ip", Y * Phi * w2[None, :, None, None], ce.design_u)
        f = f + np.einsum("ipq,iq->ip", M, s).real

    H = np.asarray(ce.model.observation(x.params), dtype=float)
    y = np.empty((ce.grid.N + 1, h.shape[1]))
    y[0] = ce.xi0
    for i in range(ce.grid.N):
        y[i + 1] = h[i] @ y[i] + f[i]
    mean = y @ H.T
    return EmulationResult(mean, x, None, time.perf_counter() - t_start)


def prior_mean(ce, x: InputTrajectory) -> np.ndarray:
    """Mean of the unconditioned linearized model (the n = 0 emulator)."""
    _check_input(ce, x)
    _, b, M, Minv, lam, _ = _online_eigen(ce, x)
    h = kernels.propagator_batch(M, Minv, lam, ce.grid.dt)
    k = kernels.drift_batch(M, Minv, lam, b, ce.grid.dt)
    y = np.empty((ce.grid.N + 1, h.shape[1]))
    y[0] = ce.xi0
    for i in range(ce.grid.N):
        y[i + 1] = h[i] @ y[i] + k[i]
    return y @ np.asarray(ce.model.observation(x.params), dtype=float).T


def emulate_variance(ce, x: InputTrajectory) -> np.ndarray:
    """Marginal conditional covariance blocks ``Sigma_bar_ii``, shape (N+1, m', m').

    Uses the dense formula ``prior_ii - v^T v`` with ``v = L^{-1} Sigma^{*,.}_i``,
    which costs O(N^2 n) blocks; meant for desk-scale problems.
    """
    _check_input(ce, x)
    N = ce.grid.N
    A, b, *_ = _online_eigen(ce, x)
    H = np.broadcast_to(np.asarray(ce.model.observation(x.params), dtype=float),
                        (N + 1, ce.model.obs_dim, ce.model.state_dim))
    rk = kernels_from_linearization(A, b, H, ce.grid.dt, ce.config.cond_threshold)
    online = KernelStack([rk])
    P = state_covariances(online, online, ce.CCt, np.ones((1, 1)))[:, 0, 0]
    var = H @ P @ np.swapaxes(H, -1, -2)
    if ce.n == 0:
        return var
    p = ce.model.obs_dim
    w2 = _online_weights(ce, x)
    design = KernelStack(ce.design_kernels())
    rows = cross_blocks(online, design, ce.CCt, w2[None, :], np.arange(1, N + 1), ce.cond_idx)
    rows = rows.reshape(N * p, ce.dim)
    V = linalg.solve_triangular(ce.chol, rows.T, lower=True, check_finite=False).reshape(ce.dim, N, p)
    var = var.copy()
    var[1:] -= np.einsum("dip,diq->ipq", V, V)
    return var


def emulate(ce, x: InputTrajectory, variance=False) -> EmulationResult:
    res = emulate_mean(ce, x)
    if variance:
        res.variance = emulate_variance(ce, x)
    return res


def d_value(emulated, simulated) -> float:
    """Root mean (over time points 1..N) of the squared output error."""
    e = emulated.mean if isinstance(emulated, EmulationResult) else np.asarray(emulated, dtype=float)
    s = np.asarray(simulated, dtype=float)
    e = e.reshape(e.shape[0], -1)
    s = s.reshape(s.shape[0], -1)
    if e.shape != s.shape:
        raise ConfigError(f"emulated series {e.shape} and simulated series {s.shape} differ in shape")
    diff = e[1:] - s[1:]
    return float(np.sqrt(np.sum(diff * diff) / diff.shape[0]))


# --- dense oracle --------------------------------------------------------

def _van_loan(A, Q, dt):
    """Discrete transition and integrated noise covariance over one interval."""
    m = A.shape[0]
    Z = np.zeros((2 * m, 2 * m))
    Z[:m, :m] = -A
    Z[:m, m:] = Q
    Z[m:, m:] = A.T
    E = linalg.expm(Z * dt)
    F = E[m:, m:].T
    return F, F @ E[:m, m:]


def _affine_step(A, b, dt):
    m = A.shape[0]
    Z = np.zeros((m + 1, m + 1))
    Z[:m, :m] = A
    Z[:m, m] = b
    E = linalg.expm(Z * dt)
    return E[:m, m]


def dense_oracle(model, design: DesignSet, runs, x_new: InputTrajectory, CCt, metric: MetricSpec,
                 grid: TimeGrid, xi0=None, stride=1, jitter=0.0):
    """Literal Gaussian conditioning on the full joint covariance.

    The replicas are stacked into one linear system of dimension (n+1) m whose
    per-interval transition and noise covariance come from ``scipy.linalg.expm``
    (Van Loan's block construction), independently of the eigen-based kernels.
    Returns ``(mean, cov)`` with ``mean`` of shape (N+1, m') and ``cov`` the
    conditional covariance of the online observations at times 1..N,
    shape (N m', N m').
    """
    xi0 = np.asarray(model.xi0 if xi0 is None else xi0, dtype=float)
    y = np.asarray(runs.y if hasattr(runs, "y") else runs, dtype=float)
    inputs = list(design.inputs) + [x_new]
    R = len(inputs)
    n = R - 1
    m, p, N = model.state_dim, model.obs_dim, grid.N
    Rm = R * m
    lin = [model.linearize_batch(x.params, x.forcing) for x in inputs]
    Hbig = linalg.block_diag(*[np.asarray(model.observation(x.params), dtype=float) for x in inputs])
    W = coupling_matrix(design, x_new, metric)
    Q = np.kron(W * W, np.asarray(CCt, dtype=float))

    mu = np.tile(xi0, R)
    mus = [mu]
    Fs, Ps = [], [np.zeros((Rm, Rm))]
    for i in range(N):
        Abig = linalg.block_diag(*[A[i] for A, _ in lin])
        bbig = np.concatenate([b[i] for _, b in lin])
        F, Qd = _van_loan(Abig, Q, grid.dt[i])
        Fs.append(F)
        Ps.append(F @ Ps[-1] @ F.T + Qd)
        mu = F @ mu + _affine_step(Abig, bbig, grid.dt[i])
        mus.append(mu)

    # joint observation covariance at times 1..N, replica-major within each time
    J = np.zeros((N, R * p, N, R * p))
    for j in range(1, N + 1):
        X = Ps[j]
        for i in range(j, N + 1):
            J[i - 1, :, j - 1] = Hbig @ X @ Hbig.T
            if i < N:
                X = Fs[i] @ X
    J = J.reshape(N * R * p, N * R * p)
    J = np.tril(J) + np.tril(J, -1).T
    zobs = np.stack([Hbig @ v for v in mus])  # (N+1, R p)

    on = np.array([(i - 1) * R * p + n * p + c for i in range(1, N + 1) for c in range(p)], dtype=int)
    cidx = conditioning_indices(N, stride)
    dd = np.array([(i - 1) * R * p + a * p + c for i in cidx for a in range(n) for c in range(p)], dtype=int)

    z_on = zobs[1:, n * p:].reshape(-1)
    S_oo = J[np.ix_(on, on)]
    mean = np.empty((N + 1, p))
    mean[0] = zobs[0, n * p:]
    if n == 0 or dd.size == 0:
        mean[1:] = z_on.reshape(N, p)
        return mean, S_oo
    S_od = J[np.ix_(on, dd)]
    S_dd = J[np.ix_(dd, dd)] + jitter * np.eye(dd.size)
    resid = (np.transpose(y[:, cidx], (1, 0, 2)) - zobs[cidx, : n * p].reshape(len(cidx), n, p)).reshape(-1)
    mean[1:] = (z_on + S_od @ np.linalg.solve(S_dd, resid)).reshape(N, p)
    cov = S_oo - S_od @ np.linalg.solve(S_dd, S_od.T)
    return mean, cov
