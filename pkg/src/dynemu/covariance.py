"""Per-replica kernels over a time grid, mean recursion and covariance blocks.

Covariance matrices are laid out time-major: the flat index of replica ``a``
(0-based) at the ``t``-th conditioning time (0-based, time index 0 excluded)
and output component ``c`` is ``(t * n + a) * m' + c``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, MismatchedGrids, NonDiagonalizable


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        if t.size < 2:
            raise ConfigError("a time grid needs at least two points")
        if not np.all(np.diff(t) > 0):
            raise ConfigError("grid times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def regular(cls, t0, dt, N):
        return cls(t0 + dt * np.arange(N + 1))

    @property
    def N(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def key(self) -> str:
        return hashlib.sha256(self.times.astype("<f8").tobytes()).hexdigest()[:16]


def conditioning_indices(N: int, stride: int = 1) -> np.ndarray:
    """Time indices (1..N) whose observations enter the conditioning matrix."""
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    return np.arange(stride, N + 1, stride)


@dataclass
class ReplicaKernels:
    """Interval kernels of one replica.

    ``M``, ``Minv``, ``lam`` hold the per-interval eigendecompositions
    (length N); ``h`` and ``k`` the propagators and drift integrals; ``H`` the
    observation matrix at each of the N+1 time points.
    """

    A: np.ndarray
    b: np.ndarray
    M: np.ndarray
    Minv: np.ndarray
    lam: np.ndarray
    cond: np.ndarray
    h: np.ndarray
    k: np.ndarray
    H: np.ndarray
    dt: np.ndarray

    @property
    def N(self):
        return self.h.shape[0]

    def ed(self, l) -> kernels.EigenDecomp:
        return kernels.EigenDecomp(self.M[l], self.Minv[l], self.lam[l], float(self.cond[l]))

    def h_adjoint(self, l):
        # piecewise-constant input: the adjoint propagator is the plain transpose
        return self.h[l].T


@dataclass
class MeanTrajectory:
    z_tilde: np.ndarray
    z: np.ndarray


@dataclass
class CovarianceBlocks:
    """Mirrored conditioning covariance plus its index layout."""

    matrix: np.ndarray
    n: int
    obs_dim: int
    cond_idx: np.ndarray

    @property
    def dim(self):
        return self.matrix.shape[0]

    def block(self, i, a, j, b):
        """Block for time indices ``i, j`` (grid indices) and replicas ``a, b`` (0-based)."""
        ti = int(np.searchsorted(self.cond_idx, i))
        tj = int(np.searchsorted(self.cond_idx, j))
        if self.cond_idx[ti] != i or self.cond_idx[tj] != j:
            raise KeyError("time index not among the conditioning times")
        p = self.obs_dim
        r = (ti * self.n + a) * p
        c = (tj * self.n + b) * p
        return self.matrix[r:r + p, c:c + p]


def kernels_from_linearization(A, b, H, dt, cond_threshold=kernels.COND_THRESHOLD, replica=None):
    """Build :class:`ReplicaKernels` from stacked (A, b) and observation matrices."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        M, Minv, lam, cond = kernels.eigendecompose_batch(A, cond_threshold)
    except NonDiagonalizable as exc:
        raise NonDiagonalizable(str(exc).split(" (")[0], interval=exc.interval, replica=replica) from exc
    h = kernels.propagator_batch(M, Minv, lam, dt)
    k = kernels.drift_batch(M, Minv, lam, b, dt)
    return ReplicaKernels(A, b, M, Minv, lam, cond, h, k, np.asarray(H, dtype=float), np.asarray(dt, dtype=float))


def assemble_replica_kernels(model, x, grid: TimeGrid, cond_threshold=kernels.COND_THRESHOLD, replica=None):
    if x.grid_ref != grid.key:
        raise MismatchedGrids("input is not defined on this grid")
    if x.n_intervals != grid.N:
        raise ConfigError(f"input has {x.n_intervals} forcing rows but the grid has {grid.N} intervals")
    A, b = model.linearize_batch(x.params, x.forcing)
    H = np.broadcast_to(np.asarray(model.observation(x.params), dtype=float),
                        (grid.N + 1, model.obs_dim, model.state_dim))
    return kernels_from_linearization(A, b, H, grid.dt, cond_threshold, replica)


def mean_recursion(rk: ReplicaKernels, xi0) -> MeanTrajectory:
    z = np.empty((rk.N + 1, rk.h.shape[1]))
    z[0] = xi0
    for i in range(rk.N):
        z[i + 1] = rk.h[i] @ z[i] + rk.k[i]
    return MeanTrajectory(z, np.einsum("ipm,im->ip", rk.H, z))


class KernelStack:
    """Kernels of several replicas stacked along a leading replica axis."""

    def __init__(self, kerns):
        kerns = list(kerns)
        self.n = len(kerns)
        self.M = np.stack([k.M for k in kerns])
        self.Minv = np.stack([k.Minv for k in kerns])
        self.lam = np.stack([k.lam for k in kerns])
        self.h = np.stack([k.h for k in kerns])
        self.H = np.stack([k.H for k in kerns])
        self.dt = kerns[0].dt


def state_covariances(left: KernelStack, right: KernelStack, CCt, W2):
    """Equal-time state covariances ``P_i^{ab}`` for i = 0..N.

    Shape (N+1, nL, nR, m, m); ``P_0 = 0`` and
    ``P_{i+1} = h^a_i P_i (h^b_i)^T + g^{ab}_i``.
    """
    nL, N, m = left.lam.shape
    nR = right.n
    P = np.zeros((N + 1, nL, nR, m, m))
    for i in range(N):
        g = kernels.noise_batch(
            left.M[:, None, i], left.Minv[:, None, i], left.lam[:, None, i],
            right.M[None, :, i], right.Minv[None, :, i], right.lam[None, :, i],
            CCt, left.dt[i], W2,
        )
        hL = left.h[:, None, i]
        hRT = np.swapaxes(right.h[None, :, i], -1, -2)
        P[i + 1] = hL @ P[i] @ hRT + g
    return P


def cross_blocks(left: KernelStack, right: KernelStack, CCt, W2, idx_left, idx_right, lower_only=False):
    """Projected two-time covariances between two replica stacks.

    Returns an array of shape (len(idx_left), nL, m', len(idx_right), nR, m')
    holding ``H^a_i S^{ab}_{ij} (H^b_j)^T``. Blocks with ``i >= j`` come from
    ``S_{i+1,j} = h^a_i S_{ij}``; blocks with ``i < j`` from
    ``S_{i,j+1} = S_{ij} (h^b_j)^T``. With ``lower_only`` the latter are left zero.
    """
    P = state_covariances(left, right, CCt, W2)
    nL, nR = left.n, right.n
    p = left.H.shape[2]
    N = left.h.shape[1]
    pos_l = {int(i): t for t, i in enumerate(idx_left)}
    pos_r = {int(j): t for t, j in enumerate(idx_right)}
    out = np.zeros((len(idx_left), nL, p, len(idx_right), nR, p))
    last_l = int(max(idx_left)) if len(idx_left) else -1
    HRT = np.swapaxes(right.H, -1, -2)  # (nR, N+1, m, p)
    for j, tj in pos_r.items():
        U = P[j] @ HRT[None, :, j]  # (nL, nR, m, p)
        for i in range(j, last_l + 1):
            ti = pos_l.get(i)
            if ti is not None:
                out[ti, :, :, tj] = np.transpose(left.H[:, None, i] @ U, (0, 2, 1, 3))
            if i < N:
                U = left.h[:, None, i] @ U
    if lower_only:
        return out
    last_r = int(max(idx_right)) if len(idx_right) else -1
    for i, ti in pos_l.items():
        V = left.H[:, None, i] @ P[i]  # (nL, nR, p, m)
        for j in range(i, last_r):
            V = V @ np.swapaxes(right.h[None, :, j], -1, -2)
            tj = pos_r.get(j + 1)
            if tj is not None:
                out[ti, :, :, tj] = np.transpose(V @ HRT[None, :, j + 1], (0, 2, 1, 3))
    return out


def mirror_lower(S):
    """Symmetric matrix from the lower triangle of ``S`` (exactly symmetric)."""
    L = np.tril(S)
    return L + np.tril(S, -1).T


def sigma_prime(design_kernels, CCt, K, grid: TimeGrid, stride=1) -> CovarianceBlocks:
    """Conditioning covariance of the design replicas at the conditioning times.

    ``K`` is the effective kernel: squared coupling weights, shape (n, n).
    """
    idx = conditioning_indices(grid.N, stride)
    if not design_kernels:
        return CovarianceBlocks(np.zeros((0, 0)), 0, 0, idx)
    stack = KernelStack(design_kernels)
    blocks = cross_blocks(stack, stack, np.asarray(CCt, dtype=float), np.asarray(K, dtype=float),
                          idx, idx, lower_only=True)
    D = blocks.shape[0] * blocks.shape[1] * blocks.shape[2]
    S = mirror_lower(blocks.reshape(D, D))
    return CovarianceBlocks(S, stack.n, stack.H.shape[2], idx)
