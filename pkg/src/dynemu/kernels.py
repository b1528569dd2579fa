"""Interval kernels for piecewise-constant linear dynamics.

Over one interval of length ``dt`` with constant drift ``A`` and offset ``b``
the linear SDE ``dxi = (A xi + b) dt + C dW`` has

* propagator ``h = exp(dt A)``,
* drift integral ``k = int_0^dt exp(s A) b ds``,
* noise integral ``g = w**2 int_0^dt exp(s A_a) C C^T exp(s A_b^T) ds``
  (the last one between two replicas ``a`` and ``b`` coupled with weight ``w``).

All three are evaluated through the eigendecomposition ``A = M diag(lam) M^-1``.
Arithmetic is complex internally; the assembled products are real.

The batched helpers (``*_batch``) accept arbitrary leading dimensions and are
what the covariance and emulator modules use in their inner loops; the
single-matrix functions wrap them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonDiagonalizable

SERIES_SWITCH = 1e-4
IMAG_TOL = 1e-9
COND_THRESHOLD = 1e12


@dataclass(frozen=True)
class EigenDecomp:
    """Right eigenvectors ``M`` (columns), their inverse and the eigenvalues."""

    M: np.ndarray
    Minv: np.ndarray
    lam: np.ndarray
    cond_estimate: float

    @property
    def m(self) -> int:
        return self.lam.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.M * self.lam) @ self.Minv


@dataclass(frozen=True)
class KernelTriple:
    h: np.ndarray
    k: np.ndarray
    dt: float


@dataclass(frozen=True)
class NoiseBlock:
    g: np.ndarray
    coupling_weight: float


def eigendecompose_batch(A, cond_threshold=COND_THRESHOLD):
    """Eigendecompose a stack of square matrices.

    Returns ``(M, Minv, lam, cond)`` with eigenvalues sorted by descending real
    part, ties broken by ascending imaginary part.

    Raises
    ------
    NonDiagonalizable
        If the eigen solve fails or any eigenvector matrix has an estimated
        condition number above ``cond_threshold``. ``interval`` on the exception holds the
        flat index of the first offending matrix.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonDiagonalizable("drift matrix has non-finite entries")
    try:
        lam, M = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise NonDiagonalizable(f"eigen solve failed: {exc}") from exc
    lam = lam.astype(complex)
    M = M.astype(complex)
    order = np.lexsort((lam.imag, -lam.real), axis=-1)
    lam = np.take_along_axis(lam, order, axis=-1)
    M = np.take_along_axis(M, order[..., None, :], axis=-1)

    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise NonDiagonalizable("eigenvector matrix is singular") from exc
    # Frobenius-norm estimate: an upper bound on the 2-norm condition number, at most m times larger
    cond = np.linalg.norm(M, axis=(-2, -1)) * np.linalg.norm(Minv, axis=(-2, -1))
    bad = ~np.isfinite(cond) | (cond > cond_threshold)
    if np.any(bad):
        idx = int(np.flatnonzero(bad.ravel())[0])
        c = np.ravel(cond)[idx]
        raise NonDiagonalizable(
            f"eigenvector matrix condition number {c:.3g} exceeds {cond_threshold:.3g}",
            interval=idx if A.ndim > 2 else None,
        )
    return M, Minv, lam, cond


def eigendecompose(A, cond_threshold=COND_THRESHOLD) -> EigenDecomp:
    if cond_threshold <= 1:
        raise ValueError("cond_threshold must exceed 1")
    M, Minv, lam, cond = eigendecompose_batch(np.asarray(A, dtype=float)[None], cond_threshold)
    return EigenDecomp(M[0], Minv[0], lam[0], float(cond[0]))


def phi1(s, dt):
    """``(exp(s*dt) - 1) / s`` with its removable singularity at ``s = 0``.

    Vectorized over ``s`` (and ``dt``, by broadcasting). For ``|s*dt|`` below
    ``SERIES_SWITCH`` a Taylor series is used; its first omitted term is below
    1e-16 relative.
    """
    s = np.asarray(s)
    x = s * dt
    small = np.abs(x) < SERIES_SWITCH
    out_dtype = np.result_type(s, float)
    # safe denominator keeps the unused branch finite
    s_safe = np.where(small, 1.0, s)
    direct = np.expm1(np.where(small, 0.0, x)) / s_safe
    series = dt * (1.0 + x / 2.0 * (1.0 + x / 3.0 * (1.0 + x / 4.0 * (1.0 + x / 5.0))))
    out = np.where(small, series, direct).astype(out_dtype, copy=False)
    if out.ndim == 0:
        return out[()]
    return out


def propagator_batch(M, Minv, lam, dt):
    """``Re(M diag(exp(lam dt)) Minv)`` over leading dimensions."""
    e = np.exp(lam * np.asarray(dt)[..., None])
    return ((M * e[..., None, :]) @ Minv).real


def drift_batch(M, Minv, lam, b, dt):
    """``Re(M diag(phi1(lam, dt)) Minv b)`` over leading dimensions."""
    p = phi1(lam, np.asarray(dt)[..., None])
    v = np.einsum("...ij,...j->...i", Minv, b)
    return np.einsum("...ij,...j->...i", M, p * v).real


def noise_batch(Ma, Minva, lama, Mb, Minvb, lamb, CCt, dt, w2=1.0):
    """``w2 * Re(M_a B M_b^T)`` with ``B = phi1(lam_a[p] + lam_b[q]) * (Minv_a CCt Minv_b^T)``.

    Leading dimensions of the ``a`` and ``b`` operands broadcast against each
    other; ``dt`` and ``w2`` broadcast against the result's leading shape.
    Note the plain transposes (not conjugate transposes) on the ``b`` side.
    """
    X = Minva @ CCt @ np.swapaxes(Minvb, -1, -2)
    dt = np.asarray(dt)[..., None, None]
    B = phi1(lama[..., :, None] + lamb[..., None, :], dt) * X
    g = (Ma @ B @ np.swapaxes(Mb, -1, -2)).real
    return np.asarray(w2)[..., None, None] * g


def propagator_h(ed: EigenDecomp, dt: float) -> np.ndarray:
    return propagator_batch(ed.M, ed.Minv, ed.lam, dt)


def drift_k(ed: EigenDecomp, b, dt: float) -> np.ndarray:
    return drift_batch(ed.M, ed.Minv, ed.lam, np.asarray(b, dtype=float), dt)


def kernel_triple(ed: EigenDecomp, b, dt: float) -> KernelTriple:
    return KernelTriple(propagator_h(ed, dt), drift_k(ed, b, dt), float(dt))


def noise_block_g(ed_a: EigenDecomp, ed_b: EigenDecomp, CCt, dt: float, w: float = 1.0) -> NoiseBlock:
    """Integrated cross-replica noise covariance over one interval."""
    CCt = np.asarray(CCt, dtype=float)
    g = noise_batch(ed_a.M, ed_a.Minv, ed_a.lam, ed_b.M, ed_b.Minv, ed_b.lam, CCt, dt, w * w)
    return NoiseBlock(g, float(w))


def sigma_const(ed_a: EigenDecomp, ed_b: EigenDecomp, CCt, t_i, t_j, t0, w=1.0) -> np.ndarray:
    """Closed-form two-time state covariance for time-independent inputs.

    Covariance between replica ``a`` at ``t_i`` and replica ``b`` at ``t_j``,
    both started deterministically at ``t0``. For ``t_i < t_j`` the symmetry
    ``S_ab(t_i, t_j) = S_ba(t_j, t_i)^T`` is applied.
    """
    if t_i < t_j:
        return sigma_const(ed_b, ed_a, CCt, t_j, t_i, t0, w).T
    if t_j < t0:
        raise ValueError("t_j must not precede t0")
    CCt = np.asarray(CCt, dtype=float)
    X = ed_a.Minv @ CCt @ ed_b.Minv.T
    lag = np.exp((t_i - t_j) * ed_a.lam)[:, None]
    # exp((ti-t0)la + (tj-t0)lb) - exp((ti-tj)la) == exp((ti-tj)la) * (exp((tj-t0)(la+lb)) - 1)
    B = X * lag * phi1(ed_a.lam[:, None] + ed_b.lam[None, :], t_j - t0)
    return w * w * (ed_a.M @ B @ ed_b.M.T).real


def imag_residue(Z) -> float:
    """Largest imaginary part relative to the largest modulus (0 for zero input)."""
    Z = np.asarray(Z)
    scale = np.max(np.abs(Z)) if Z.size else 0.0
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(Z.imag)) / scale)
