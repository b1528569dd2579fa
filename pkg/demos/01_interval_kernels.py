"""Interval kernels from one eigendecomposition, checked against scipy.

Over an interval of length dt with constant drift A the propagator, the drift
integral and the noise integral all come from A = M diag(lam) M^-1. This
script builds a drift with a complex eigenpair and compares each kernel with
an independent route (matrix exponential plus adaptive quadrature).
"""
import numpy as np
from scipy import integrate, linalg

from dynemu import kernels

A = np.array([[-0.3, 1.2, 0.0],
              [-1.2, -0.3, 0.0],
              [0.4, 0.1, -0.8]])
Ab = np.array([[-0.5, 0.0, 0.0],
               [0.2, -1.0, 0.0],
               [0.0, 0.3, -2.0]])
b = np.array([1.0, 0.0, 0.5])
CCt = np.diag([0.2, 0.1, 0.05])
dt, w = 0.7, 0.8

ed, ed_b = kernels.eigendecompose(A), kernels.eigendecompose(Ab)
print("eigenvalues:", np.round(ed.lam, 4))
print("eigenvector condition estimate: %.2f" % ed.cond_estimate)

h = kernels.propagator_h(ed, dt)
k = kernels.drift_k(ed, b, dt)
g = kernels.noise_block_g(ed, ed_b, CCt, dt, w).g

h_ref = linalg.expm(dt * A)
k_ref = integrate.quad_vec(lambda s: linalg.expm(s * A) @ b, 0, dt, epsrel=1e-12)[0]
g_ref = w**2 * integrate.quad_vec(lambda s: linalg.expm(s * A) @ CCt @ linalg.expm(s * Ab).T,
                                  0, dt, epsrel=1e-12)[0]

for name, val, ref in (("h", h, h_ref), ("k", k, k_ref), ("g", g, g_ref)):
    print(f"{name}: max abs deviation from scipy route {np.abs(val - ref).max():.2e}")

# semigroup check: two half steps equal one full step
print("semigroup residual: %.2e" % np.abs(kernels.propagator_h(ed, dt / 2) @ kernels.propagator_h(ed, dt / 2) - h).max())

# phi1 near its removable singularity switches to a series without a visible seam
s = np.array([0.0, 1e-12, 0.99e-4, 1.01e-4, 1e-2])
print("phi1(s, 1):", kernels.phi1(s, 1.0))
