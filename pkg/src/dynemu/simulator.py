"""Simulation models, the RK4 design-run integrator and an SDE Monte-Carlo sampler.

A :class:`SimulationModel` bundles the nonlinear right-hand side with its
interval-wise linearization and the observation map. :class:`AffineModel` is a
model whose dynamics are already linear, so the linearization is exact; it is
what the randomized tests are built on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, NonFinite, NotPositiveDefinite

MODEL_REGISTRY: dict = {}


def register_model(cls):
    MODEL_REGISTRY[cls.name] = cls
    return cls


def model_from_config(d: dict) -> "SimulationModel":
    try:
        cls = MODEL_REGISTRY[d["model"]]
    except KeyError:
        raise ConfigError(f"unknown model {d.get('model')!r}; known: {sorted(MODEL_REGISTRY)}") from None
    return cls.from_config(d.get("model_config", {}))


class SimulationModel:
    """Base class for ODE models ``d xi/dt = f(xi, x)``.

    Subclasses set ``name``, ``state_dim``, ``obs_dim``, ``param_dim``,
    ``forcing_dim``, ``shared_forcing`` and ``xi0``, and implement ``rhs``,
    ``linearize``, ``observation`` and the config round-trip.
    """

    name = "base"
    state_dim: int
    obs_dim: int
    param_dim: int
    forcing_dim: int
    shared_forcing = False
    xi0: np.ndarray

    def rhs(self, state, params, forcing):
        raise NotImplementedError

    def linearize(self, params, forcing):
        """Return ``(A, b)`` of the affine approximation at one forcing value."""
        raise NotImplementedError

    def linearize_batch(self, params, forcing):
        """Linearize at every forcing row; returns ``A`` of shape (N, m, m) and ``b`` of shape (N, m)."""
        pairs = [self.linearize(params, f) for f in np.asarray(forcing)]
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def observation(self, params):
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_config(cls, d):
        raise NotImplementedError

    def config_dict(self) -> dict:
        return {"model": self.name, "model_config": self.to_config()}


@register_model
class AffineModel(SimulationModel):
    """Linear model ``A(theta) xi + b0 + Bu u`` with ``A(theta) = A0 + sum_k theta_k A_k``."""

    name = "affine"

    def __init__(self, A0, A_params=None, b0=None, Bu=None, H=None, xi0=None, shared_forcing=True):
        self.A0 = np.atleast_2d(np.asarray(A0, dtype=float))
        m = self.A0.shape[0]
        self.A_params = np.zeros((0, m, m)) if A_params is None else np.asarray(A_params, dtype=float).reshape(-1, m, m)
        self.b0 = np.zeros(m) if b0 is None else np.atleast_1d(np.asarray(b0, dtype=float))
        self.Bu = np.zeros((m, 0)) if Bu is None else np.asarray(Bu, dtype=float).reshape(m, -1)
        self.H = np.eye(m) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
        self.xi0 = np.zeros(m) if xi0 is None else np.atleast_1d(np.asarray(xi0, dtype=float))
        self.shared_forcing = bool(shared_forcing)
        self.state_dim = m
        self.obs_dim = self.H.shape[0]
        self.param_dim = self.A_params.shape[0]
        self.forcing_dim = self.Bu.shape[1]

    def drift_matrix(self, params):
        params = np.asarray(params, dtype=float)
        return self.A0 + np.tensordot(params, self.A_params, axes=(0, 0))

    def rhs(self, state, params, forcing):
        A, b = self.linearize(params, forcing)
        return A @ state + b

    def linearize(self, params, forcing):
        return self.drift_matrix(params), self.b0 + self.Bu @ np.asarray(forcing, dtype=float)

    def linearize_batch(self, params, forcing):
        forcing = np.asarray(forcing, dtype=float)
        if forcing.ndim != 2:
            forcing = forcing.reshape(-1, max(self.forcing_dim, 1))[:, : self.forcing_dim]
        A = np.broadcast_to(self.drift_matrix(params), (forcing.shape[0], self.state_dim, self.state_dim)).copy()
        return A, self.b0 + forcing @ self.Bu.T

    def observation(self, params):
        return self.H

    def to_config(self):
        return {
            "A0": self.A0.tolist(),
            "A_params": self.A_params.tolist(),
            "b0": self.b0.tolist(),
            "Bu": self.Bu.tolist(),
            "H": self.H.tolist(),
            "xi0": self.xi0.tolist(),
            "shared_forcing": self.shared_forcing,
        }

    @classmethod
    def from_config(cls, d):
        return cls(d["A0"], d.get("A_params"), d.get("b0"), d.get("Bu"), d.get("H"), d.get("xi0"),
                   d.get("shared_forcing", True))


def integrate_ode(model, x, grid, xi0=None, substeps=10):
    """Integrate the nonlinear model with classical RK4.

    ``substeps`` equal steps per grid interval; the forcing is held at the
    interval's value throughout. Returns states of shape (N+1, m).
    """
    if substeps < 1:
        raise ConfigError("substeps must be >= 1")
    times = grid.times
    xi = np.array(model.xi0 if xi0 is None else xi0, dtype=float)
    out = np.empty((len(times), xi.shape[0]))
    out[0] = xi
    params = x.params
    for i in range(len(times) - 1):
        u = x.forcing[i]
        h = (times[i + 1] - times[i]) / substeps
        for _ in range(substeps):
            k1 = model.rhs(xi, params, u)
            k2 = model.rhs(xi + 0.5 * h * k1, params, u)
            k3 = model.rhs(xi + 0.5 * h * k2, params, u)
            k4 = model.rhs(xi + h * k3, params, u)
            xi = xi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(xi)):
            comp = int(np.flatnonzero(~np.isfinite(xi))[0])
            raise NonFinite(f"state component {comp} became non-finite at t={times[i + 1]}",
                            time=float(times[i + 1]), component=comp)
        out[i + 1] = xi
    return out


def observe_states(model, params, states):
    """Project states (N+1, m) to observations (N+1, m')."""
    return states @ np.asarray(model.observation(params)).T


@dataclass
class SdeSampleSet:
    """``paths`` has shape (P, N+1, R, m): path, time point, replica, state component."""

    paths: np.ndarray
    seed: int
    euler_substeps: int


def _psd_cholesky(S, rel_jitter=(0.0, 1e-14, 1e-12, 1e-10)):
    scale = float(np.max(np.diag(S))) if S.size else 0.0
    if scale == 0.0:
        return np.zeros_like(S)
    for j in rel_jitter:
        try:
            return linalg.cholesky(S + j * scale * np.eye(S.shape[0]), lower=True)
        except linalg.LinAlgError:
            continue
    raise NotPositiveDefinite("noise covariance K (x) CCt is not positive semi-definite")


def sample_linear_sde(A, b, CCt, K, grid, xi0, paths, seed, euler_substeps=100,
                      noise_substeps=None, chunk_size=16384):
    """Euler-Maruyama paths of the coupled replica system.

    Parameters
    ----------
    A, b : arrays of shape (R, N, m, m) and (R, N, m)
        Per-replica, per-interval linearizations.
    CCt : (m, m) noise covariance rate of one replica.
    K : (R, R) effective coupling kernel (squared coupling weights).
    paths : number of sample paths P.
    seed : integer seed. Paths are processed in fixed chunks of ``chunk_size``,
        chunk ``c`` drawing from a Philox stream keyed by ``(seed, c)``, so the
        output does not depend on how chunks are scheduled.
    euler_substeps : Euler steps per grid interval.
    noise_substeps : Brownian increments are drawn at this resolution (a
        multiple of ``euler_substeps``) and summed, so runs with different
        ``euler_substeps`` can share one Brownian path.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    R, N, m = b.shape
    noise_substeps = euler_substeps if noise_substeps is None else noise_substeps
    if euler_substeps < 1 or noise_substeps % euler_substeps:
        raise ConfigError("noise_substeps must be a positive multiple of euler_substeps")
    group = noise_substeps // euler_substeps
    L = _psd_cholesky(np.kron(np.asarray(K, dtype=float), np.asarray(CCt, dtype=float)))
    Abig = np.zeros((N, R * m, R * m))
    for r in range(R):
        Abig[:, r * m:(r + 1) * m, r * m:(r + 1) * m] = A[r]
    bbig = np.transpose(b, (1, 0, 2)).reshape(N, R * m)
    x0 = np.tile(np.asarray(xi0, dtype=float), R)
    dts = np.diff(grid.times)

    out = np.empty((paths, N + 1, R * m))
    for c, start in enumerate(range(0, paths, chunk_size)):
        stop = min(start + chunk_size, paths)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(c,))))
        X = np.broadcast_to(x0, (stop - start, R * m)).copy()
        out[start:stop, 0] = X
        for i in range(N):
            dt = dts[i] / euler_substeps
            sq = np.sqrt(dt / group)
            AT = Abig[i].T
            for _ in range(euler_substeps):
                Z = rng.standard_normal((group, stop - start, R * m)).sum(axis=0)
                X = X + (X @ AT + bbig[i]) * dt + (Z @ L.T) * sq
            out[start:stop, i + 1] = X
    return SdeSampleSet(out.reshape(paths, N + 1, R, m), int(seed), int(euler_substeps))
