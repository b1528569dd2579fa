"""logSPM: a three-store (soil, groundwater, river) rainfall-runoff model.

State ``(h_s, h_gw, h_r)``; forcing per interval ``(i_rain, i_pet)``; the eight
static parameters are ordered as in :data:`PARAM_NAMES`. The river flow
``Q_r = A_W k_r h_r`` is the single observed output.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .coupling import MetricSpec
from .errors import ConfigError, DegenerateEigenvalues
from .simulator import SimulationModel, register_model

PARAM_NAMES = ("k_s", "s_F", "k_et", "q_lat_max", "q_gw_max", "k_bf", "k_dp", "k_r")
FORCING_NAMES = ("i_rain", "i_pet")
EIG_SEP_TOL = 1e-8


@dataclass
class LogSpmParams:
    k_s: float
    s_F: float
    k_et: float
    q_lat_max: float
    q_gw_max: float
    k_bf: float
    k_dp: float
    k_r: float
    A_W: float = 1.0
    h_s1: float = 1.0
    h_s2: float = 1.0
    xi0: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.xi0 = np.asarray(self.xi0, dtype=float)
        vals = [getattr(self, k) for k in PARAM_NAMES] + [self.A_W, self.h_s1, self.h_s2]
        if not all(np.isfinite(v) and v > 0 for v in vals):
            raise ConfigError("logSPM parameters, A_W, h_s1 and h_s2 must be strictly positive")

    @property
    def theta(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES])


def fractions(h_s, p):
    """Saturated-area fraction ``f_sat`` and actual-ET fraction ``f_et`` at soil storage ``h_s``."""
    f_sat = 1.0 / (1.0 + p.s_F * np.exp(-p.k_s * h_s)) - 1.0 / (1.0 + p.s_F)
    f_et = 1.0 - np.exp(-p.k_et * h_s)
    return f_sat, f_et


def fluxes(state, p, forcing):
    h_s, h_gw, h_r = state
    i_rain, i_pet = forcing
    f_sat, f_et = fractions(h_s, p)
    return {
        "rain": i_rain,
        "runoff": f_sat * i_rain,
        "et": f_et * i_pet,
        "lat": f_sat * p.q_lat_max,
        "gw": f_sat * p.q_gw_max,
        "bf": p.k_bf * h_gw,
        "dp": p.k_dp * h_gw,
        "r": p.k_r * h_r,
    }


def rhs(state, p, forcing):
    q = fluxes(state, p, forcing)
    return np.array([
        q["rain"] - q["runoff"] - q["et"] - q["lat"] - q["gw"],
        q["gw"] - q["bf"] - q["dp"],
        q["runoff"] + q["lat"] + q["bf"] - q["r"],
    ])


def secant_slopes(p):
    """Slopes of the straight lines through the origin meeting f_sat at h_s1 and f_et at h_s2."""
    a_sat = fractions(p.h_s1, p)[0] / p.h_s1
    a_et = fractions(p.h_s2, p)[1] / p.h_s2
    return a_sat, a_et


def drift_entries(p, i_rain, i_pet):
    """``(lam1, lam2, lam3, a, b, c)`` of the linearized drift; vectorized over the forcing."""
    a_sat, a_et = secant_slopes(p)
    i_rain = np.asarray(i_rain, dtype=float)
    i_pet = np.asarray(i_pet, dtype=float)
    lam1 = -a_sat * (i_rain + p.q_lat_max + p.q_gw_max) - a_et * i_pet
    lam2 = -p.k_bf - p.k_dp
    lam3 = -p.k_r
    a = a_sat * p.q_gw_max
    c = a_sat * (i_rain + p.q_lat_max)
    return lam1, lam2, lam3, a, p.k_bf, c


def _check_separation(lam1, lam2, lam3, tol=EIG_SEP_TOL):
    lam1 = np.atleast_1d(lam1)
    scale = np.maximum.reduce([np.abs(lam1), np.full_like(lam1, abs(lam2)), np.full_like(lam1, abs(lam3))])
    gaps = np.stack([np.abs(lam1 - lam2), np.abs(lam1 - lam3), np.full_like(lam1, abs(lam2 - lam3))])
    bad = np.any(gaps <= tol * scale, axis=0)
    if np.any(bad):
        l = int(np.flatnonzero(bad)[0])
        raise DegenerateEigenvalues(
            f"linearized logSPM eigenvalues coincide: ({lam1[l]:.6g}, {lam2:.6g}, {lam3:.6g})",
            interval=l if lam1.size > 1 else None)


def linearize(p, forcing, check=True):
    """Drift matrix and offset of the linearized model at one forcing value."""
    A, b = linearize_batch(p, np.atleast_2d(np.asarray(forcing, dtype=float)), check)
    return A[0], b[0]


def linearize_batch(p, forcing, check=True):
    forcing = np.asarray(forcing, dtype=float).reshape(-1, 2)
    lam1, lam2, lam3, a, bb, c = drift_entries(p, forcing[:, 0], forcing[:, 1])
    if check:
        _check_separation(lam1, lam2, lam3)
    N = forcing.shape[0]
    A = np.zeros((N, 3, 3))
    A[:, 0, 0] = lam1
    A[:, 1, 1] = lam2
    A[:, 2, 2] = lam3
    A[:, 1, 0] = a
    A[:, 2, 0] = c
    A[:, 2, 1] = bb
    b = np.zeros((N, 3))
    b[:, 0] = forcing[:, 0]
    return A, b


def closed_form_eigen(lam1, lam2, lam3, a, b, c):
    """Unit-diagonal lower-triangular eigenvector matrix of the linearized drift.

    Columns correspond to the eigenvalues in the order ``(lam1, lam2, lam3)``.
    """
    _check_separation(lam1, lam2, lam3)
    d12 = lam1 - lam2
    d13 = lam1 - lam3
    d23 = lam2 - lam3
    M = np.array([
        [1.0, 0.0, 0.0],
        [a / d12, 1.0, 0.0],
        [(c * d12 + a * b) / (d12 * d13), b / d23, 1.0],
    ])
    return M, np.array([lam1, lam2, lam3], dtype=float)


def observation(p) -> np.ndarray:
    return np.array([[0.0, 0.0, p.A_W * p.k_r]])


def default_metric(ranges) -> MetricSpec:
    """Squared-Euclidean metric over all eight parameters, each scaled by its range.

    ``ranges`` is a mapping name -> (low, high) or an (8, 2) array.
    """
    R = _ranges_array(ranges)
    if not np.all(R[:, 1] > R[:, 0]):
        raise ConfigError("every parameter range needs low < high")
    return MetricSpec(tuple(range(len(PARAM_NAMES))), R[:, 1] - R[:, 0], "squared_euclidean")


def _ranges_array(ranges):
    if isinstance(ranges, dict):
        try:
            return np.array([ranges[k] for k in PARAM_NAMES], dtype=float)
        except KeyError as exc:
            raise ConfigError(f"missing parameter range {exc}") from None
    R = np.asarray(ranges, dtype=float)
    if R.shape != (len(PARAM_NAMES), 2):
        raise ConfigError(f"ranges must have shape (8, 2), got {R.shape}")
    return R


def noise_spec(xi0, frac):
    """``C C^T`` for the diagonal noise ``C = diag(frac * xi0)``."""
    xi0 = np.asarray(xi0, dtype=float)
    if frac <= 0:
        raise ConfigError("noise fraction must be positive")
    if np.any(xi0 <= 0):
        raise ConfigError("the noise scale needs a strictly positive initial state")
    C = np.diag(frac * xi0)
    return C @ C.T


@register_model
class LogSpm(SimulationModel):
    """logSPM as a :class:`~dynemu.simulator.SimulationModel` (shared forcing)."""

    name = "logspm"
    state_dim = 3
    obs_dim = 1
    param_dim = len(PARAM_NAMES)
    forcing_dim = 2
    shared_forcing = True

    def __init__(self, A_W=1.0, h_s1=1.0, h_s2=1.0, xi0=(1.0, 1.0, 1.0)):
        self.A_W = float(A_W)
        self.h_s1 = float(h_s1)
        self.h_s2 = float(h_s2)
        self.xi0 = np.asarray(xi0, dtype=float)

    def params(self, theta) -> LogSpmParams:
        return LogSpmParams(*np.asarray(theta, dtype=float), A_W=self.A_W, h_s1=self.h_s1,
                            h_s2=self.h_s2, xi0=self.xi0)

    def rhs(self, state, params, forcing):
        return rhs(state, self.params(params), forcing)

    def linearize(self, params, forcing):
        return linearize(self.params(params), forcing)

    def linearize_batch(self, params, forcing):
        return linearize_batch(self.params(params), forcing)

    def observation(self, params):
        return observation(self.params(params))

    def to_config(self):
        return {"A_W": self.A_W, "h_s1": self.h_s1, "h_s2": self.h_s2, "xi0": self.xi0.tolist()}

    @classmethod
    def from_config(cls, d):
        return cls(d.get("A_W", 1.0), d.get("h_s1", 1.0), d.get("h_s2", 1.0), d.get("xi0", (1.0, 1.0, 1.0)))


def default_config() -> dict:
    """The shipped logSPM run configuration (``data/logspm_default.json``)."""
    return json.loads(resources.files("dynemu").joinpath("data/logspm_default.json").read_text())


def default_forcing() -> np.ndarray:
    """The shipped forcing series, columns (t, i_rain, i_pet)."""
    text = resources.files("dynemu").joinpath("data/forcing_default.csv").read_text()
    return np.loadtxt(text.splitlines(), delimiter=",", skiprows=1, ndmin=2, comments="#")
