"""Inputs, the input-space metric and replica coupling weights."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, MismatchedGrids

FLAVORS = ("squared_euclidean", "euclidean")


@dataclass(frozen=True)
class InputTrajectory:
    """Static parameters plus one forcing vector per grid interval.

    ``forcing`` has shape ``(N, f)``; ``grid_ref`` identifies the time grid the
    forcing rows belong to (see :attr:`dynemu.covariance.TimeGrid.key`).
    """

    params: np.ndarray
    forcing: np.ndarray
    grid_ref: str

    def __post_init__(self):
        params = np.atleast_1d(np.asarray(self.params, dtype=float))
        forcing = np.asarray(self.forcing, dtype=float)
        if forcing.ndim == 1:
            forcing = forcing[:, None]
        if forcing.ndim != 2:
            raise ConfigError(f"forcing must be 2-D (N, f), got shape {forcing.shape}")
        if not (np.all(np.isfinite(params)) and np.all(np.isfinite(forcing))):
            raise ConfigError("inputs must be finite")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "forcing", forcing)

    @property
    def n_intervals(self) -> int:
        return self.forcing.shape[0]

    def with_params(self, params) -> "InputTrajectory":
        return InputTrajectory(params, self.forcing, self.grid_ref)


@dataclass(frozen=True)
class MetricSpec:
    coords: tuple
    scales: np.ndarray
    flavor: str = "squared_euclidean"

    def __post_init__(self):
        coords = tuple(int(c) for c in self.coords)
        scales = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if len(set(coords)) != len(coords):
            raise ConfigError("metric coordinates must be distinct")
        if scales.shape != (len(coords),):
            raise ConfigError("one scale per metric coordinate is required")
        if not np.all(scales > 0):
            raise ConfigError("metric scales must be strictly positive")
        if self.flavor not in FLAVORS:
            raise ConfigError(f"unknown metric flavor {self.flavor!r}; expected one of {FLAVORS}")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "scales", scales)

    def to_dict(self) -> dict:
        return {"coords": list(self.coords), "scales": self.scales.tolist(), "flavor": self.flavor}

    @classmethod
    def from_dict(cls, d) -> "MetricSpec":
        return cls(tuple(d["coords"]), np.asarray(d["scales"], dtype=float), d.get("flavor", "squared_euclidean"))


@dataclass
class DesignSet:
    inputs: list = field(default_factory=list)

    def __post_init__(self):
        self.inputs = list(self.inputs)
        refs = {x.grid_ref for x in self.inputs}
        if len(refs) > 1:
            raise MismatchedGrids("design inputs are defined on different grids")

    @property
    def n(self) -> int:
        return len(self.inputs)

    def __len__(self):
        return len(self.inputs)

    def __iter__(self):
        return iter(self.inputs)

    def __getitem__(self, i):
        return self.inputs[i]

    def params_matrix(self) -> np.ndarray:
        if not self.inputs:
            return np.zeros((0, 0))
        return np.stack([x.params for x in self.inputs])

    def check_shared_forcing(self):
        if not self.inputs:
            return
        f0 = self.inputs[0].forcing
        for a, x in enumerate(self.inputs[1:], start=1):
            if x.forcing.shape != f0.shape or not np.array_equal(x.forcing, f0):
                raise ConfigError(f"design input {a} does not share the forcing series of input 0")


def _metric_coords(params, ms: MetricSpec):
    return np.asarray(params, dtype=float)[..., list(ms.coords)] / ms.scales


def rho(x_a: InputTrajectory, x_b: InputTrajectory, ms: MetricSpec) -> float:
    if x_a.grid_ref != x_b.grid_ref:
        raise MismatchedGrids(f"inputs on grids {x_a.grid_ref!r} and {x_b.grid_ref!r}")
    d = _metric_coords(x_a.params, ms) - _metric_coords(x_b.params, ms)
    r = float(np.dot(d, d))
    return r if ms.flavor == "squared_euclidean" else float(np.sqrt(r))


def coupling_weight(x_a: InputTrajectory, x_b: InputTrajectory, ms: MetricSpec) -> float:
    """``exp(-rho / 2)``; the noise covariance between the replicas scales with its square."""
    return float(np.exp(-0.5 * rho(x_a, x_b, ms)))


def pairwise_rho(P_a, P_b, ms: MetricSpec) -> np.ndarray:
    """Metric between all rows of two parameter matrices."""
    Za = _metric_coords(np.atleast_2d(P_a), ms)
    Zb = _metric_coords(np.atleast_2d(P_b), ms)
    d = Za[:, None, :] - Zb[None, :, :]
    r = np.einsum("abk,abk->ab", d, d)
    return r if ms.flavor == "squared_euclidean" else np.sqrt(r)


def coupling_matrix(design: DesignSet, online: InputTrajectory | None, ms: MetricSpec) -> np.ndarray:
    """Matrix of coupling weights ``R``; the online input, if given, comes last.

    Entries are evaluated pairwise through :func:`coupling_weight` semantics but
    vectorized; the diagonal is exactly one and the result is exactly symmetric.
    """
    inputs: Sequence[InputTrajectory] = list(design.inputs) + ([online] if online is not None else [])
    if not inputs:
        return np.zeros((0, 0))
    refs = {x.grid_ref for x in inputs}
    if len(refs) > 1:
        raise MismatchedGrids("inputs of the coupling matrix are defined on different grids")
    P = np.stack([x.params for x in inputs])
    R = np.exp(-0.5 * pairwise_rho(P, P, ms))
    R = np.triu(R, 1)
    R = R + R.T
    np.fill_diagonal(R, 1.0)
    return R
