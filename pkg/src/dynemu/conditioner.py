"""Conditioning phase: factorize, solve for residuals, precompute covectors.

Everything expensive happens here once per design set; the resulting
:class:`ConditionedEmulator` is what the emulation step reads. It can be
persisted with :func:`save` and restored with :func:`load` (see
``docs/artifact-format.md`` for the binary layout).
"""
from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from . import __version__
from .coupling import DesignSet, InputTrajectory, MetricSpec, coupling_matrix
from .covariance import (
    KernelStack,
    TimeGrid,
    assemble_replica_kernels,
    conditioning_indices,
    kernels_from_linearization,
    mean_recursion,
    sigma_prime,
)
from .errors import ConfigError, EmulatorError, NotPositiveDefinite
from .kernels import COND_THRESHOLD
from .simulator import model_from_config

DEFAULT_JITTER = (0.0, 1e-10, 1e-8, 1e-6)
MAGIC = b"DYNEMU\x00\x01"
FORMAT_VERSION = 1


@dataclass
class ConditionConfig:
    """``jitter_schedule`` entries are relative to the mean diagonal of Sigma'."""

    jitter_schedule: tuple = DEFAULT_JITTER
    stride: int = 1
    cond_threshold: float = COND_THRESHOLD
    min_pivot_ratio: float = 10.0

    def to_dict(self):
        return {"jitter_schedule": list(self.jitter_schedule), "stride": self.stride,
                "cond_threshold": self.cond_threshold, "min_pivot_ratio": self.min_pivot_ratio}

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        return cls(tuple(d.get("jitter_schedule", DEFAULT_JITTER)), int(d.get("stride", 1)),
                   float(d.get("cond_threshold", COND_THRESHOLD)), float(d.get("min_pivot_ratio", 10.0)))


@dataclass
class ObservationSet:
    """Observed outputs ``y`` of shape (n, N+1, m'): replica, grid time, component.

    Row 0 of the time axis is the (known) initial observation and is not
    used for conditioning.
    """

    y: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 3:
            raise ConfigError(f"observations must have shape (n, N+1, m'), got {self.y.shape}")
        if not np.all(np.isfinite(self.y)):
            raise ConfigError("observations must be finite")


@dataclass
class ConditionedEmulator:
    model: object
    grid: TimeGrid
    design: DesignSet
    metric: MetricSpec
    CCt: np.ndarray
    xi0: np.ndarray
    chol: np.ndarray
    jitter: float
    residual: np.ndarray
    zprime: np.ndarray
    design_M: np.ndarray
    design_Minv: np.ndarray
    design_lam: np.ndarray
    design_z: np.ndarray
    observed_y: np.ndarray
    cond_idx: np.ndarray
    config: ConditionConfig = field(default_factory=ConditionConfig)
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        self._derive_caches()

    def _derive_caches(self):
        # design-side products reused by every emulation; none depend on the online input
        n = self.design.n
        m = self.CCt.shape[0]
        N = self.grid.N
        if n:
            self.design_MinvT = np.swapaxes(self.design_Minv, -1, -2)  # (n, N, m, m)
            self.design_u = np.einsum("aiqp,iaq->iap", self.design_M, self.zprime)  # M^T z', (N, n, m)
        else:
            self.design_MinvT = np.zeros((0, N, m, m), complex)
            self.design_u = np.zeros((N, 0, m), complex)
        self._design_params = self.design.params_matrix()
        self._design_kernels = None

    @property
    def n(self):
        return self.design.n

    @property
    def dim(self):
        return self.chol.shape[0]

    def design_kernels(self):
        """Per-replica kernels of the design runs (recomputed lazily from the cached eigendecompositions)."""
        if self._design_kernels is None:
            ks = []
            for a, x in enumerate(self.design):
                A, b = self.model.linearize_batch(x.params, x.forcing)
                H = np.broadcast_to(np.asarray(self.model.observation(x.params), dtype=float),
                                    (self.grid.N + 1, self.model.obs_dim, self.model.state_dim))
                ks.append(kernels_from_linearization(A, b, H, self.grid.dt, self.config.cond_threshold, a))
            self._design_kernels = ks
        return self._design_kernels


def factorize(S, jitter_schedule=(0.0,), min_pivot_ratio=10.0):
    """Cholesky factor of ``S + j I`` for the first workable ``j`` in the schedule.

    A factorization is rejected not only when LAPACK fails but also when its
    smallest squared pivot is below ``min_pivot_ratio * dim * eps`` times the
    largest diagonal entry, i.e. when the matrix is singular to working
    precision (exactly duplicated design runs end up there).

    Returns ``(L, applied_jitter)``.
    """
    S = np.asarray(S, dtype=float)
    D = S.shape[0]
    if D == 0:
        return np.zeros((0, 0)), 0.0
    scale = float(np.max(np.diag(S)))
    floor = min_pivot_ratio * D * np.finfo(float).eps * scale
    for j in jitter_schedule:
        try:
            L = linalg.cholesky(S + j * np.eye(D), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.min(np.diag(L)) ** 2 > floor:
            return L, float(j)
    raise NotPositiveDefinite(
        f"Sigma' ({D}x{D}) is not numerically positive definite for jitters {list(jitter_schedule)}; "
        "check for duplicated design inputs or an invalid metric flavor")


def residual_solve(L, y_cond, z_cond):
    """Solve ``(Sigma' + jitter I) r = vec(y - z)``; inputs are (T, n, m') conditioning slices."""
    d = (np.asarray(y_cond, dtype=float) - np.asarray(z_cond, dtype=float)).ravel()
    if d.shape[0] != L.shape[0]:
        raise ConfigError(f"residual length {d.shape[0]} does not match factor dimension {L.shape[0]}")
    if d.size == 0:
        return d
    return linalg.cho_solve((L, True), d, check_finite=False)


def zprime_covectors(design_kernels, r, cond_idx, N):
    """Backward pass for the transport covectors ``z'_{i a}``, i = 0..N-1.

    ``z'_{N-1} = H_N^T r_N`` and ``z'_i = H_{i+1}^T r_{i+1} + h_{i+1}^T z'_{i+1}``,
    where ``r_j`` is zero at times that are not conditioning times.
    """
    n = len(design_kernels)
    stack = KernelStack(design_kernels)
    m = stack.h.shape[-1]
    p = stack.H.shape[2]
    rt = np.zeros((N + 1, n, p))
    rt[np.asarray(cond_idx, dtype=int)] = np.asarray(r).reshape(len(cond_idx), n, p)
    zp = np.zeros((N, n, m))
    HT = np.swapaxes(stack.H, -1, -2)  # (n, N+1, m, p)
    zp[N - 1] = np.einsum("amp,ap->am", HT[:, N], rt[N])
    for i in range(N - 2, -1, -1):
        zp[i] = (np.einsum("amp,ap->am", HT[:, i + 1], rt[i + 1])
                 + np.einsum("aqm,aq->am", stack.h[:, i + 1], zp[i + 1]))
    return zp


def condition(model, design: DesignSet, runs: ObservationSet, metric: MetricSpec, CCt,
              config: ConditionConfig | None = None, xi0=None, grid: TimeGrid | None = None):
    """Run the whole conditioning phase and return a :class:`ConditionedEmulator`."""
    config = config or ConditionConfig()
    if grid is None:
        raise ConfigError("the time grid must be given")
    if model.shared_forcing:
        design.check_shared_forcing()
    xi0 = np.asarray(model.xi0 if xi0 is None else xi0, dtype=float)
    CCt = np.asarray(CCt, dtype=float)
    y = runs.y
    if y.shape != (design.n, grid.N + 1, model.obs_dim):
        raise ConfigError(f"runs have shape {y.shape}, expected {(design.n, grid.N + 1, model.obs_dim)}")
    timings = {}

    t = time.perf_counter()
    try:
        kerns = [assemble_replica_kernels(model, x, grid, config.cond_threshold, replica=a)
                 for a, x in enumerate(design)]
    except EmulatorError as exc:
        raise type(exc)(f"kernel assembly: {exc}") from exc
    means = [mean_recursion(k, xi0) for k in kerns]
    m, p, N = model.state_dim, model.obs_dim, grid.N
    R = coupling_matrix(design, None, metric)
    cov = sigma_prime(kerns, CCt, R * R, grid, config.stride)
    timings["assembly_s"] = time.perf_counter() - t

    t = time.perf_counter()
    mean_diag = float(np.mean(np.diag(cov.matrix))) if cov.dim else 0.0
    try:
        L, jitter = factorize(cov.matrix, [j * mean_diag for j in config.jitter_schedule],
                              config.min_pivot_ratio)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"factorization: {exc}") from exc
    timings["factorization_s"] = time.perf_counter() - t

    t = time.perf_counter()
    idx = cov.cond_idx
    design_z = np.stack([mt.z for mt in means]) if means else np.zeros((0, N + 1, p))
    y_cond = np.transpose(y[:, idx], (1, 0, 2))
    z_cond = np.transpose(design_z[:, idx], (1, 0, 2))
    r = residual_solve(L, y_cond, z_cond)
    zp = zprime_covectors(kerns, r, idx, N) if kerns else np.zeros((N, 0, m))
    timings["covectors_s"] = time.perf_counter() - t

    ce = ConditionedEmulator(
        model=model, grid=grid, design=design, metric=metric, CCt=CCt, xi0=xi0, chol=L, jitter=jitter,
        residual=r, zprime=zp,
        design_M=_stack([k.M for k in kerns], (0, N, m, m)),
        design_Minv=_stack([k.Minv for k in kerns], (0, N, m, m)),
        design_lam=_stack([k.lam for k in kerns], (0, N, m)), design_z=design_z, observed_y=y,
        cond_idx=idx, config=config, timings=timings,
    )
    ce._design_kernels = kerns
    return ce


def _stack(arrs, empty_shape):
    return np.stack(arrs) if arrs else np.zeros(empty_shape, complex)


# --- persistence ---------------------------------------------------------

_HEADER = struct.Struct("<8sI8Q")


def _complex_as_float(a):
    return np.ascontiguousarray(np.asarray(a, dtype=complex)).view("<f8")


def _arrays(ce: ConditionedEmulator):
    """Array payload in on-disk order (see docs/artifact-format.md)."""
    return [
        ("times", ce.grid.times),
        ("xi0", ce.xi0),
        ("CCt", ce.CCt),
        ("cond_idx", ce.cond_idx.astype(float)),
        ("design_params", ce.design.params_matrix().reshape(ce.n, ce.model.param_dim)),
        ("design_forcing", _design_forcing(ce)),
        ("jitter", np.array([ce.jitter])),
        ("chol", ce.chol),
        ("residual", ce.residual),
        ("zprime", ce.zprime),
        ("design_z", ce.design_z),
        ("observed_y", ce.observed_y),
        ("design_lam", _complex_as_float(ce.design_lam)),
        ("design_M", _complex_as_float(ce.design_M)),
        ("design_Minv", _complex_as_float(ce.design_Minv)),
    ]


def _design_forcing(ce):
    if ce.n == 0:
        return np.zeros((0, ce.grid.N, ce.model.forcing_dim))
    return np.stack([x.forcing for x in ce.design])


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save(ce: ConditionedEmulator, path, provenance: dict | None = None):
    """Write the binary artifact and its JSON sidecar (``<path>.json``)."""
    path = Path(path)
    m = ce.CCt.shape[0]
    p = ce.model.obs_dim
    dims = (m, p, ce.n, ce.grid.N, ce.model.param_dim, ce.model.forcing_dim,
            len(ce.cond_idx), ce.config.stride)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, *dims))
        for _, a in _arrays(ce):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    side = {
        "format_version": FORMAT_VERSION,
        "tool_version": __version__,
        "model": ce.model.config_dict(),
        "metric": ce.metric.to_dict(),
        "condition_config": ce.config.to_dict(),
        "grid_ref": ce.grid.key,
        "jitter": ce.jitter,
        "provenance": provenance or {},
    }
    sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


def load(path) -> ConditionedEmulator:
    path = Path(path)
    side = json.loads(sidecar_path(path).read_text())
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path} is too short to be an emulator artifact")
    magic, version, m, p, n, N, npar, nf, ncond, stride = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ConfigError(f"{path} is not an emulator artifact")
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported artifact format version {version}")
    D = ncond * n * p
    shapes = [
        ("times", (N + 1,), False), ("xi0", (m,), False), ("CCt", (m, m), False),
        ("cond_idx", (ncond,), False), ("design_params", (n, npar), False),
        ("design_forcing", (n, N, nf), False),
        ("jitter", (1,), False), ("chol", (D, D), False), ("residual", (D,), False),
        ("zprime", (N, n, m), False), ("design_z", (n, N + 1, p), False),
        ("observed_y", (n, N + 1, p), False), ("design_lam", (n, N, m), True),
        ("design_M", (n, N, m, m), True), ("design_Minv", (n, N, m, m), True),
    ]
    expected = _HEADER.size + 8 * sum(int(np.prod(shape)) * (2 if c else 1) for _, shape, c in shapes)
    if len(raw) != expected:
        raise ConfigError(f"artifact {path} has {len(raw)} bytes, its header implies {expected}")
    off = _HEADER.size
    arrs = {}
    for name, shape, is_complex in shapes:
        count = int(np.prod(shape)) * (2 if is_complex else 1)
        a = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(float)
        off += 8 * count
        arrs[name] = a.view(complex).reshape(shape) if is_complex else a.reshape(shape)

    model = model_from_config(side["model"])
    grid = TimeGrid(arrs["times"])
    metric = MetricSpec.from_dict(side["metric"])
    design = DesignSet([InputTrajectory(arrs["design_params"][a], arrs["design_forcing"][a], grid.key)
                        for a in range(n)])
    config = ConditionConfig.from_dict(side["condition_config"])
    cond_idx = arrs["cond_idx"].astype(int)
    if not np.array_equal(cond_idx, conditioning_indices(N, stride)):
        raise ConfigError("stored conditioning indices do not match the stride")
    return ConditionedEmulator(
        model=model, grid=grid, design=design, metric=metric, CCt=arrs["CCt"], xi0=arrs["xi0"],
        chol=arrs["chol"], jitter=float(arrs["jitter"][0]), residual=arrs["residual"],
        zprime=arrs["zprime"], design_M=arrs["design_M"], design_Minv=arrs["design_Minv"],
        design_lam=arrs["design_lam"], design_z=arrs["design_z"], observed_y=arrs["observed_y"],
        cond_idx=cond_idx, config=config,
    )
