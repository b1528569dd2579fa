"""Run configuration and the end-to-end workflow shared by the CLI and the demos.

A run configuration is a JSON document::

    {
      "model": "logspm",
      "model_config": {...},                 # model-specific, see the model class
      "ranges": {"k_s": [lo, hi], ...},       # or a list of [lo, hi] per parameter
      "grid": {"t0": 0.0, "dt": 1.0, "N": 100},   # or {"times": [...]}
      "forcing": "forcing.csv",               # columns t, <forcing...>; path relative to the config
      "noise_frac": 0.1,                      # C = diag(frac * xi0); or "CCt": [[...]]
      "metric_flavor": "squared_euclidean",
      "jitter_schedule": [0, 1e-10, 1e-8, 1e-6],
      "stride": 1,
      "substeps": 10,
      "design_method": "uniform",             # or "lhs"
      "seeds": {"design": 1, "heldout": 2}
    }
"""
from __future__ import annotations

import gc
import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from . import logspm
from .conditioner import ConditionConfig, ObservationSet, condition
from .coupling import DesignSet, InputTrajectory, MetricSpec
from .covariance import TimeGrid
from .emulator import d_value, emulate_mean, prior_mean
from .errors import ConfigError
from .simulator import integrate_ode, model_from_config, observe_states


@dataclass
class RunConfig:
    raw: dict
    model: object
    grid: TimeGrid
    forcing: np.ndarray
    ranges: np.ndarray
    metric: MetricSpec
    CCt: np.ndarray
    condition: ConditionConfig
    substeps: int = 10
    design_method: str = "uniform"
    seeds: dict = field(default_factory=dict)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def input(self, theta) -> InputTrajectory:
        return InputTrajectory(np.asarray(theta, dtype=float), self.forcing, self.grid.key)

    def design_set(self, thetas) -> DesignSet:
        return DesignSet([self.input(t) for t in np.atleast_2d(thetas)])

    def provenance(self, **extra) -> dict:
        from . import __version__
        d = {"tool_version": __version__, "config_hash": self.hash, "seeds": self.seeds}
        d.update(extra)
        return d


def _resolve_forcing(ref, base_dir):
    if isinstance(ref, (list, tuple)):
        return np.asarray(ref, dtype=float)
    path = Path(base_dir) / ref if base_dir is not None else Path(ref)
    if path.exists():
        text = path.read_text()
    else:
        pkg = resources.files("dynemu").joinpath("data", str(ref))
        if not pkg.is_file():
            raise ConfigError(f"forcing file {ref!r} not found")
        text = pkg.read_text()
    return np.loadtxt(text.splitlines(), delimiter=",", skiprows=1, ndmin=2, comments="#")


def _ranges(model, raw):
    r = raw.get("ranges")
    if r is None:
        raise ConfigError("configuration needs parameter 'ranges'")
    if model.name == "logspm":
        return logspm._ranges_array(r)
    R = np.asarray(r, dtype=float).reshape(-1, 2)
    if R.shape[0] != model.param_dim:
        raise ConfigError(f"expected {model.param_dim} ranges, got {R.shape[0]}")
    return R


def load_config(source=None) -> RunConfig:
    """Build a :class:`RunConfig` from a path, a dict, or (``None``) the shipped logSPM default."""
    if source is None:
        raw, base = logspm.default_config(), None
    elif isinstance(source, dict):
        raw, base = dict(source), None
    else:
        path = Path(source)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        base = path.parent
    model = model_from_config(raw)

    g = raw.get("grid", {})
    if "times" in g:
        grid = TimeGrid(np.asarray(g["times"], dtype=float))
    else:
        if g.get("N", 0) < 1 or g.get("dt", 0) <= 0:
            raise ConfigError("grid needs N >= 1 and dt > 0")
        grid = TimeGrid.regular(float(g.get("t0", 0.0)), float(g["dt"]), int(g["N"]))

    table = _resolve_forcing(raw.get("forcing"), base)
    if table.shape[0] < grid.N or table.shape[1] != model.forcing_dim + 1:
        raise ConfigError(f"forcing table {table.shape} does not cover {grid.N} intervals "
                          f"with {model.forcing_dim} forcing columns")
    if not np.allclose(table[: grid.N, 0], grid.times[:-1]):
        raise ConfigError("forcing time column does not match the grid interval starts")
    forcing = table[: grid.N, 1:]

    ranges = _ranges(model, raw)
    if not np.all(ranges[:, 1] >= ranges[:, 0]):
        raise ConfigError("parameter ranges need low <= high")
    widths = ranges[:, 1] - ranges[:, 0]
    flavor = raw.get("metric_flavor", "squared_euclidean")
    metric = MetricSpec(tuple(range(len(widths))), np.where(widths > 0, widths, 1.0), flavor)

    if "CCt" in raw:
        CCt = np.asarray(raw["CCt"], dtype=float)
    else:
        CCt = logspm.noise_spec(model.xi0, float(raw.get("noise_frac", 0.1)))

    cond = ConditionConfig.from_dict({k: raw[k] for k in ("jitter_schedule", "stride") if k in raw})
    method = raw.get("design_method", "uniform")
    if method not in ("uniform", "lhs"):
        raise ConfigError(f"unknown design_method {method!r}")
    return RunConfig(raw, model, grid, forcing, ranges, metric, CCt, cond,
                     int(raw.get("substeps", 10)), method, dict(raw.get("seeds", {})))


def sample_parameters(ranges, n, seed, method="uniform") -> np.ndarray:
    """``n`` parameter vectors drawn within ``ranges`` (uniform per coordinate, or Latin hypercube)."""
    R = np.asarray(ranges, dtype=float)
    if n < 0:
        raise ConfigError("n must be nonnegative")
    if method == "lhs":
        U = qmc.LatinHypercube(d=R.shape[0], seed=np.random.default_rng(seed)).random(n) if n else np.zeros((0, R.shape[0]))
    else:
        U = np.random.default_rng(seed).random((n, R.shape[0]))
    return R[:, 0] + U * (R[:, 1] - R[:, 0])


def simulate(cfg: RunConfig, thetas):
    """Integrate the full model for each parameter vector.

    Returns ``(observations, states)`` with shapes (n, N+1, m') and (n, N+1, m).
    """
    states = np.stack([integrate_ode(cfg.model, cfg.input(t), cfg.grid, substeps=cfg.substeps)
                       for t in np.atleast_2d(thetas)])
    obs = np.stack([observe_states(cfg.model, t, s) for t, s in zip(np.atleast_2d(thetas), states)])
    return obs, states


def condition_runs(cfg: RunConfig, thetas, y):
    return condition(cfg.model, cfg.design_set(thetas), ObservationSet(y), cfg.metric, cfg.CCt,
                     cfg.condition, grid=cfg.grid)


def validate(cfg: RunConfig, ce, heldout):
    """Simulate, emulate and score each held-out parameter vector.

    Returns ``(report, series)``: a JSON-ready dict of d-values and a list of
    per-set arrays with columns (time, truth, emulated, prior, rain forcing).
    """
    truth, _ = simulate(cfg, heldout)
    rows, series = [], []
    for s, theta in enumerate(np.atleast_2d(heldout)):
        x = cfg.input(theta)
        res = emulate_mean(ce, x)
        prior = prior_mean(ce, x)
        rows.append({
            "set": s,
            "params": [float(v) for v in theta],
            "d_value": d_value(res, truth[s]),
            "d_value_prior": d_value(prior, truth[s]),
            "emulation_s": res.timing,
        })
        series.append(np.column_stack([cfg.grid.times, truth[s][:, 0], res.mean[:, 0], prior[:, 0],
                                       np.r_[cfg.forcing[:, 0], np.nan]]))
    d = np.array([r["d_value"] for r in rows])
    d0 = np.array([r["d_value_prior"] for r in rows])
    report = {
        "n_design": ce.n,
        "N": cfg.grid.N,
        "jitter": ce.jitter,
        "sets": rows,
        "summary": {
            "median_d": float(np.median(d)),
            "median_d_prior": float(np.median(d0)),
            "mean_d": float(np.mean(d)),
            "all_finite": bool(np.all(np.isfinite(d))),
        },
    }
    return report, series


def time_emulation(ce, x, repeats=10) -> float:
    """Best-of-``repeats`` wall-clock of the emulation step alone (garbage collection paused, as timeit does)."""
    emulate_mean(ce, x)  # warm-up
    best = np.inf
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repeats):
            t = time.perf_counter()
            emulate_mean(ce, x)
            best = min(best, time.perf_counter() - t)
    finally:
        if was_enabled:
            gc.enable()
    return best


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def bench(cfg: RunConfig, N_values, n_values, n_fixed, N_fixed, seed=0, stride=None, repeats=10):
    """Emulation wall-clock over a sweep of grid sizes and design sizes.

    Design runs are simulated and conditioned once per sweep point, outside
    the timed region. ``stride`` subsamples the
    conditioning times to keep the factorization affordable for large ``n``;
    the emulation step still visits every interval and every design replica.
    """
    rows = []
    base_forcing = cfg.forcing
    for label, N, n in [("N", N, n_fixed) for N in N_values] + [("n", N_fixed, n) for n in n_values]:
        grid = TimeGrid.regular(cfg.grid.times[0], cfg.grid.dt[0], N)
        forcing = np.resize(base_forcing, (N, base_forcing.shape[1]))
        sub = RunConfig(cfg.raw, cfg.model, grid, forcing, cfg.ranges, cfg.metric, cfg.CCt,
                        ConditionConfig(cfg.condition.jitter_schedule,
                                        stride or max(1, (N * n) // 2000 + 1)),
                        cfg.substeps, cfg.design_method, cfg.seeds)
        thetas = sample_parameters(cfg.ranges, n + 1, seed + n + N)
        y, _ = simulate(sub, thetas[:n])
        t = time.perf_counter()
        ce = condition_runs(sub, thetas[:n], y)
        t_cond = time.perf_counter() - t
        t_emu = time_emulation(ce, sub.input(thetas[n]), repeats)
        rows.append({"sweep": label, "N": N, "n": n, "stride": sub.condition.stride,
                     "emulation_s": t_emu, "conditioning_s": t_cond})
    slopes = {}
    for label, key in (("N", "N"), ("n", "n")):
        pts = [(r[key], r["emulation_s"]) for r in rows if r["sweep"] == label]
        if len(pts) >= 2:
            slopes[label] = loglog_slope(*zip(*pts))
    return rows, slopes
