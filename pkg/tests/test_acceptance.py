"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line with its measurements."""
import json
import time

import numpy as np
import pytest
from scipy import integrate, linalg

from dynemu import (
    ConditionConfig, TimeGrid, cli, condition, dense_oracle, emulate, kernels, load, logspm, pipeline, save,
)
from dynemu.covariance import KernelStack, cross_blocks, kernels_from_linearization, mean_recursion
from dynemu.simulator import sample_linear_sde

from _util import random_problem, random_spd, random_stable, rel_err


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def check(report, number, name, ok, limit, clock, detail):
    passed = bool(ok) and clock.elapsed < limit
    report(number, name, passed, f"{detail}; {clock.elapsed:.2f} s (limit {limit} s)")
    assert ok, detail
    assert clock.elapsed < limit, f"took {clock.elapsed:.1f} s, limit {limit} s"


def test_criterion_1_kernel_quadrature(acceptance_report):
    rng = np.random.default_rng(1001)
    worst_g = worst_k = 0.0
    with Clock() as clock:
        for _ in range(100):
            m = int(rng.integers(1, 4))
            Aa, Ab = random_stable(rng, m), random_stable(rng, m)
            CCt, b, dt, w = random_spd(rng, m), rng.standard_normal(m), rng.uniform(0.05, 2.0), rng.uniform(0.1, 1)
            ea, eb = kernels.eigendecompose(Aa), kernels.eigendecompose(Ab)
            # integrand of the interval noise integral, written in the backward-time variable
            fg = lambda s: linalg.expm((dt - s) * Aa) @ CCt @ linalg.expm((dt - s) * Ab).T
            fk = lambda s: linalg.expm((dt - s) * Aa) @ b
            gq = w * w * integrate.quad_vec(fg, 0.0, dt, epsabs=0, epsrel=1e-12)[0]
            kq = integrate.quad_vec(fk, 0.0, dt, epsabs=0, epsrel=1e-12)[0]
            worst_g = max(worst_g, rel_err(kernels.noise_block_g(ea, eb, CCt, dt, w).g, gq))
            worst_k = max(worst_k, rel_err(kernels.drift_k(ea, b, dt), kq))
    ok = worst_g < 1e-8 and worst_k < 1e-8
    check(acceptance_report, 1, "kernel quadrature equivalence", ok, 10, clock,
          f"100 systems, max rel err g {worst_g:.2e}, k {worst_k:.2e} (tol 1e-8)")


def test_criterion_2_recursion_closed_form(acceptance_report):
    worst = 0.0
    with Clock() as clock:
        for seed in range(100):
            rng = np.random.default_rng(2000 + seed)
            m, n, N = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 7))
            grid = TimeGrid.regular(rng.uniform(-1, 1), rng.uniform(0.1, 1.0), N)
            As = [random_stable(rng, m) for _ in range(n)]
            rks = [kernels_from_linearization(np.broadcast_to(A, (N, m, m)), np.zeros((N, m)),
                                              np.broadcast_to(np.eye(m), (N + 1, m, m)), grid.dt) for A in As]
            P = rng.uniform(0, 1, (n, 2))
            K = np.exp(-np.sum((P[:, None] - P[None]) ** 2, -1))
            CCt = random_spd(rng, m)
            idx = np.arange(1, N + 1)
            st = KernelStack(rks)
            B = cross_blocks(st, st, CCt, K, idx, idx)
            eds = [kernels.eigendecompose(A) for A in As]
            ref = np.zeros_like(B)
            for i in idx:
                for j in idx:
                    for a in range(n):
                        for b in range(n):
                            ref[i - 1, a, :, j - 1, b] = kernels.sigma_const(
                                eds[a], eds[b], CCt, grid.times[i], grid.times[j], grid.times[0], np.sqrt(K[a, b]))
            worst = max(worst, rel_err(B, ref))
    check(acceptance_report, 2, "recursion vs closed form", worst < 1e-10, 10, clock,
          f"100 seeds, max error {worst:.2e} relative to the largest block entry (tol 1e-10)")


@pytest.mark.slow
def test_criterion_3_monte_carlo(acceptance_report):
    P = 100_000
    grid = TimeGrid.regular(0.0, 0.5, 3)
    a = np.array([-0.5, -1.0])
    b = np.array([0.3, -0.2])
    K = np.array([[1.0, 0.6], [0.6, 1.0]])
    CCt = np.array([[0.8]])
    xi0 = np.array([0.4])
    with Clock() as clock:
        A = np.broadcast_to(a[:, None, None, None], (2, 3, 1, 1))
        bb = np.broadcast_to(b[:, None, None], (2, 3, 1))
        s = sample_linear_sde(A, bb, CCt, K, grid, xi0, paths=P, seed=12345, euler_substeps=400)
        X = s.paths[:, 1:, :, 0].reshape(P, 6)  # (time 1..3) x (replica)
        rks = [kernels_from_linearization(A[r], bb[r], np.ones((4, 1, 1)), grid.dt) for r in range(2)]
        z = np.stack([mean_recursion(rk, xi0).z[1:, 0] for rk in rks], axis=1).reshape(6)
        idx = np.arange(1, 4)
        st = KernelStack(rks)
        S = cross_blocks(st, st, CCt, K, idx, idx).reshape(6, 6)

        mean = X.mean(axis=0)
        Xc = X - mean
        se_mean = Xc.std(axis=0) / np.sqrt(P)
        prod = Xc[:, :, None] * Xc[:, None, :]
        cov = prod.mean(axis=0)
        se_cov = prod.std(axis=0) / np.sqrt(P)
        zs_mean = np.abs(mean - z) / se_mean
        zs_cov = np.abs(cov - S) / se_cov
    worst = max(zs_mean.max(), zs_cov.max())
    check(acceptance_report, 3, "Monte-Carlo oracle", worst <= 3.0, 60, clock,
          f"{P} paths, worst deviation {worst:.2f} standard errors over 6 means and 36 covariances (tol 3)")


def test_criterion_4_dense_oracle(acceptance_report):
    worst_mean = worst_var = 0.0
    cases = 0
    with Clock() as clock:
        for seed in range(100):
            rng = np.random.default_rng(4000 + seed)
            m, n, N = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 6))
            p = int(rng.integers(1, m + 1))
            stride = int(rng.integers(1, 3)) if N > 2 else 1
            prob = random_problem(rng, m, n, N, p=p, shared=bool(seed % 2))
            ce = condition(prob["model"], prob["design"], prob["runs"], prob["metric"], prob["CCt"],
                           ConditionConfig(stride=stride), grid=prob["grid"])
            res = emulate(ce, prob["x_new"], variance=True)
            mean, cov = dense_oracle(prob["model"], prob["design"], prob["runs"], prob["x_new"], prob["CCt"],
                                     prob["metric"], prob["grid"], stride=stride, jitter=ce.jitter)
            blocks = np.stack([cov[i * p:(i + 1) * p, i * p:(i + 1) * p] for i in range(N)])
            worst_mean = max(worst_mean, rel_err(res.mean, mean))
            worst_var = max(worst_var, rel_err(res.variance[1:], blocks))
            cases += 1
    ok = worst_mean < 1e-8 and worst_var < 1e-8
    check(acceptance_report, 4, "dense conditioning oracle", ok, 30, clock,
          f"{cases} cases, max rel err mean {worst_mean:.2e}, variance {worst_var:.2e} (tol 1e-8)")


def logspm_config(N):
    raw = logspm.default_config()
    raw["grid"]["N"] = N
    return pipeline.load_config(raw)


def test_criterion_5_interpolation(acceptance_report):
    with Clock() as clock:
        cfg = logspm_config(50)
        cfg.condition = ConditionConfig(jitter_schedule=(0.0,))
        thetas = pipeline.sample_parameters(cfg.ranges, 10, 5)
        y, _ = pipeline.simulate(cfg, thetas)
        ce = pipeline.condition_runs(cfg, thetas, y)
        worst = 0.0
        for a in range(10):
            res = emulate(ce, cfg.input(thetas[a]))
            worst = max(worst, float(np.max(np.abs(res.mean - y[a]) / np.abs(y[a]))))
    check(acceptance_report, 5, "interpolation exactness", worst < 1e-6 and ce.jitter == 0.0, 10, clock,
          f"logSPM n=10 N=50 jitter {ce.jitter}, max pointwise rel err {worst:.2e} (tol 1e-6)")


@pytest.mark.slow
def test_criterion_6_complexity(acceptance_report):
    with Clock() as clock:
        cfg = pipeline.load_config()
        rows, slopes = pipeline.bench(cfg, [200, 450, 900, 2000], [20, 50, 100, 200], 20, 200)
    ok = all(0.8 <= slopes[k] <= 1.3 for k in ("N", "n"))
    times = ", ".join(f"{r['sweep']}:{r['N']}x{r['n']}={1e3 * r['emulation_s']:.1f}ms" for r in rows)
    check(acceptance_report, 6, "O(Nn) emulation cost", ok, 300, clock,
          f"slope vs N {slopes['N']:.3f}, vs n {slopes['n']:.3f} (band [0.8, 1.3]); {times}")


def test_criterion_7_logspm_identities(acceptance_report):
    rng = np.random.default_rng(7007)
    R = logspm._ranges_array(logspm.default_config()["ranges"])
    worst = {"mass": 0.0, "secant": 0.0, "eig": 0.0}
    max_lam = -np.inf
    with Clock() as clock:
        for _ in range(1000):
            theta = R[:, 0] + rng.random(8) * (R[:, 1] - R[:, 0])
            p = logspm.LogSpmParams(*theta, A_W=rng.uniform(0.5, 2), h_s1=rng.uniform(10, 100),
                                    h_s2=rng.uniform(10, 100))
            state = rng.uniform(0, 150, 3)
            forcing = (rng.exponential(10.0), rng.uniform(0, 5))
            q = logspm.fluxes(state, p, forcing)
            d = logspm.rhs(state, p, forcing)
            balance = q["rain"] - q["et"] - q["dp"] - q["r"]
            scale = max(abs(v) for v in q.values())
            worst["mass"] = max(worst["mass"], abs(d.sum() - balance) / scale)
            a_sat, a_et = logspm.secant_slopes(p)
            f_sat, _ = logspm.fractions(p.h_s1, p)
            _, f_et = logspm.fractions(p.h_s2, p)
            worst["secant"] = max(worst["secant"], abs(a_sat * p.h_s1 - f_sat) / f_sat, abs(a_et * p.h_s2 - f_et) / f_et)
            A, _ = logspm.linearize(p, forcing)
            M, lam = logspm.closed_form_eigen(*logspm.drift_entries(p, *forcing))
            resid = np.abs(A @ M - M * lam).max() / (np.abs(A).max() * np.abs(M).max())
            worst["eig"] = max(worst["eig"], resid)
            max_lam = max(max_lam, lam.max())
    ok = worst["mass"] < 1e-10 and worst["secant"] < 1e-10 and worst["eig"] < 1e-10 and max_lam < 0
    check(acceptance_report, 7, "logSPM structural identities", ok, 10, clock,
          f"1000 draws, mass {worst['mass']:.1e}, secant {worst['secant']:.1e}, eigvec residual "
          f"{worst['eig']:.1e} (tol 1e-10), max eigenvalue {max_lam:.3g} (< 0)")


def test_criterion_8_heldout_reproduction(acceptance_report, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with Clock() as clock:
        codes = [
            cli.main(["design", "--n", "50", "--out", "designs.json"]),
            cli.main(["simulate", "--designs", "designs.json", "--out", "runs.csv"]),
            cli.main(["condition", "--designs", "designs.json", "--runs", "runs.csv", "--artifact", "emu.bin"]),
            cli.main(["validate", "--artifact", "emu.bin", "--n", "5", "--out", "validation.json"]),
        ]
        report = json.loads((tmp_path / "validation.json").read_text())
        series = np.loadtxt(tmp_path / "validation_series.csv", delimiter=",", skiprows=2)
    d = np.array([s["d_value"] for s in report["sets"]])
    d0 = np.array([s["d_value_prior"] for s in report["sets"]])
    ok = (codes == [0, 0, 0, 0] and len(d) == 5 and np.all(np.isfinite(d))
          and np.median(d) < np.median(d0) and series.shape[0] == 5 * 101)
    check(acceptance_report, 8, "held-out reproduction", ok, 300, clock,
          f"50 designs, 5 held-out sets, d = {np.round(d, 4).tolist()}, prior d = {np.round(d0, 4).tolist()}, "
          f"median {np.median(d):.4f} vs prior {np.median(d0):.4f}")


def test_criterion_9_round_trip(acceptance_report, tmp_path):
    with Clock() as clock:
        cfg = logspm_config(50)
        thetas = pipeline.sample_parameters(cfg.ranges, 11, 9)
        y, _ = pipeline.simulate(cfg, thetas[:10])
        ce = pipeline.condition_runs(cfg, thetas[:10], y)
        save(ce, tmp_path / "a.bin", {"case": 9})
        ce2 = load(tmp_path / "a.bin")
        save(ce2, tmp_path / "b.bin", {"case": 9})
        same_bytes = (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        fields = ("chol", "residual", "zprime", "design_M", "design_Minv", "design_lam", "design_z",
                  "observed_y", "xi0", "CCt", "cond_idx")
        same_arrays = all(np.array_equal(getattr(ce, f), getattr(ce2, f)) for f in fields)
        r1 = emulate(ce, cfg.input(thetas[10]), variance=True)
        r2 = emulate(ce2, cfg.input(thetas[10]), variance=True)
        same_emu = np.array_equal(r1.mean, r2.mean) and np.array_equal(r1.variance, r2.variance)
    check(acceptance_report, 9, "artifact round-trip", same_bytes and same_arrays and same_emu, 5, clock,
          f"bytes identical {same_bytes}, arrays identical {same_arrays}, emulation identical {same_emu}")
