import numpy as np
import pytest

from dynemu import kernels, logspm
from dynemu.errors import ConfigError, DegenerateEigenvalues, NonDiagonalizable
from dynemu.simulator import model_from_config


def params(**kw):
    base = dict(k_s=0.03, s_F=50.0, k_et=0.02, q_lat_max=10.0, q_gw_max=4.0, k_bf=0.005, k_dp=0.001, k_r=1.5,
                h_s1=50.0, h_s2=50.0)
    base.update(kw)
    return logspm.LogSpmParams(**base)


def test_fraction_examples():
    p = params(s_F=1.0, k_s=1.0)
    assert logspm.fractions(0.0, p) == (0.0, 0.0)
    assert logspm.fractions(1.0, p)[0] == pytest.approx(1 / (1 + np.exp(-1)) - 0.5, rel=1e-12)
    f_sat, f_et = logspm.fractions(1e4, params())
    assert f_sat == pytest.approx(50.0 / 51.0, rel=1e-12) and f_et == pytest.approx(1.0)


def test_rhs_examples():
    p = params()
    assert np.array_equal(logspm.rhs(np.zeros(3), p, (0.0, 0.0)), np.zeros(3))
    assert np.allclose(logspm.rhs(np.array([0.0, 1.0, 0.0]), p, (0.0, 0.0)), [0.0, -(p.k_bf + p.k_dp), p.k_bf])


def test_linearization_examples():
    p = params()
    lam1 = logspm.drift_entries(p, 0.0, 0.0)[0]
    a_sat, a_et = logspm.secant_slopes(p)
    assert lam1 == pytest.approx(-a_sat * (p.q_lat_max + p.q_gw_max))
    assert a_sat * p.h_s1 == logspm.fractions(p.h_s1, p)[0]
    assert a_et * p.h_s2 == pytest.approx(logspm.fractions(p.h_s2, p)[1], rel=1e-15)
    # at xi = (h_s1, 0, 0) the affine model reproduces the nonlinear right-hand side
    for forcing in [(0.0, 0.0), (12.0, 3.0), (40.0, 0.5)]:
        A, b = logspm.linearize(p, forcing)
        xi = np.array([p.h_s1, 0.0, 0.0])
        assert np.allclose(A @ xi + b, logspm.rhs(xi, p, forcing), rtol=1e-13, atol=1e-13)
    A, b = logspm.linearize(p, (7.0, 2.0))
    assert np.array_equal(b, [7.0, 0.0, 0.0])
    assert np.all(np.triu(A, 1) == 0)


def test_closed_form_matches_numerical():
    M, lam = logspm.closed_form_eigen(-1.0, -2.0, -3.0, 0.5, 0.2, 0.1)
    A = np.array([[-1.0, 0, 0], [0.5, -2.0, 0], [0.1, 0.2, -3.0]])
    assert np.allclose(A @ M, M * lam, atol=1e-14)
    ed = kernels.eigendecompose(A)
    order = np.argsort(-lam)
    Mn = ed.M / ed.M[np.argmax(np.abs(ed.M), axis=0), range(3)]
    Mc = M[:, order] / M[:, order][np.argmax(np.abs(M[:, order]), axis=0), range(3)]
    assert np.allclose(Mn.real, Mc, atol=1e-12)


def test_degenerate_eigenvalues():
    # choose k_r so that lam3 = lam2
    p = params(k_r=0.006)
    with pytest.raises(DegenerateEigenvalues):
        logspm.linearize(p, (1.0, 1.0))
    with pytest.raises(NonDiagonalizable):
        logspm.closed_form_eigen(-1.0, -1.0, -2.0, 0.5, 0.2, 0.1)
    assert logspm.linearize(p, (1.0, 1.0), check=False)[0].shape == (3, 3)


def test_batch_matches_single():
    p = params()
    F = np.array([[0.0, 1.0], [5.0, 2.0], [30.0, 0.0]])
    A, b = logspm.linearize_batch(p, F)
    for l in range(3):
        A1, b1 = logspm.linearize(p, F[l])
        assert np.array_equal(A[l], A1) and np.array_equal(b[l], b1)


def test_parameter_validation():
    with pytest.raises(ConfigError):
        params(k_s=-1.0)
    with pytest.raises(ConfigError):
        logspm.default_metric(np.ones((8, 2)))
    with pytest.raises(ConfigError):
        logspm.noise_spec([1.0, 0.0, 1.0], 0.1)


def test_model_and_defaults():
    cfg = logspm.default_config()
    model = model_from_config(cfg)
    assert isinstance(model, logspm.LogSpm)
    assert model_from_config(model.config_dict()).to_config() == model.to_config()
    F = logspm.default_forcing()
    assert F.shape[1] == 3 and np.all(F[:, 1:] >= 0)
    R = logspm._ranges_array(cfg["ranges"])
    ms = logspm.default_metric(cfg["ranges"])
    assert np.allclose(ms.scales, R[:, 1] - R[:, 0])
    assert np.allclose(logspm.noise_spec([50, 60, 3], 0.1), np.diag([25.0, 36.0, 0.09]))
    H = model.observation(R.mean(axis=1))
    assert H.shape == (1, 3) and H[0, 2] == model.A_W * R[7].mean()


def test_closed_form_examples():
    M, lam = logspm.closed_form_eigen(-1.0, -2.0, -3.0, 0.0, 0.0, 0.0)
    assert np.array_equal(M, np.eye(3))
    M, _ = logspm.closed_form_eigen(-1.0, -2.0, -3.0, 0.5, 0.2, 0.1)
    assert M[1, 0] == pytest.approx(0.5) and M[2, 1] == pytest.approx(0.2) and M[2, 0] == pytest.approx(0.1)


def test_observation_and_noise_examples():
    p = params(k_r=1.0)
    H = logspm.observation(p)
    assert np.array_equal(H, [[0.0, 0.0, 1.0]]) and np.linalg.matrix_rank(H) == 1
    p2 = params(k_r=2.0, A_W=3.0)
    assert (logspm.observation(p2) @ [0.0, 0.0, 5.0])[0] == 30.0
    assert np.allclose(logspm.noise_spec([1.0, 1.0, 1.0], 0.1), 0.01 * np.eye(3))
    assert np.allclose(logspm.noise_spec([2.0, 3.0, 1.0], 0.2), 4 * logspm.noise_spec([2.0, 3.0, 1.0], 0.1))


def test_default_metric_examples():
    from dynemu.coupling import pairwise_rho
    R = logspm._ranges_array(logspm.default_config()["ranges"])
    ms = logspm.default_metric(R)
    lo = R[:, 0].copy()
    hi = lo.copy()
    hi[3] = R[3, 1]
    assert pairwise_rho(lo, lo, ms)[0, 0] == 0.0
    assert pairwise_rho(lo, hi, ms)[0, 0] == pytest.approx(1.0)
    assert ms.flavor == "squared_euclidean" and ms.coords == tuple(range(8))
