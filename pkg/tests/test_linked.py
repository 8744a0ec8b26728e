import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linkem.linked import (
    LinkedNetwork,
    Node,
    WiringError,
    composed_predict,
    kernel_moments,
    linked_moments,
    linked_predict,
    mc_propagate,
    projection_csv,
    psi_factor,
    xi_factor,
    zeta_factor,
)
from linkem.gp import correlation
from linkem.mvem import MvEmulator, predict_mv
from linkem.pipeline import GAS, assemble_network, fit_layer, query_point
from linkem.basis import Ensemble
from linkem.design import DesignMatrix
from oracles import psi_quad, xi_quad, zeta_quad

M_ = st.floats(-1, 1)
V_ = st.floats(1e-6, 1)
D_ = st.floats(0.05, 5)


def test_factors_single_example():
    m, v, d, w = 0.3, 0.04, 0.5, 0.7
    assert xi_factor(m, v, d, w) == pytest.approx(xi_quad(m, v, d, w), abs=1e-8)
    assert zeta_factor(m, v, d, w, -0.1) == pytest.approx(zeta_quad(m, v, d, w, -0.1), abs=1e-8)
    assert psi_factor(m, v, d, w) == pytest.approx(psi_quad(m, v, d, w), abs=1e-8)


def test_factors_degenerate_input():
    m, d, w, s = 0.3, 0.5, 0.7, -0.4
    r = lambda a: np.exp(-((m - a) / d) ** 2)  # noqa: E731
    assert xi_factor(m, 0.0, d, w) == r(w)
    assert zeta_factor(m, 0.0, d, w, s) == pytest.approx(r(w) * r(s), rel=1e-14)
    assert psi_factor(m, 0.0, d, w) == pytest.approx(m * r(w), rel=1e-14)


def test_diffuse_input_limit():
    assert xi_factor(0.2, 1e8, 0.5, 0.2) < 1e-4


@settings(max_examples=300, deadline=None)
@given(M_, V_, D_, M_)
def test_jensen(m, v, d, w):
    assert zeta_factor(m, v, d, w, w) >= xi_factor(m, v, d, w) ** 2 * (1 - 1e-12)


@pytest.fixture(scope="module")
def layer2(case):
    return list(case.energy.coeff_models)


def test_kernel_moments_zero_variance(layer2):
    model = layer2[0]
    u = np.array([0.4, 0.6, 0.3])
    km = kernel_moments(model, u, np.zeros(3))
    r = correlation(u[None], model.X, model.lengthscales)[0]
    np.testing.assert_allclose(km.xi, r, rtol=1e-14)
    np.testing.assert_allclose(km.zeta, np.outer(r, r), rtol=1e-13)
    np.testing.assert_array_equal(km.cov_r, 0.0)
    np.testing.assert_allclose(km.psi, r[:, None] * u, rtol=1e-14)


def test_kernel_moments_cov_consistent(layer2):
    model = layer2[1]
    km = kernel_moments(model, np.array([0.5, 0.5, 0.5]), np.array([0.02, 0.01, 0.0]))
    np.testing.assert_allclose(km.cov_r, km.zeta - np.outer(km.xi, km.xi), atol=1e-14)
    assert np.all(np.diag(km.cov_r) >= 0)


def test_collapse_to_plain_prediction(layer2):
    u = np.array([0.4, 0.6, 0.3])
    g = linked_moments(layer2, u, np.zeros(3))
    for i, model in enumerate(layer2):
        mean, var = model.predict_unit(u[None])
        assert g.means[i] == pytest.approx(mean[0], rel=1e-10)
        assert g.variances[i] == pytest.approx(var[0], rel=1e-10)


def test_small_variance_continuity(layer2):
    # at v = 1e-12 the excess over the plain variance is the delta-method term
    u, v = np.array([0.4, 0.6, 0.3]), 1e-12
    g = linked_moments(layer2, u, np.array([v, v, 0.0]))
    h = 1e-5
    for i, model in enumerate(layer2):
        mean, var = model.predict_unit(u[None])
        grad = [(model.predict_unit((u + h * e)[None])[0][0] - model.predict_unit((u - h * e)[None])[0][0]) / (2 * h)
                for e in np.eye(3)[:2]]
        delta = v * float(np.dot(grad, grad))
        assert g.means[i] == pytest.approx(mean[0], rel=1e-10)
        assert g.variances[i] - var[0] == pytest.approx(delta, rel=0.05, abs=1e-10 * var[0])


def test_linked_variance_grows_with_input_variance(layer2):
    u = np.array([0.4, 0.6, 0.3])
    vs = [linked_moments(layer2, u, np.array([v, v, 0.0])).variances for v in (0, 1e-8, 1e-6, 1e-4, 1e-2)]
    assert np.all(np.diff(np.array(vs), axis=0) > 0)


def test_layer1_training_point_matches_composition(case):
    # layer-1 predictive variance is zero at its own training inputs
    x1 = case.heat_train.design.points[3]
    _, lm, lv = linked_predict(case.net, x1, [0.2])
    _, cm, cv = composed_predict(case.net, x1, [0.2])
    np.testing.assert_allclose(lm, cm, rtol=1e-10)
    np.testing.assert_allclose(lv, cv, rtol=1e-6)
    mc = mc_propagate(case.net, x1, [0.2], n_samples=1000, seed=0)
    c1 = case.heat.coefficients(x1[None])[0][0]
    x2 = np.concatenate([c1, [0.2]])
    _, pm, _ = predict_mv(case.energy, x2)
    np.testing.assert_allclose(cm, pm, rtol=1e-12)
    assert mc.coeff_samples.shape == (1000, case.energy.q)


def test_composed_is_mean_composition(case):
    x1, z = query_point(case.cfg)
    c1 = case.heat.coefficients(x1[None])[0][0]
    _, pm, pv = predict_mv(case.energy, np.concatenate([c1, z]))
    _, cm, cv = composed_predict(case.net, x1, z)
    np.testing.assert_allclose(cm, pm, rtol=1e-12)
    np.testing.assert_allclose(cv, pv, rtol=1e-12)


def test_linked_dominates_composed(case):
    x1, z = query_point(case.cfg)
    _, _, lv = linked_predict(case.net, x1, z)
    _, _, cv = composed_predict(case.net, x1, z)
    assert np.all(lv >= cv)


def test_exchangeability(case):
    ens = case.energy_train
    perm = np.random.default_rng(5).permutation(ens.n)
    permuted = Ensemble(DesignMatrix(ens.design.points[perm], ens.design.domain),
                        ens.outputs[:, perm], ens.labels)
    energy2 = fit_layer(case.cfg, permuted, "energy", provenance=case.energy.provenance)
    net2 = assemble_network(case.heat, energy2)
    x1, z = query_point(case.cfg)
    a, b = linked_predict(case.net, x1, z), linked_predict(net2, x1, z)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-10)


def test_mc_standard_error_scaling(case):
    x1, z = query_point(case.cfg)
    a = mc_propagate(case.net, x1, z, n_samples=20_000, seed=1)
    b = mc_propagate(case.net, x1, z, n_samples=40_000, seed=2)
    ratio = b.mean_se / a.mean_se
    assert np.all(np.abs(ratio - 1 / np.sqrt(2)) <= 0.2 / np.sqrt(2))


def test_mc_deterministic_and_validated(case):
    x1, z = query_point(case.cfg)
    a = mc_propagate(case.net, x1, z, n_samples=500, seed=3)
    b = mc_propagate(case.net, x1, z, n_samples=500, seed=3)
    np.testing.assert_array_equal(a.mean, b.mean)
    with pytest.raises(ValueError):
        mc_propagate(case.net, x1, z, n_samples=10)


def test_wiring_validation(case):
    heat, energy = case.heat, case.energy
    with pytest.raises(WiringError):
        LinkedNetwork.two_layer(heat, energy, [0, 1])
    with pytest.raises(WiringError):
        LinkedNetwork.two_layer(heat, energy, [0, 0, GAS])
    with pytest.raises(WiringError):
        LinkedNetwork.two_layer(heat, energy, [0, 5, GAS])
    untagged = MvEmulator(energy.basis, energy.coeff_models, provenance="")
    with pytest.raises(WiringError):
        LinkedNetwork.two_layer(heat, untagged, [0, 1, GAS])
    n1 = Node("a", heat, [("global", nm) for nm in heat.domain.names])
    with pytest.raises(WiringError):
        LinkedNetwork((Node("b", energy, [("coeff", "a", 0), ("coeff", "a", 1), ("global", "a")]), n1))


def test_network_inputs(case):
    assert case.net.global_inputs == ["shift_T", "E", "H", GAS]
    x1, z = query_point(case.cfg)
    named = dict(zip(case.net.global_inputs, np.concatenate([x1, z])))
    np.testing.assert_array_equal(linked_predict(case.net, named)[1], linked_predict(case.net, x1, z)[1])
    with pytest.raises(WiringError):
        linked_predict(case.net, x1)


def test_network_json_round_trip(case):
    back = LinkedNetwork.from_json(case.net.to_json())
    assert back.checksum() == case.net.checksum()
    x1, z = query_point(case.cfg)
    np.testing.assert_allclose(linked_predict(back, x1, z)[2], linked_predict(case.net, x1, z)[2], rtol=1e-10)
    d = json.loads(case.net.to_json())
    assert [n["name"] for n in d["nodes"]] == ["layer1", "layer2"]


def test_projection_csv_shape():
    years = np.arange(2021, 2051)
    text = projection_csv(years, {"linked": (np.ones(30), np.ones(30)), "mc": (np.ones(30), np.ones(30), np.ones(30))})
    lines = text.splitlines()
    assert lines[0] == ("year,linked_mean,linked_sd,linked_lower_2sd,linked_upper_2sd,"
                        "mc_mean,mc_sd,mc_lower_2sd,mc_upper_2sd,mc_mean_se")
    assert len(lines) == 31
    assert lines[1].startswith("2021,1,1,-1,3,")
    assert "\r" not in text
