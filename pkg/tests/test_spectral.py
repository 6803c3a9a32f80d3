import numpy as np
import pytest

from formflow import observables as obs
from formflow.grid import Metric, builtin_flow, circle, line, square, torus
from formflow.hamiltonian import build_hamiltonian
from formflow.spectral import (ARPACK_TOL, SpectralError, _numerical_rank, breaking_diagnosis,
                               classify, correlate, eigensolve, expectation_value, pairing_residuals,
                               partition_function, witten_index)


def _report(g, theta, name, mode="dense", **params):
    H = build_hamiltonian(g, Metric.isotropic(theta, g.dim), builtin_flow(name, g, **params))
    return classify(eigensolve(H, mode=mode))


def test_ou_levels_are_integers():
    rep = _report(line(256, -6, 6), 1.0, "ou")
    for n in (0, 1):
        ev = np.sort(rep.sectors[n].values.real)[:4]
        expected = np.arange(4) + (1 - n)  # no zero mode in sector 0 on the line
        np.testing.assert_allclose(ev, expected, atol=2e-3)


def test_ou_index_and_theta_state():
    rep = _report(line(128, -6, 6), 1.0, "ou")
    assert rep.theta_counts() == {0: 0, 1: 1}
    for T in (0.5, 2.0):
        wi = witten_index(rep, T)
        assert wi.count == -1 and wi.agreement < 1e-6


def test_circle_index_vanishes():
    rep = _report(circle(32), 0.5, "circle-drive", v=0.4, b=0.3)
    assert witten_index(rep, 1.0).count == 0
    assert max(pairing_residuals(rep)) < 1e-8


def test_hodge_zero_modes_torus():
    rep = _report(torus(8), 1.0, "zero")
    assert rep.zero_mode_counts() == {0: 1, 1: 2, 2: 1}


def test_truncated_plane_with_near_degenerate_levels_classifies():
    rep = _report(square(24, -5, 5), 1.0, "ou")
    assert witten_index(rep, 1.0).count == 1


def test_iterative_matches_dense():
    g = line(128, -3, 3)
    dense = _report(g, 1.0, "double-well")
    it = _report(g, 1.0, "double-well", mode="iterative")
    for n in (0, 1):
        a = np.sort(dense.sectors[n].values.real)[:5]
        b = np.sort(it.sectors[n].values.real)[:5]
        np.testing.assert_allclose(a, b, atol=1e-8)
    assert partition_function(it, 1.0).lower_bound
    with pytest.raises(SpectralError):
        witten_index(it, 1.0)


def test_partition_function_is_t_monotone():
    rep = _report(line(128, -6, 6), 1.0, "ou")
    z = [partition_function(rep, T).value for T in (0.5, 1.0, 2.0, 4.0)]
    assert all(a > b for a, b in zip(z, z[1:]))


def test_position_expectation_at_zero_for_ou():
    g = line(128, -6, 6)
    rep = _report(g, 1.0, "ou")
    x = obs.multiply(g, lambda x: x, "x")
    assert abs(expectation_value(rep, x)) < 1e-8


def test_driven_circle_correlation_rate():
    g = circle(64)
    rep = _report(g, 0.5, "circle-drive", v=1.0, b=0.0)
    e = obs.multiply(g, lambda x: np.exp(1j * x), "exp(i phi)")
    c = correlate(rep, e, e, np.linspace(0.0, 4.0, 41))
    assert c.decay_rate == pytest.approx(0.25, rel=1e-2)
    assert abs(c.frequency) == pytest.approx(1.0, rel=1e-2)
    assert breaking_diagnosis(rep).flag == "UNBROKEN"


def test_numerical_rank_uses_jump():
    assert _numerical_rank(np.array([5.0, 3.0, 3e-5, 1e-5]), 9e-6) == 2
    assert _numerical_rank(np.array([5.0, 3.0, 1.0]), 1e-6) == 3
    assert _numerical_rank(np.array([1e-9, 1e-10]), 1e-6) == 0


def test_iterative_window_cutting_a_cluster_is_trimmed():
    # a wide double-well domain has a large degenerate level at 1/h^2
    g = line(128, -6, 6)
    rep = eigensolve(build_hamiltonian(g, Metric.isotropic(1.0, 1), builtin_flow("double-well", g)),
                     mode="iterative")
    s = rep.sectors[0]
    assert 0 < s.size <= 40 and not rep.complete
    assert s.biorthogonality_error() < 100 * ARPACK_TOL * s.condition.max()
