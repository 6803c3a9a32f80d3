import math

import numpy as np
import pytest

from formflow.cpd import (ConditioningError, cohomology_pairing, default_chains, evolve_and_check,
                          factorize, independence_residual, integrate_box, integrate_boundary,
                          product_density, stokes_residual)
from formflow.forms import FormField, wedge
from formflow.grid import Metric, builtin_flow, line, square, torus
from formflow.hamiltonian import build_hamiltonian


def _gauss(c, w):
    return lambda x: np.exp(-((x - c) ** 2) / (2 * w * w))


def test_product_density_factorizes_exactly():
    g = square(20, -4, 4)
    p = product_density(g, [_gauss(0.3, 1.0), _gauss(-0.5, 0.7)])
    for known in ([0], [1]):
        b = factorize(p, known)
        assert b.residual() < 1e-13
        assert independence_residual(b) < 1e-12
        np.testing.assert_allclose(wedge(b.conditional, b.marginal).values, p.values, atol=1e-15)


def test_correlated_density_residual_is_discretization_error():
    def run(N):
        g = square(N, -4, 4)
        p = FormField.from_components(g, 2, {(0, 1): lambda x, y: np.exp(-(x * x + y * y + x * y))})
        return factorize(p, [1]).residual()
    r16, r32 = run(16), run(32)
    assert r32 < r16 / 3  # second order in h


def test_vanishing_marginal_is_rejected():
    g = square(16, -4, 4)
    p = product_density(g, [_gauss(0, 1), lambda y: np.where(y > 0, 1.0, 0.0)])
    with pytest.raises(ConditioningError):
        factorize(p, [1])


def test_stokes_on_random_boxes():
    g = torus(10)
    rng = np.random.default_rng(2)
    psi = FormField.from_active(g, 1, rng.standard_normal(g.num_active(1)))
    for box in default_chains(g, 8, seed=1):
        assert stokes_residual(psi, box) < 1e-10


def test_box_integral_of_constant():
    g = square(11, 0, 1)
    one = FormField.from_components(g, 2, {(0, 1): 1.0})
    assert integrate_box(one, ((0, 10), (0, 10))).real == pytest.approx(1.0)
    assert integrate_box(one, ((0, 5), (0, 10))).real == pytest.approx(0.5)


def test_cohomology_pairing_on_torus():
    pr = cohomology_pairing(torus(8))
    assert pr[((0,), (1,))] == pytest.approx((2 * math.pi) ** 2)
    assert pr[((1,), (0,))] == pytest.approx(-(2 * math.pi) ** 2)


def test_ou_product_evolution():
    g = square(16, -4, 4)
    m = Metric.isotropic(1.0, 2)
    H = build_hamiltonian(g, m, builtin_flow("ou", g))
    Hf = {k: build_hamiltonian(g.axis_grid(k), Metric.isotropic(1.0, 1), builtin_flow("ou", g.axis_grid(k)))
          for k in range(2)}
    p = product_density(g, [_gauss(0.5, 1.0), _gauss(-0.3, 0.8)])
    probe = FormField.from_components(g, 1, {(0,): lambda x, y: np.exp(-x * x - y * y),
                                             (1,): lambda x, y: x * np.exp(-x * x - y * y)})
    rep = evolve_and_check(factorize(p, [1]), H, Hf, 0.5, probe=probe)
    assert rep.passed, rep.failures()
