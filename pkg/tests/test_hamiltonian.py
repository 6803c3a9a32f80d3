import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formflow.forms import FormField
from formflow.grid import Metric, builtin_flow, circle, line, torus
from formflow.hamiltonian import (StepRejected, build_hamiltonian, evolve_exact, evolve_logged,
                                  stationary_density)


def _gauss(g, x0, w):
    f = FormField.from_components(g, 1, {(0,): lambda x: np.exp(-((x - x0) ** 2) / (2 * w * w))})
    return f * (1.0 / f.mass())


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-2.0, 2.0), st.floats(0.0, 1.5), st.floats(-1.0, 1.0))
def test_torus_intertwining(theta, v, s, w):
    g = torus(8)
    H = build_hamiltonian(g, Metric.isotropic(theta, 2), builtin_flow("torus-shear", g, v=v, s=s, w=w))
    assert H.intertwining_residual() <= 1e-12
    assert H.nilpotency_residual() == 0.0


def test_zero_flow_is_half_laplacian():
    g = circle(16)
    H = build_hamiltonian(g, Metric.isotropic(2.0, 1), builtin_flow("zero", g))
    h = g.spacing[0]
    ev = np.sort(np.linalg.eigvalsh(H[0].toarray()))
    k = np.arange(16)
    np.testing.assert_allclose(ev, np.sort(2 * 2.0 / h**2 * np.sin(np.pi * k / 16) ** 2), atol=1e-9)


def test_top_sector_conserves_mass():
    g = line(128, -6, 6)
    H = build_hamiltonian(g, Metric.isotropic(1.0, 1), builtin_flow("ou", g))
    ones = np.full(g.num_active(1), g.cell_volume)
    assert np.abs(ones @ H[1]).max() < 1e-10 * abs(H[1]).max()


def test_ou_converges_to_gaussian():
    g = line(256, -6, 6)
    H = build_hamiltonian(g, Metric.isotropic(1.0, 1), builtin_flow("ou", g))
    z = stationary_density(H)
    x = g.axes[0].edge_coords()
    ref = np.exp(-x * x) / np.sqrt(np.pi)  # variance Θ/2
    assert np.abs(z.component((0,)) - ref).max() < 1e-3


def test_midpoint_matches_exact_action():
    g = line(128, -6, 6)
    H = build_hamiltonian(g, Metric.isotropic(1.0, 1), builtin_flow("ou", g))
    psi = _gauss(g, 1.0, 0.5)
    r = evolve_logged(H, psi, 1.0, 0.005)
    ex = evolve_exact(H, psi, 1.0)
    assert np.abs(r.field.values - ex.values).max() < 1e-4 * np.abs(ex.values).max()
    assert np.abs(r.mass - r.mass[0]).max() < 1e-12


def test_coarse_step_is_rejected():
    g = line(128, -6, 6)
    H = build_hamiltonian(g, Metric.isotropic(1.0, 1), builtin_flow("ou", g))
    with pytest.raises(StepRejected):
        evolve_logged(H, _gauss(g, 1.0, 0.2), 1.0, 0.5, rtol=1e-8)
