import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formflow.forms import (FormError, FormField, codifferential, ext_derivative, inner,
                            pairing, wedge)
from formflow.grid import GridError, Metric, build_grid, builtin_flow, circle, line, torus


def test_cell_counts_and_euler_characteristic():
    t = torus(8, 10)
    assert [t.num_cells(n) for n in range(3)] == [80, 160, 80]
    assert t.euler_characteristic() == 0
    assert circle(16).euler_characteristic() == 0
    assert line(16, -1, 1).euler_characteristic() == 1


def test_periodic_extent_defaults_to_two_pi():
    g = build_grid({"axes": [{"topology": "circle", "nodes": 16}]})
    assert g.axes[0].extent == pytest.approx(2 * math.pi)


@pytest.mark.parametrize("spec", [
    {"axes": []},
    {"axes": [{"topology": "sphere", "nodes": 16}]},
    {"axes": [{"topology": "line", "nodes": 4, "extent": [0, 1]}]},
    {"axes": [{"topology": "line", "nodes": 16, "extent": [1, 0]}]},
    {"axes": [{"topology": "line", "nodes": 16}]},
])
def test_bad_grid_specs(spec):
    with pytest.raises(GridError):
        build_grid(spec)


def test_circle_coboundary_is_forward_difference():
    g = circle(12)
    d = ext_derivative(g)[0].toarray()
    h = g.spacing[0]
    expected = (np.roll(np.eye(12), 1, axis=1) - np.eye(12)) / h
    np.testing.assert_allclose(d, expected, atol=1e-12)


def test_circle_laplacian_spectrum():
    # d† d on a circle is Θ times the circulant second difference
    N, theta = 32, 0.7
    g = circle(N)
    d = ext_derivative(g)[0]
    dd = codifferential(g, Metric.isotropic(theta, 1))[1]
    L = (dd @ d).toarray()
    h = g.spacing[0]
    k = np.arange(N)
    expected = np.sort(theta * 4 / h**2 * np.sin(np.pi * k / N) ** 2)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(L)), expected, atol=1e-9 * expected.max())


def test_codifferential_is_metric_adjoint():
    g = torus(8)
    m = Metric.isotropic(2.5, 2)
    rng = np.random.default_rng(0)
    d, dd = ext_derivative(g), codifferential(g, m)
    for n in range(2):
        a = FormField.from_active(g, n, rng.standard_normal(g.num_active(n)))
        b = FormField.from_active(g, n + 1, rng.standard_normal(g.num_active(n + 1)))
        assert inner(d[n](a), b, m) == pytest.approx(inner(a, dd[n + 1](b), m), rel=1e-12)


@st.composite
def grids(draw):
    axes = []
    for _ in range(draw(st.integers(1, 2))):
        topo = draw(st.sampled_from(["periodic", "line"]))
        nodes = draw(st.integers(8, 14))
        ext = draw(st.floats(0.5, 10.0))
        axes.append({"topology": topo, "nodes": nodes, "extent": [-ext / 2, ext / 2]})
    return build_grid({"axes": axes})


@settings(max_examples=40, deadline=None)
@given(grids(), st.integers(0, 2**32 - 1))
def test_d_squared_vanishes(g, seed):
    d = ext_derivative(g, full=True)
    rng = np.random.default_rng(seed)
    for n in range(g.dim - 1):
        f = rng.standard_normal(g.num_cells(n))
        once = d[n] @ f
        twice = d[n + 1] @ once
        assert np.abs(twice).max() <= 1e-12 * max(np.abs(once).max(), 1.0)


def test_wedge_of_coordinate_forms():
    g = torus(8)
    dx = FormField.from_components(g, 1, {(0,): 1.0})
    dy = FormField.from_components(g, 1, {(1,): 1.0})
    np.testing.assert_allclose(wedge(dx, dy).component((0, 1)), 1.0)
    np.testing.assert_allclose(wedge(dy, dx).component((0, 1)), -1.0)
    assert pairing(dx, dy) == pytest.approx((2 * math.pi) ** 2)


def test_form_shape_is_validated():
    g = circle(8)
    with pytest.raises(FormError):
        FormField(g, 1, np.zeros(3))
    with pytest.raises(FormError):
        FormField(g, 2, np.zeros(8))
    with pytest.raises(FormError):
        FormField(g, 0, np.full(8, np.nan))


def test_form_csv_roundtrip(tmp_path):
    g = torus(8)
    f = FormField.from_components(g, 1, {(0,): lambda x, y: np.sin(x), (1,): lambda x, y: np.cos(y)})
    f.save(tmp_path / "f")
    back = FormField.load(tmp_path / "f")
    np.testing.assert_array_equal(back.values, f.values)
    assert back.degree == 1 and back.grid.to_spec() == g.to_spec()


def test_catalog_parameter_range():
    g = line(16, -1, 1)
    with pytest.raises(GridError):
        builtin_flow("ou", g, omega0=-1.0)
    with pytest.raises(GridError):
        builtin_flow("ou", g, speed=1.0)
    with pytest.raises(GridError):
        builtin_flow("torus-shear", g)
