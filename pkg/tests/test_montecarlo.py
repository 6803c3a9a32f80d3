import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formflow.grid import Metric, builtin_flow, circle, line
from formflow.montecarlo import NoisePath, SimulationError, compare_density, simulate


def test_same_seed_same_ensemble():
    g = line(64, -5, 5)
    f = builtin_flow("ou", g)
    a = simulate(f, Metric.isotropic(1.0, 1), [1.0], 50, 0.01, 20000, seed=4)
    b = simulate(f, Metric.isotropic(1.0, 1), [1.0], 50, 0.01, 20000, seed=4)
    c = simulate(f, Metric.isotropic(1.0, 1), [1.0], 50, 0.01, 20000, seed=5)
    np.testing.assert_array_equal(a.final, b.final)
    assert not np.array_equal(a.final, c.final)


def test_thread_count_does_not_change_results():
    g = circle(32)
    f = builtin_flow("circle-drive", g, v=0.5, b=0.5)
    kw = dict(init=[1.0], steps=20, dt=0.01, samples=30000, seed=9)
    a = simulate(f, Metric.isotropic(0.5, 1), threads=1, **kw)
    b = simulate(f, Metric.isotropic(0.5, 1), threads=3, **kw)
    np.testing.assert_array_equal(a.final, b.final)
    np.testing.assert_array_equal(a.counts, b.counts)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 200), st.floats(1e-4, 0.1), st.integers(0, 2**63 - 1))
def test_refined_path_sums_to_coarse(steps, dt, seed):
    p = NoisePath.draw(steps, dt, 1, seed)
    r = p.refine()
    assert r.steps == 2 * steps and r.dt == pytest.approx(dt / 2)
    np.testing.assert_allclose(r.increments[0::2] + r.increments[1::2], p.increments, atol=1e-14)


def test_noise_moments():
    assert NoisePath.draw(200000, 0.01, 1, 3).moment_check()


def test_ou_mean_and_variance_relax():
    # dφ = -φ dt + dW with Θ = 1: mean e^{-t}, variance (1 - e^{-2t}) / 2
    g = line(128, -6, 6)
    ens = simulate(builtin_flow("ou", g), Metric.isotropic(1.0, 1), [2.0], 100, 0.005, 50000, seed=1)
    m = ens.moments()
    t = 0.5
    assert abs(m["mean"][0] - 2.0 * math.exp(-t)) < 5 * m["mean_stderr"][0] + 5e-3
    assert m["variance"][0] == pytest.approx((1 - math.exp(-2 * t)) / 2, rel=0.03)


def test_density_matches_stationary_histogram_scale():
    g = line(64, -5, 5)
    ens = simulate(builtin_flow("ou", g), Metric.isotropic(1.0, 1), [0.0], 10, 0.01, 1000, seed=0)
    assert ens.density().mass() == pytest.approx(1.0, abs=1e-12)
    assert compare_density(ens, ens.density()) == pytest.approx(0.0, abs=1e-12)


def test_stability_bound():
    g = line(64, -5, 5)
    with pytest.raises(SimulationError):
        simulate(builtin_flow("ou", g, omega0=50.0), Metric.isotropic(1.0, 1), [0.0], 10, 0.01, 10)
