import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formflow import nicolai as nic
from formflow.grid import Metric, builtin_flow, circle, line
from formflow.montecarlo import NoisePath


def test_zero_noise_double_well_has_three_loops():
    g = line(64, -3, 3)
    f = builtin_flow("double-well", g)
    sols = nic.find_solutions(f, 1.0, NoisePath.zero(500, 0.002), 2000, (-2.5, 2.5))
    starts = [s.start for s in sols]
    np.testing.assert_allclose(starts, [-1.0, 0.0, 1.0], atol=1e-9)
    assert [s.sign for s in sols] == [1, -1, 1]
    assert nic.winding_number(sols, f, 0.002) == 1


def test_zero_noise_ou_single_attracting_loop():
    g = line(64, -5, 5)
    f = builtin_flow("ou", g)
    sols = nic.find_solutions(f, 1.0, NoisePath.zero(500, 0.002), 2000, (-4, 4))
    assert len(sols) == 1 and sols[0].sign == 1 and abs(sols[0].start) < 1e-12


def test_noisy_ou_winding_is_one():
    g = line(64, -8, 8)
    f = builtin_flow("ou", g)
    for seed in range(3):
        r = nic.analyse_draw(f, 1.0, 500, 0.002, seed, resolution=2000, scan_range=(-8, 8))
        assert r.winding == 1 and r.winding_half_step == 1


def test_uniform_drive_has_no_loops():
    g = circle(32)
    f = builtin_flow("circle-drive", g, v=1.0, b=0.0)
    r = nic.analyse_draw(f, 0.5, 500, 0.002, 3, resolution=2000)
    assert r.winding == 0


def test_vielbein_ratio():
    g = line(64, -3, 3)
    f = builtin_flow("double-well", g)
    theta = 0.3
    noise = NoisePath.draw(200, 0.002, 1, 7)
    sols = nic.find_solutions(f, theta, noise, 2000, (-2.5, 2.5))
    chk = nic.vielbein_sign_check(f, Metric.isotropic(theta, 1), sols[0], 0.002)
    assert chk.ok
    assert chk.log_ratio == pytest.approx(200 * math.log(1 / math.sqrt(theta)), rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 30), st.integers(0, 2**32 - 1))
def test_sparse_slogdet_matches_dense(n, seed):
    rng = np.random.default_rng(seed)
    import scipy.sparse as sp

    M = rng.standard_normal((n, n)) + n * np.eye(n) * rng.choice([-1, 1], n)
    s, l = nic.slogdet_sparse(sp.csc_matrix(M))
    s2, l2 = np.linalg.slogdet(M)
    assert s == int(s2) and l == pytest.approx(l2, rel=1e-10, abs=1e-10)


def test_monodromy_sign_matches_determinant():
    g = line(64, -3, 3)
    f = builtin_flow("double-well", g)
    noise = NoisePath.draw(300, 0.002, 1, 11)
    sols = nic.find_solutions(f, 0.5, noise, 2000, (-2.5, 2.5))
    assert sols
    for s in sols:
        assert nic.jacobian_sign(f, s, 0.002) == s.sign
