import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasihom.errors import DegenerateRegionError, InvalidArgumentError, ResolutionError
from quasihom.mesh import build_mesh, interpolate
from quasihom.regularity import (caccioppoli_ratio, excess, excess_decay_check,
                                 gradient_integrability, lipschitz_profile, oscillation)

C = (0.5, 0.5)
G_COEF = 1 + 1 / (8 * np.sqrt(3))


@pytest.fixture(scope="module")
def mesh():
    return build_mesh(256)


@pytest.fixture(scope="module")
def quad(mesh):
    return interpolate(mesh, lambda x, y: ((x - 0.5) ** 2 + (y - 0.5) ** 2) / 4)


def test_affine_excess(mesh):
    v = interpolate(mesh, lambda x, y: 3 * x - y + 5)
    res = excess(mesh, v, None, C, 0.2)
    assert res.G <= 1e-12
    np.testing.assert_allclose(res.M_opt, [3, -1], atol=1e-10)
    assert res.c_opt == pytest.approx(3 * 0.5 - 0.5 + 5)


def test_quadratic_excess_oracle(mesh, quad):
    res = excess(mesh, quad, np.full(mesh.n_nodes, -1.0), C, 0.1)
    assert res.G == pytest.approx(0.1 * G_COEF, abs=1e-3)


def test_zero_field(mesh):
    assert excess(mesh, np.zeros(mesh.n_nodes), None, C, 0.1).G == 0


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_affine_invariance(a, b, c):
    mesh = _M64
    v = _V64
    w = v + a * mesh.nodes[:, 0] + b * mesh.nodes[:, 1] + c
    assert excess(mesh, w, None, C, 0.2).G == pytest.approx(excess(mesh, v, None, C, 0.2).G,
                                                              abs=1e-12)


_M64 = build_mesh(64)
_V64 = interpolate(_M64, lambda x, y: np.sin(3 * x) * np.cos(2 * y))


@given(st.floats(-5, 5))
def test_homogeneity(lam):
    g1 = excess(_M64, lam * _V64, None, C, 0.2).G
    assert g1 == pytest.approx(abs(lam) * excess(_M64, _V64, None, C, 0.2).G, rel=1e-10, abs=1e-14)
    assert g1 >= 0


def test_oscillation_ge_excess(mesh, quad):
    v = quad + mesh.nodes[:, 0]
    assert oscillation(mesh, v, None, C, 0.1).G >= excess(mesh, v, None, C, 0.1).G


def test_ball_errors(mesh):
    with pytest.raises(InvalidArgumentError):
        excess(mesh, np.zeros(mesh.n_nodes), None, (0.1, 0.5), 0.2)
    with pytest.raises(InvalidArgumentError):
        excess(mesh, np.zeros(mesh.n_nodes), None, C, 0.1, p=2)
    with pytest.raises(DegenerateRegionError):
        excess(mesh, np.zeros(mesh.n_nodes), None, (0.5 + 1 / 512, 0.5 + 1 / 1024), 1e-4)


def test_lipschitz_profile_affine_and_zero(mesh):
    v = interpolate(mesh, lambda x, y: 3 * x + 4 * y)
    prof = lipschitz_profile(mesh, v, None, C, [0.05, 0.1, 0.2])
    np.testing.assert_allclose([a for _, a in prof], 5.0, rtol=1e-12)
    prof0 = lipschitz_profile(mesh, np.zeros(mesh.n_nodes), None, C, [0.1, 0.2])
    assert all(a == 0 for _, a in prof0)
    shifted = lipschitz_profile(mesh, v + 7.0, None, C, [0.05, 0.1, 0.2])
    np.testing.assert_allclose(shifted, prof, rtol=1e-12)
    with pytest.raises(InvalidArgumentError):
        lipschitz_profile(mesh, v, None, C, [0.2, 0.1])


def test_integrability(mesh):
    v = interpolate(mesh, lambda x, y: 2 * x - y)
    for p in (3, 4, 8):
        np.testing.assert_allclose([q for _, q in gradient_integrability(mesh, v, p, C, [0.05, 0.1])], 1.0, rtol=1e-12)
    assert gradient_integrability(mesh, np.zeros(mesh.n_nodes), 4, C, [0.1]) == [(0.1, 0.0)]
    with pytest.raises(InvalidArgumentError):
        gradient_integrability(mesh, v, 2, C, [0.1])
    with pytest.raises(InvalidArgumentError):
        gradient_integrability(mesh, v, 4, C, [0.3])


@pytest.fixture(scope="module")
def fine():
    m = build_mesh(512)
    return m, interpolate(m, lambda x, y: ((x - 0.5) ** 2 + (y - 0.5) ** 2) / 4)


def test_decay_quadratic(fine):
    mesh, quad = fine
    table = excess_decay_check(mesh, quad, np.full(mesh.n_nodes, -1.0), C, [0.2, 0.4],
                               [0.25, 0.125])
    for r, t, q in table.rows:
        assert q == pytest.approx(t, abs=1e-2)
    assert table.decay_witnessed and table.witnesses == [0.25, 0.125]


def test_decay_affine_is_degenerate(fine):
    mesh, _ = fine
    v = interpolate(mesh, lambda x, y: x - 2 * y)
    table = excess_decay_check(mesh, v, np.zeros(mesh.n_nodes), C, [0.2, 0.4], [0.25])
    assert table.degenerate and table.decay_witnessed
    assert table.ratio(0.2, 0.25) == 0.0


def test_decay_resolution(fine):
    mesh, quad = fine
    with pytest.raises(ResolutionError):
        excess_decay_check(mesh, quad, None, C, [0.05], [0.25])
    table = excess_decay_check(mesh, quad, None, C, [0.1, 0.2], [0.25, 0.125])
    assert np.isnan(table.ratio(0.1, 0.125))
    assert 0.125 not in table.witnesses


def test_probes_do_not_modify_inputs(mesh, quad):
    before = quad.copy()
    excess(mesh, quad, None, C, 0.1)
    lipschitz_profile(mesh, quad, None, C, [0.1])
    gradient_integrability(mesh, quad, 4, C, [0.1])
    assert np.array_equal(quad, before)


def test_caccioppoli_harmonic(mesh):
    v = interpolate(mesh, lambda x, y: np.exp(np.pi * x) * np.sin(np.pi * y))
    assert 0 < caccioppoli_ratio(mesh, v, C, 0.1) <= 100
    assert caccioppoli_ratio(mesh, np.ones(mesh.n_nodes), C, 0.1) == 0.0
