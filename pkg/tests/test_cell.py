import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from quasihom.cell import (EffectiveTable, build_effective_table, corrector_energy,
                           divergence_residual, effective_flux, eval_effective, flux_corrector,
                           load_tables, reconstruction_mismatch, reconstruction_residual,
                           save_tables, solve_corrector, table_structure)
from quasihom.coefficients import BUILTIN_MODELS, IDENTITY, LAMINATE, NONLINEAR, SMOOTH2D
from quasihom.errors import InvalidArgumentError, RangeError
from quasihom.mesh import gradient, norm

SQRT3 = math.sqrt(3.0)


@pytest.fixture(scope="module")
def lam_e1():
    return solve_corrector(LAMINATE, [1.0, 0.0], 256)


@pytest.fixture(scope="module")
def lam_e2():
    return solve_corrector(LAMINATE, [0.0, 1.0], 256)


@pytest.fixture(scope="module")
def lam_table():
    return build_effective_table(LAMINATE, 4.0, 9, 32)


@pytest.fixture(scope="module")
def nl_table():
    return build_effective_table(NONLINEAR, 2.0, 5, 32)


def test_identity_corrector_vanishes():
    sol = solve_corrector(IDENTITY, [2.0, -1.0], 32)
    assert np.all(sol.N == 0) and np.all(np.abs(sol.b) <= 1e-14)
    np.testing.assert_allclose(effective_flux(sol), [2.0, -1.0], atol=1e-14)
    fc = flux_corrector(sol)
    assert np.all(fc.f1 == 0) and np.all(fc.E12 == 0)


@pytest.mark.parametrize("name", sorted(BUILTIN_MODELS))
def test_zero_slope_zero_corrector(name):
    sol = solve_corrector(BUILTIN_MODELS[name], [0.0, 0.0], 16)
    assert np.all(sol.N == 0) and np.all(sol.A_eff == 0)


def test_laminate_e1(lam_e1):
    np.testing.assert_allclose(lam_e1.A_eff, [SQRT3, 0.0], atol=1e-3)
    _, g2 = corrector_energy(lam_e1)
    assert abs(g2 - (2 / SQRT3 - 1)) <= 1e-3
    # d1 N = sqrt(3)/a - 1 pointwise
    a = 2 + np.sin(2 * np.pi * lam_e1.mesh.barycenters[:, 0])
    assert np.max(np.abs(lam_e1.grad_N[:, 0] - (SQRT3 / a - 1))) <= 1e-2
    # aligned laminate: b vanishes up to discretization
    assert norm(lam_e1.mesh, lam_e1.b) <= 1e-2


def test_laminate_e2(lam_e2):
    np.testing.assert_allclose(lam_e2.A_eff, [0.0, 2.0], atol=1e-4)
    assert np.all(lam_e2.N == 0)
    y1 = lam_e2.mesh.barycenters[:, 0]
    np.testing.assert_allclose(lam_e2.b[:, 1], np.sin(2 * np.pi * y1), atol=1e-12)
    fc = flux_corrector(lam_e2)
    assert abs(norm(lam_e2.mesh, fc.E12) - 1 / (2 * np.pi * np.sqrt(2))) <= 1e-3
    x = lam_e2.mesh.nodes[:, 0]
    assert np.max(np.abs(fc.E12 + np.cos(2 * np.pi * x) / (2 * np.pi))) <= 1e-3
    assert fc.E(2, 1) is not fc.E12 and np.array_equal(fc.E(2, 1), -fc.E12)
    assert np.all(fc.E(1, 1) == 0)


@pytest.mark.parametrize("model,xi", [(SMOOTH2D, (1.0, 0.5)), (NONLINEAR, (-1.5, 2.0)),
                                      (NONLINEAR, (0.3, 0.1))])
def test_corrector_invariants(model, xi):
    sol = solve_corrector(model, xi, 64)
    assert abs(sol.N.mean()) <= 1e-12
    n2, g2 = corrector_energy(sol)
    assert n2 + g2 <= 10 * np.dot(xi, xi)
    assert np.max(np.abs(sol.b.mean(axis=0))) <= 1e-10 * np.linalg.norm(xi)
    assert divergence_residual(sol) <= 1e-8
    fc = flux_corrector(sol)
    assert reconstruction_residual(sol, fc) <= 1e-6
    assert reconstruction_mismatch(sol, fc) < 0.5
    assert norm(sol.mesh, gradient(sol.mesh, fc.E12)) <= 10 * np.linalg.norm(xi)


def test_corrector_lipschitz_in_xi():
    a = solve_corrector(NONLINEAR, [1.0, 0.5], 32)
    b = solve_corrector(NONLINEAR, [1.25, 0.5], 32)
    assert norm(a.mesh, a.grad_N - b.grad_N) <= 10 * 0.25


def test_corrector_mesh_precondition():
    for n in (8, 33):
        with pytest.raises(InvalidArgumentError):
            solve_corrector(LAMINATE, [1.0, 0.0], n)


def test_identity_table():
    eff, ctab = build_effective_table(IDENTITY, 2.0, 3, 16)
    np.testing.assert_allclose(eff.A_eff, eff.nodes, atol=1e-14)
    np.testing.assert_allclose(eval_effective(eff, [0.3, 0.7]), [0.3, 0.7], atol=1e-14)
    assert np.all(ctab.N == 0)


def test_laminate_table_is_linear(lam_table):
    eff, _ = lam_table
    np.testing.assert_allclose(eval_effective(eff, [0.5, 0.5]), [SQRT3 / 2, 1.0], atol=1e-3)
    np.testing.assert_allclose(eval_effective(eff, [1.0, 1.0]), [SQRT3, 2.0], atol=1e-3)
    assert np.all(eval_effective(eff, [0.0, 0.0]) == 0)


def test_table_nodes_bit_exact(lam_table):
    eff, _ = lam_table
    k = 3 + 9 * 5
    assert np.array_equal(eval_effective(eff, eff.nodes[k]), eff.A_eff[k])


def test_table_never_extrapolates(lam_table):
    eff, ctab = lam_table
    with pytest.raises(RangeError):
        eval_effective(eff, [4.0001, 0.0])
    with pytest.raises(RangeError):
        ctab.evaluate([0.1, 0.1], [0.0, -5.0])


@pytest.mark.parametrize("fixture", ["lam_table", "nl_table"])
def test_table_structure(fixture, request):
    eff, _ = request.getfixturevalue(fixture)
    model = BUILTIN_MODELS[eff.model]
    margin, lip = table_structure(eff, 200, seed=0)
    assert margin >= model.mu0 - 1e-3
    assert lip <= model.mu2 + 1e-3
    assert eff.mu0 >= model.mu0 - 1e-3 and eff.lipschitz <= model.mu2 + 1e-3


@given(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9), st.floats(-1.9, 1.9), st.floats(-1.9, 1.9))
def test_interpolated_table_is_monotone(a, b, c, d):
    # bilinear interpolant inherits the certified constants
    eff = _NL_SMALL
    x, y = np.array([a, b]), np.array([c, d])
    dx = x - y
    if dx @ dx < 1e-12:
        return
    dA = eval_effective(eff, x) - eval_effective(eff, y)
    assert dA @ dx >= (eff.mu0 - 1e-12) * (dx @ dx)
    assert np.linalg.norm(dA) <= (eff.lipschitz + 1e-12) * np.linalg.norm(dx)


_NL_SMALL = build_effective_table(NONLINEAR, 2.0, 5, 16)[0]


def test_corrector_table_interpolates_fields(lam_table):
    eff, ctab = lam_table
    sol = solve_corrector(LAMINATE, [1.0, 0.0], 32)
    y = sol.mesh.nodes
    np.testing.assert_allclose(ctab.evaluate(y, np.tile([1.0, 0.0], (len(y), 1))), sol.N,
                               atol=1e-12)
    # linear model: N is linear in xi, so midpoints interpolate exactly
    half = ctab.evaluate(y, np.tile([0.5, 0.0], (len(y), 1)))
    np.testing.assert_allclose(half, 0.5 * sol.N, atol=1e-9)
    np.testing.assert_array_equal(ctab.evaluate(y + 3.0, np.tile([1.0, 0.0], (len(y), 1))),
                                  ctab.evaluate(y, np.tile([1.0, 0.0], (len(y), 1))))


def test_table_roundtrip(tmp_path, lam_table):
    eff, ctab = lam_table
    save_tables(tmp_path, eff, ctab)
    eff2, ctab2 = load_tables(tmp_path)
    assert np.array_equal(eff2.A_eff, eff.A_eff)
    assert np.array_equal(ctab2.N, ctab.N)
    assert eff2.mu0 == eff.mu0
    doc = EffectiveTable.from_dict(eff.to_dict())
    assert (doc.g_max, doc.m, doc.n, doc.model) == (4.0, 9, 32, "laminate")


def test_table_parameters():
    with pytest.raises(InvalidArgumentError):
        build_effective_table(LAMINATE, 4.0, 4, 16)
    with pytest.raises(InvalidArgumentError):
        build_effective_table(LAMINATE, -1.0, 3, 16)


def test_parallel_table_matches_serial():
    a = build_effective_table(NONLINEAR, 1.0, 3, 16)[0]
    b = build_effective_table(NONLINEAR, 1.0, 3, 16, jobs=2)[0]
    assert np.array_equal(a.A_eff, b.A_eff)
