import json
import math

import numpy as np
import pytest

from quasihom.coefficients import BUILTIN_MODELS, IDENTITY, LAMINATE, NONLINEAR
from quasihom.errors import InvalidArgumentError, NonConvergenceError
from quasihom.mesh import (DIRICHLET, PERIODIC, build_mesh, gradient, interpolate, load_vector,
                           norm, weak_residual)
from quasihom.solver import (SolveOptions, SolveReport, contraction_factor, harmonic_extension,
                             poisson_solve, solve_monotone)


def _flux(model, mesh, scale=1.0):
    return model.bind(mesh.barycenters / scale)


def test_poisson_zero_rhs():
    for flavor in (PERIODIC, DIRICHLET):
        m = build_mesh(16, flavor)
        assert np.all(poisson_solve(m, np.zeros(m.free_nodes.size)) == 0.0)


def test_poisson_periodic_fourier_oracle():
    m = build_mesh(128, PERIODIC)
    x = m.nodes[:, 0]
    u = poisson_solve(m, load_vector(m, np.sin(2 * np.pi * x)))
    assert np.max(np.abs(u - np.sin(2 * np.pi * x) / (4 * np.pi ** 2))) <= 1e-3
    assert abs(u.mean()) <= 1e-15


def test_poisson_periodic_projects_mean():
    m = build_mesh(16, PERIODIC)
    u = poisson_solve(m, np.ones(m.n_nodes))
    assert np.max(np.abs(u)) <= 1e-12


def test_poisson_rhs_length():
    m = build_mesh(8)
    with pytest.raises(InvalidArgumentError):
        poisson_solve(m, np.zeros(m.n_nodes))


def test_harmonic_extension_of_affine():
    m = build_mesh(32)
    g = 2 * m.nodes[:, 0] - m.nodes[:, 1] + 0.5
    np.testing.assert_allclose(harmonic_extension(m, g), g, atol=1e-12)


def test_identity_reproduces_linear_boundary():
    m = build_mesh(32)
    g = m.nodes[:, 0].copy()
    u, rep = solve_monotone(m, _flux(IDENTITY, m), None, g, mu0=1, mu2=1)
    np.testing.assert_allclose(u, g, atol=1e-12)
    assert rep.converged


def test_transverse_laminate_is_exact():
    m = build_mesh(64)
    g = m.nodes[:, 1].copy()
    u, rep = solve_monotone(m, _flux(LAMINATE, m, 1 / 8), None, g, mu0=1, mu2=3)
    np.testing.assert_allclose(u, g, atol=1e-12)
    assert rep.iterations == 0


def _nonlinear_problem(n=32):
    m = build_mesh(n)
    F = interpolate(m, lambda x, y: 10 * np.sin(np.pi * x) * np.sin(np.pi * y))
    g = interpolate(m, lambda x, y: x * x - y)
    return m, F, g


def test_nonlinear_galerkin_consistency_and_contraction():
    m, F, g = _nonlinear_problem()
    flux = _flux(NONLINEAR, m, 1 / 4)
    opts = SolveOptions(tol_rel=1e-10)
    u, rep = solve_monotone(m, flux, F, g, opts, mu0=NONLINEAR.mu0, mu2=NONLINEAR.mu2)
    assert rep.converged
    assert rep.residual_history[-1] <= 1e-10 * rep.residual_history[0]
    bound = math.sqrt(1 - (NONLINEAR.mu0 / NONLINEAR.mu2) ** 2) + 0.02
    assert rep.contraction_emp <= bound
    bnd = m.boundary_nodes
    assert np.array_equal(u[bnd], g[bnd])
    # the discrete weak form holds to the tolerance, measured in the dual norm
    R = weak_residual(m, flux(gradient(m, u)), F)
    d = poisson_solve(m, R)
    assert math.sqrt(d[m.free_nodes] @ R) <= 1e-9 * rep.residual_history[0] + 1e-12


def test_uniqueness_from_two_starts():
    m, F, g = _nonlinear_problem()
    flux = _flux(NONLINEAR, m, 1 / 4)
    tol = 1e-10
    opts = SolveOptions(tol_rel=tol)
    u1, _ = solve_monotone(m, flux, F, g, opts, mu0=0.5, mu2=2.25)
    # smooth random start: a few random sine modes of moderate size
    rng = np.random.default_rng(0)
    x, y = m.nodes.T
    start = g.copy()
    for k, l in [(1, 1), (1, 2), (3, 1)]:
        start += 0.1 * rng.standard_normal() * np.sin(k * np.pi * x) * np.sin(l * np.pi * y)
    u2, _ = solve_monotone(m, flux, F, g, opts, mu0=0.5, mu2=2.25, u_init=start)
    assert norm(m, u1 - u2, "H1semi") <= 10 * tol * norm(m, u1, "H1semi")


def test_a_priori_h1_bound():
    m, F, g = _nonlinear_problem()
    u, _ = solve_monotone(m, _flux(NONLINEAR, m, 1 / 4), F, g, mu0=0.5, mu2=2.25)
    trace = norm(m, harmonic_extension(m, g), "H1semi")
    rhs = math.sqrt(2) * norm(m, F) + trace
    assert norm(m, u, "H1semi") <= 100 * rhs


@pytest.mark.parametrize("name", sorted(BUILTIN_MODELS))
def test_contraction_bound_on_the_square(name):
    model = BUILTIN_MODELS[name]
    m, F, g = _nonlinear_problem(16)
    _, rep = solve_monotone(m, _flux(model, m, 1 / 2), F, g, mu0=model.mu0, mu2=model.mu2)
    assert rep.contraction_emp <= math.sqrt(1 - (model.mu0 / model.mu2) ** 2) + 0.02


def test_identity_converges_in_one_step():
    m, F, g = _nonlinear_problem(16)
    _, rep = solve_monotone(m, _flux(IDENTITY, m), F, g, mu0=1, mu2=1)
    assert rep.iterations == 1


def test_bad_step_rejected():
    m, F, g = _nonlinear_problem(8)
    with pytest.raises(InvalidArgumentError):
        solve_monotone(m, _flux(IDENTITY, m), F, g, SolveOptions(rho=2.5), mu0=1, mu2=1)


def test_nonconvergence_carries_report():
    m, F, g = _nonlinear_problem(16)
    with pytest.raises(NonConvergenceError) as info:
        solve_monotone(m, _flux(NONLINEAR, m), F, g, SolveOptions(max_iters=3), mu0=0.5, mu2=2.25)
    assert info.value.report.iterations == 3
    assert len(info.value.report.residual_history) == 4


def test_dirichlet_needs_boundary_data():
    m = build_mesh(8)
    with pytest.raises(InvalidArgumentError):
        solve_monotone(m, _flux(IDENTITY, m), mu0=1, mu2=1)


def test_report_json_roundtrip():
    rep = SolveReport(4, [1.0, 0.5, 0.25, 0.125, 0.0625], True, 0.5)
    d = json.loads(rep.to_json())
    assert set(d) == {"iterations", "converged", "contraction_emp", "residuals"}
    assert SolveReport.from_dict(d) == rep


def test_contraction_factor():
    assert contraction_factor([1, 1, 1, 1, 0.5, 0.1]) == pytest.approx(0.5)
    assert contraction_factor([1.0, 0.1]) == 0.0
