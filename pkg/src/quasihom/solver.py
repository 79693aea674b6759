"""Preconditioned fixed-point solver for discrete monotone problems.

The discrete problem is ``weak_residual(mesh, A(x_T, grad u), F) = 0`` at the
free nodes.  With ``P`` the P1 Laplacian (same boundary treatment), the
Zarantonello iteration

    u <- u - rho * P^{-1} R(u),      0 < rho < 2 mu0 / mu2^2,

contracts in the H1 seminorm at rate at most sqrt(1 - mu0^2 / mu2^2) for
rho = mu0 / mu2^2.  ``P`` is inverted by conjugate gradients; on this mesh
the P1 stiffness is the 5-point stencil, which FFT (torus) or DST-I (square)
diagonalizes, and that transform serves as the CG preconditioner.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.fft

from .errors import InvalidArgumentError, NonConvergenceError, NumericalBreakdownError
from .mesh import Mesh, gradient, weak_residual


@dataclass
class SolveOptions:
    tol_rel: float = 1e-10
    max_iters: int = 100_000
    rho: Optional[float] = None  # None -> mu0 / mu2**2
    cg_tol: float = 1e-12
    # absolute floor: stop at once when the residual is already at roundoff
    atol: float = 1e-13

    def step(self, mu0: float, mu2: float) -> float:
        rho = mu0 / mu2 ** 2 if self.rho is None else float(self.rho)
        if not 0.0 < rho < 2.0 * mu0 / mu2 ** 2:
            raise InvalidArgumentError(
                f"step rho={rho} violates 0 < rho < 2 mu0/mu2^2 = {2 * mu0 / mu2 ** 2}")
        if self.tol_rel <= 0 or self.cg_tol <= 0:
            raise InvalidArgumentError("tolerances must be positive")
        return rho


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    contraction_emp: float = 0.0

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "converged": self.converged,
                "contraction_emp": self.contraction_emp,
                "residuals": list(self.residual_history)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        return cls(iterations=d["iterations"], residual_history=list(d["residuals"]),
                   converged=d["converged"], contraction_emp=d["contraction_emp"])


def contraction_factor(history, start: int = 3) -> float:
    """Largest successive ratio ``history[k+1] / history[k]`` for k >= start."""
    h = np.asarray(history, dtype=float)
    if h.size < start + 2:
        return 0.0
    return float(np.max(h[start + 1:] / h[start:-1]))


# -- Laplace solves ----------------------------------------------------------

class _SpectralLaplace:
    """Exact inverse of the 5-point stencil on the torus or the square."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        n = mesh.n
        if mesh.periodic:
            k = np.arange(n)
            lam1 = 2.0 - 2.0 * np.cos(2.0 * np.pi * k / n)
            lam = lam1[:, None] + lam1[None, : n // 2 + 1]
            lam[0, 0] = np.inf
            self.shape = (n, n)
        else:
            k = np.arange(1, n)
            lam1 = 2.0 - 2.0 * np.cos(np.pi * k / n)
            lam = lam1[:, None] + lam1[None, :]
            self.shape = (n - 1, n - 1)
        self.inv = 1.0 / lam

    def __call__(self, r: np.ndarray) -> np.ndarray:
        g = r.reshape(self.shape)
        if self.mesh.periodic:
            out = scipy.fft.irfft2(scipy.fft.rfft2(g) * self.inv, s=self.shape)
        else:
            out = scipy.fft.idstn(scipy.fft.dstn(g, type=1) * self.inv, type=1)
        return out.ravel()


_PRECOND_CACHE: dict = {}


def _preconditioner(mesh: Mesh) -> _SpectralLaplace:
    key = (mesh.n, mesh.flavor)
    if key not in _PRECOND_CACHE:
        if len(_PRECOND_CACHE) > 8:
            _PRECOND_CACHE.clear()
        _PRECOND_CACHE[key] = _SpectralLaplace(mesh)
    return _PRECOND_CACHE[key]


def pcg(matvec: Callable, b: np.ndarray, precond: Callable, tol: float,
        maxiter: int, project: Optional[Callable] = None) -> np.ndarray:
    """Preconditioned CG; stops on the preconditioned residual ``sqrt(r.Mr)``."""
    x = np.zeros_like(b)
    r = b.copy()
    z = precond(r)
    if project is not None:
        z = project(z)
    rz = float(r @ z)
    if rz <= 0.0:
        return x
    stop = tol * math.sqrt(rz)
    p = z.copy()
    for _ in range(maxiter):
        Ap = matvec(p)
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = precond(r)
        if project is not None:
            z = project(z)
        rz_new = float(r @ z)
        if rz_new <= stop * stop:
            return x
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NumericalBreakdownError(f"CG did not converge in {maxiter} iterations")


def _mean_free(v: np.ndarray) -> np.ndarray:
    return v - v.mean()


def poisson_solve(mesh: Mesh, rhs, cg_tol: float = 1e-12) -> np.ndarray:
    """Solve ``K u = rhs`` for the P1 Laplacian ``K`` at the free nodes.

    ``rhs`` is a dual vector over the free nodes.  On the torus the mean of
    ``rhs`` is projected out and the solution has zero nodal mean; on the
    square the returned nodal field vanishes on the boundary.
    """
    rhs = np.asarray(rhs, dtype=float)
    free = mesh.free_nodes
    if rhs.shape != free.shape:
        raise InvalidArgumentError(f"rhs must have {free.size} entries, got {rhs.shape}")
    K = mesh.free_stiffness
    project = _mean_free if mesh.periodic else None
    b = _mean_free(rhs) if mesh.periodic else rhs
    x = pcg(K.dot, b, _preconditioner(mesh), cg_tol, 10 * mesh.n ** 2, project)
    u = np.zeros(mesh.n_nodes)
    u[free] = x
    if mesh.periodic:
        u -= u.mean()
    return u


def harmonic_extension(mesh: Mesh, g, cg_tol: float = 1e-12) -> np.ndarray:
    """Discrete harmonic field with the boundary values of nodal ``g``."""
    g = mesh.check_nodal(g, "boundary data")
    u = np.zeros(mesh.n_nodes)
    bnd = mesh.boundary_nodes
    u[bnd] = g[bnd]
    rhs = -(mesh.stiffness @ u)[mesh.free_nodes]
    return u + poisson_solve(mesh, rhs, cg_tol)


# -- monotone solve ----------------------------------------------------------

def solve_monotone(mesh: Mesh, model_flux: Callable[[np.ndarray], np.ndarray], F=None,
                   g=None, opts: Optional[SolveOptions] = None, *, mu0: float,
                   mu2: float, u_init=None) -> tuple[np.ndarray, SolveReport]:
    """Solve ``-div A(x, grad u) = F`` (+ ``u = g`` on the boundary).

    ``model_flux`` maps per-triangle gradients ``(n_triangles, 2)`` to fluxes;
    it is already bound to the triangle barycenters.  ``g`` is a nodal array
    (only its boundary entries are read) and is required on the square.
    The start value defaults to zero on the torus and to the harmonic
    extension of ``g`` on the square.
    """
    opts = opts or SolveOptions()
    rho = opts.step(mu0, mu2)
    F = np.zeros(mesh.n_nodes) if F is None else mesh.check_nodal(F, "source")
    if not mesh.periodic:
        if g is None:
            raise InvalidArgumentError("Dirichlet solve needs boundary data g")
        g = mesh.check_nodal(g, "boundary data")
    if u_init is None:
        u = np.zeros(mesh.n_nodes) if mesh.periodic else harmonic_extension(mesh, g, opts.cg_tol)
    else:
        u = mesh.check_nodal(u_init, "initial guess").copy()
    if mesh.periodic:
        u -= u.mean()
    else:
        bnd = mesh.boundary_nodes
        u[bnd] = g[bnd]

    free = mesh.free_nodes
    report = SolveReport()
    res0 = None
    while True:
        R = weak_residual(mesh, model_flux(gradient(mesh, u)), F)
        d = poisson_solve(mesh, R, opts.cg_tol)
        res = math.sqrt(max(float(d[free] @ R), 0.0))
        report.residual_history.append(res)
        if res0 is None:
            res0 = res
        if res <= opts.tol_rel * res0 or res <= opts.atol:
            report.converged = True
            break
        if report.iterations >= opts.max_iters:
            report.contraction_emp = contraction_factor(report.residual_history)
            raise NonConvergenceError(
                f"no convergence after {opts.max_iters} iterations (residual {res:.3e})", report)
        u[free] -= rho * d[free]
        if mesh.periodic:
            u -= u.mean()
        report.iterations += 1
    report.contraction_emp = contraction_factor(report.residual_history)
    return u, report
