"""First-order two-scale expansion and the error functionals it controls.

    v_eps = u0 + eps * N(x/eps, S_eps(psi_{4 eps} grad u0))

``S_eps`` is the mollifier at scale ``eps`` and ``psi_r`` the boundary
cut-off, so ``v_eps = u0`` in a boundary strip and ``u_eps - v_eps`` has
zero trace whenever ``u_eps`` and ``u0`` share boundary data.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .cell import CorrectorTable
from .errors import InvalidArgumentError
from .mesh import (Mesh, colayer_mask, cutoff, gradient, layer_mask, mollify, node_average,
                   norm)

CUTOFF_SCALE = 4.0


@dataclass
class ErrorReport:
    epsilon: float
    h: float
    l2_error: float
    h1_expansion_error: float
    layer_norm: float
    colayer_hess: float

    def as_row(self) -> dict:
        return asdict(self)


def smoothed_slope(u0: np.ndarray, eps: float, mesh: Mesh,
                   cutoff_scale: float = CUTOFF_SCALE) -> np.ndarray:
    """Nodal ``S_eps(psi_{c eps} grad u0)`` with triangle gradients averaged to nodes."""
    grad_nodes = node_average(mesh, gradient(mesh, u0))
    psi = cutoff(mesh, cutoff_scale * eps)
    return mollify(mesh, psi[:, None] * grad_nodes, eps)


def build_expansion(u0, ctable: CorrectorTable, eps: float, mesh: Mesh,
                    cutoff_scale: float = CUTOFF_SCALE) -> np.ndarray:
    """Nodal values of the smoothed first-order expansion ``v_eps``."""
    u0 = mesh.check_nodal(u0, "u0")
    if mesh.periodic:
        raise InvalidArgumentError("the expansion lives on the Dirichlet square")
    phi = smoothed_slope(u0, eps, mesh, cutoff_scale)
    corr = ctable.evaluate(mesh.nodes / eps, phi)
    return u0 + eps * corr


@lru_cache(maxsize=1)
def _quadratic_fit_weights() -> np.ndarray:
    """Rows mapping a 3x3 stencil (unit spacing) to (uxx, uxy, uyy) by least squares."""
    a, b = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0])
    a, b = a.ravel(), b.ravel()
    V = np.column_stack([np.ones(9), a, b, 0.5 * a * a, a * b, 0.5 * b * b])
    P = np.linalg.pinv(V)
    return P[3:]


def hessian_surrogate(mesh: Mesh, u) -> np.ndarray:
    """Per-node Hessian (uxx, uxy, uyy) from a quadratic fit over the 9-point stencil.

    Boundary nodes have no full stencil and get NaN.
    """
    u = mesh.check_nodal(u)
    g = mesh.grid(u)
    W = _quadratic_fit_weights() / mesh.h ** 2
    out = np.full(g.shape + (3,), np.nan)
    inner = np.zeros(g[1:-1, 1:-1].shape + (3,))
    k = 0
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            patch = g[1 + dj:g.shape[0] - 1 + dj, 1 + di:g.shape[1] - 1 + di]
            inner += patch[..., None] * W[:, k]
            k += 1
    out[1:-1, 1:-1] = inner
    return out.reshape(-1, 3)


def hessian_norm(mesh: Mesh, u, mask) -> float:
    """L2 norm over the masked triangles of the Hessian surrogate (vertex-averaged)."""
    H = hessian_surrogate(mesh, u)
    frob2 = H[:, 0] ** 2 + 2.0 * H[:, 1] ** 2 + H[:, 2] ** 2
    tri = mesh.triangles[mask]
    dens = frob2[tri].mean(axis=1)
    if np.any(np.isnan(dens)):
        raise InvalidArgumentError("Hessian region touches the boundary")
    return float(np.sqrt(mesh.area * dens.sum()))


def expansion_errors(u_eps, u0, v_eps, mesh: Mesh, eps: float,
                     cutoff_scale: float = CUTOFF_SCALE) -> ErrorReport:
    u_eps = mesh.check_nodal(u_eps, "u_eps")
    u0 = mesh.check_nodal(u0, "u0")
    v_eps = mesh.check_nodal(v_eps, "v_eps")
    grad_u0 = gradient(mesh, u0)
    return ErrorReport(
        epsilon=float(eps),
        h=mesh.h,
        l2_error=norm(mesh, u_eps - u0),
        h1_expansion_error=norm(mesh, u_eps - v_eps, "H1semi"),
        layer_norm=norm(mesh, grad_u0, mask=layer_mask(mesh, cutoff_scale * eps)),
        colayer_hess=eps * hessian_norm(mesh, u0, colayer_mask(mesh, 2.0 * eps)),
    )
