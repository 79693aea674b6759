"""Regularity functionals measured on discrete solutions.

Balls are triangle sets: a triangle belongs to B(x0, r) iff its barycenter
does.  Averages of P1 quantities over a ball use the edge-midpoint rule,
which integrates quadratics exactly on each triangle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRegionError, InvalidArgumentError, ResolutionError
from .mesh import Mesh, ball_mask, distance_to_boundary, gradient

DEFAULT_THETAS = (0.25, 0.125, 0.0625)
_ZERO = 1e-12


@dataclass
class ExcessResult:
    r: float
    G: float
    M_opt: np.ndarray
    c_opt: float
    p: float


@dataclass
class DecayTable:
    rows: list = field(default_factory=list)  # (r, theta, ratio); ratio is nan if unresolved
    decay_witnessed: bool = False
    degenerate: bool = False
    witnesses: list = field(default_factory=list)

    def ratio(self, r, theta) -> float:
        for rr, th, q in self.rows:
            if np.isclose(rr, r) and np.isclose(th, theta):
                return q
        raise KeyError((r, theta))


def _check_ball(mesh: Mesh, center, r: float) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    if mesh.periodic:
        raise InvalidArgumentError("balls are measured on the Dirichlet square")
    if not r > 0 or distance_to_boundary(c) < r - 1e-12:
        raise InvalidArgumentError(f"ball B({tuple(c)}, {r}) is not inside the square")
    mask = ball_mask(mesh, c, r)
    if not mask.any():
        raise DegenerateRegionError(f"ball of radius {r} contains no triangle")
    return mask


def _midpoint_samples(mesh: Mesh, mask, *fields):
    """Edge-midpoint coordinates and field values for the masked triangles."""
    tri = mesh.triangles[mask]
    pairs = ((0, 1), (1, 2), (2, 0))
    xy = mesh.nodes
    pts = np.concatenate([0.5 * (xy[tri[:, a]] + xy[tri[:, b]]) for a, b in pairs])
    vals = [np.concatenate([0.5 * (f[tri[:, a]] + f[tri[:, b]]) for a, b in pairs])
            for f in fields]
    return pts, vals


def _source_term(Fvals: np.ndarray, p: float) -> float:
    return float(np.mean(np.abs(Fvals) ** p) ** (1.0 / p))


def excess(mesh: Mesh, v, F, center, r: float, p: float = 4.0, affine: bool = True) -> ExcessResult:
    """Normalized distance of ``v`` from affine functions on ``B(center, r)``.

        G = (1/r) [ (avg |v - M (x - x0) - c|^2)^(1/2) + r^2 (avg |F|^p)^(1/p) ]

    with the infimum over ``(M, c)`` attained by least squares.  With
    ``affine=False`` the slope is pinned to ``M = 0`` (oscillation functional).
    """
    if not p > 2:
        raise InvalidArgumentError("the source exponent must satisfy p > 2")
    v = mesh.check_nodal(v, "v")
    F = np.zeros(mesh.n_nodes) if F is None else mesh.check_nodal(F, "F")
    mask = _check_ball(mesh, center, r)
    pts, (vv, Fv) = _midpoint_samples(mesh, mask, v, F)
    rel = pts - np.asarray(center, dtype=float)
    if affine:
        # scaled columns keep the normal equations well conditioned
        X = np.column_stack([np.ones(len(vv)), rel / r])
        coef, *_ = np.linalg.lstsq(X, vv, rcond=None)
        c_opt, M_opt = float(coef[0]), coef[1:] / r
        resid = vv - X @ coef
    else:
        c_opt, M_opt = float(np.mean(vv)), np.zeros(2)
        resid = vv - c_opt
    fit = float(np.sqrt(np.mean(resid * resid)))
    G = (fit + r * r * _source_term(Fv, p)) / r
    return ExcessResult(r=float(r), G=G, M_opt=M_opt, c_opt=c_opt, p=float(p))


def oscillation(mesh: Mesh, v, F, center, r: float, p: float = 4.0) -> ExcessResult:
    """Excess with the slope constrained to zero."""
    return excess(mesh, v, F, center, r, p, affine=False)


def _ball_mean(values, mask) -> float:
    return float(np.mean(values[mask]))


def lipschitz_profile(mesh: Mesh, u, F, center, radii, p: float = 4.0) -> list:
    """``[(r, (avg_B(r) |grad u|^2)^(1/2)), ...]`` over the given radii."""
    radii = list(radii)
    if radii != sorted(radii):
        raise InvalidArgumentError("radii must be sorted ascending")
    g = gradient(mesh, mesh.check_nodal(u, "u"))
    mag2 = np.einsum("ij,ij->i", g, g)
    return [(float(r), float(np.sqrt(_ball_mean(mag2, _check_ball(mesh, center, r)))))
            for r in radii]


def source_average(mesh: Mesh, F, center, r: float, p: float) -> float:
    """``(avg_B(r) |F|^p)^(1/p)``."""
    F = mesh.check_nodal(F, "F")
    _, (Fv,) = _midpoint_samples(mesh, _check_ball(mesh, center, r), F)
    return _source_term(Fv, p)


def gradient_integrability(mesh: Mesh, u, p: float, center, radii) -> list:
    """Reverse-Hoelder ratios ``(avg_B(r)|grad u|^p)^(1/p) / (avg_B(2r)|grad u|^2)^(1/2)``.

    Zero gradients on both balls give ratio 0.
    """
    if not p > 2:
        raise InvalidArgumentError("integrability exponent must satisfy p > 2")
    g = gradient(mesh, mesh.check_nodal(u, "u"))
    mag = np.sqrt(np.einsum("ij,ij->i", g, g))
    out = []
    for r in radii:
        inner = _check_ball(mesh, center, r)
        outer = _check_ball(mesh, center, 2.0 * r)
        num = _ball_mean(mag ** p, inner) ** (1.0 / p)
        den = np.sqrt(_ball_mean(mag ** 2, outer))
        out.append((float(r), 0.0 if den == 0.0 else float(num / den)))
    return out


def excess_decay_check(mesh: Mesh, u0, F, center, r_list, theta_candidates=DEFAULT_THETAS,
                       p: float = 4.0, min_cells: float = 8.0) -> DecayTable:
    """Ratios ``G(theta r) / G(r)`` and whether some theta halves G at every r.

    Pairs with ``theta r < min_cells * h`` are below mesh resolution; they are
    reported as NaN and cannot witness decay.
    """
    r_list = sorted(float(r) for r in r_list)
    thetas = [float(t) for t in theta_candidates]
    floor = min_cells * mesh.h
    if not any(t * r_list[0] >= floor for t in thetas):
        raise ResolutionError(
            f"no theta resolves the smallest radius {r_list[0]} (need theta*r >= {floor})")
    u0 = mesh.check_nodal(u0, "u0")
    scale = max(1.0, float(np.max(np.abs(u0))))
    table = DecayTable()
    ok = {t: True for t in thetas}
    for r in r_list:
        G_r = excess(mesh, u0, F, center, r, p).G
        for t in thetas:
            if t * r < floor:
                table.rows.append((r, t, float("nan")))
                ok[t] = False
                continue
            G_t = excess(mesh, u0, F, center, t * r, p).G
            if G_r <= _ZERO * scale and G_t <= _ZERO * scale:
                table.degenerate = True
                q = 0.0
            else:
                q = G_t / G_r
            table.rows.append((r, t, q))
            ok[t] = ok[t] and q <= 0.5
    table.witnesses = [t for t in thetas if ok[t]]
    table.decay_witnessed = bool(table.witnesses)
    return table


def caccioppoli_ratio(mesh: Mesh, u, center, r: float) -> float:
    """``r ||grad u||_{B(r)} / inf_c ||u - c||_{B(2r)}`` (0 when u is constant)."""
    u = mesh.check_nodal(u, "u")
    inner = _check_ball(mesh, center, r)
    outer = _check_ball(mesh, center, 2.0 * r)
    g = gradient(mesh, u)
    num = np.sqrt(mesh.area * np.sum(np.einsum("ij,ij->i", g, g)[inner]))
    _, (uv,) = _midpoint_samples(mesh, outer, u)
    den = np.sqrt(mesh.area * outer.sum() * np.mean((uv - uv.mean()) ** 2))
    if den == 0.0:
        return 0.0
    return float(r * num / den)
