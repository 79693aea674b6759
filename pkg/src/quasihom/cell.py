"""Cell problems on the unit torus: correctors, effective flux, flux correctors.

For a slope ``xi`` the corrector ``N(., xi)`` is the zero-mean periodic
solution of ``div A(y, xi + grad N) = 0``; the effective flux is the cell
average of ``A(y, xi + grad N)`` and ``b = A(y, xi + grad N) - A_eff`` is the
flux mismatch, which is mean-free and divergence-free.  In two dimensions
the flux corrector has one independent entry ``E12`` with
``b = (-d2 E12, d1 E12)``.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .coefficients import BUILTIN_MODELS, CoefficientModel, get_model
from .errors import InvalidArgumentError, RangeError
from .mesh import (PERIODIC, Mesh, build_mesh, cell_load_vector, divergence_form, gradient,
                   node_average, norm, read_field_csv, write_field_csv)
from .solver import SolveOptions, SolveReport, poisson_solve, solve_monotone


@dataclass
class CorrectorSolution:
    model: CoefficientModel
    xi: np.ndarray
    mesh: Mesh
    N: np.ndarray
    A_eff: np.ndarray
    b: np.ndarray
    report: SolveReport

    @property
    def grad_N(self) -> np.ndarray:
        return gradient(self.mesh, self.N)


@dataclass
class FluxCorrector:
    mesh: Mesh
    f1: np.ndarray
    f2: np.ndarray
    E12: np.ndarray  # nodal; E21 = -E12, E11 = E22 = 0

    def E(self, j: int, i: int) -> np.ndarray:
        """Entry ``E_ji`` (1-based indices) as a nodal field."""
        if j == i:
            return np.zeros_like(self.E12)
        return self.E12 if (j, i) == (1, 2) else -self.E12

    def divergence(self) -> np.ndarray:
        """Per-triangle ``(d_j E_j1, d_j E_j2) = (-d2 E12, d1 E12)``."""
        g = gradient(self.mesh, self.E12)
        return np.column_stack([-g[:, 1], g[:, 0]])


def _cell_flux(model: CoefficientModel, mesh: Mesh, xi: np.ndarray):
    bound = model.bind(mesh.barycenters)
    return lambda z: bound(xi + z)


def solve_corrector(model: CoefficientModel, xi, n: int, opts: Optional[SolveOptions] = None,
                    u_init=None) -> CorrectorSolution:
    """Solve the periodic cell problem at slope ``xi`` on an ``n x n`` torus."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (2,) or not np.all(np.isfinite(xi)):
        raise InvalidArgumentError("xi must be a finite 2-vector")
    if n < 16 or n % 2:
        raise InvalidArgumentError(f"cell mesh needs an even n >= 16, got {n}")
    mesh = build_mesh(n, PERIODIC)
    flux = _cell_flux(model, mesh, xi)
    N, report = solve_monotone(mesh, flux, None, None, opts, mu0=model.mu0, mu2=model.mu2,
                               u_init=u_init)
    q = flux(gradient(mesh, N))
    A_eff = q.mean(axis=0)
    return CorrectorSolution(model, xi, mesh, N, A_eff, q - A_eff, report)


def effective_flux(sol: CorrectorSolution) -> np.ndarray:
    """Barycenter-quadrature average of A(y, xi + grad N) over the cell."""
    q = _cell_flux(sol.model, sol.mesh, sol.xi)(sol.grad_N)
    return q.mean(axis=0)


def corrector_energy(sol: CorrectorSolution) -> tuple[float, float]:
    """Cell averages of ``|N|^2`` and ``|grad N|^2`` (the cell has area 1)."""
    return norm(sol.mesh, sol.N) ** 2, norm(sol.mesh, sol.grad_N) ** 2


def dual_norm(mesh: Mesh, r: np.ndarray) -> float:
    """H^-1-type norm ``sqrt(r . K^-1 r)`` of a free-node dual vector."""
    d = poisson_solve(mesh, r)
    return math.sqrt(max(float(d[mesh.free_nodes] @ r), 0.0))


def _relative_divergence(mesh: Mesh, q: np.ndarray, scale: float) -> float:
    r = divergence_form(mesh, q)[mesh.free_nodes]
    if scale == 0.0:
        return 0.0
    return dual_norm(mesh, r) / scale


def _flux_scale(sol: CorrectorSolution) -> float:
    # ||A(y, xi + grad N)||; b itself may vanish (laminate across the layers)
    return norm(sol.mesh, sol.b + sol.A_eff)


def divergence_residual(sol: CorrectorSolution) -> float:
    """Weak divergence of ``b`` tested against all P1 gradients, relative to the flux norm."""
    return _relative_divergence(sol.mesh, sol.b, _flux_scale(sol))


def flux_corrector(sol: CorrectorSolution) -> FluxCorrector:
    """Potentials ``f_i`` with ``Laplace f_i = b_i`` and ``E12 = d1 f2 - d2 f1``."""
    mesh = sol.mesh
    f = [poisson_solve(mesh, -cell_load_vector(mesh, sol.b[:, i])) for i in range(2)]
    g1, g2 = gradient(mesh, f[0]), gradient(mesh, f[1])
    E12_cells = g2[:, 0] - g1[:, 1]
    E12 = node_average(mesh, E12_cells)
    E12 -= E12.mean()
    return FluxCorrector(mesh, f[0], f[1], E12)


def reconstruction_residual(sol: CorrectorSolution, fc: FluxCorrector) -> float:
    """Weak residual of ``b_i - d_j E_ji`` against all P1 test gradients, relative to the flux norm."""
    return _relative_divergence(sol.mesh, sol.b - fc.divergence(), _flux_scale(sol))


def reconstruction_mismatch(sol: CorrectorSolution, fc: FluxCorrector) -> float:
    """Strong (L2) mismatch ``||b - div E|| / ||b||``; O(h) for smooth cells."""
    nb = norm(sol.mesh, sol.b)
    if nb == 0.0:
        return 0.0
    return norm(sol.mesh, sol.b - fc.divergence()) / nb


# -- xi-tables ---------------------------------------------------------------

def xi_axis(g_max: float, m: int) -> np.ndarray:
    return -g_max + (2.0 * g_max / (m - 1)) * np.arange(m)


def _locate(axis: np.ndarray, s: np.ndarray, what: str):
    """Bilinear cell index and local coordinate along one axis."""
    lo, hi = axis[0], axis[-1]
    if np.any(s < lo) or np.any(s > hi) or not np.all(np.isfinite(s)):
        bad = s[(s < lo) | (s > hi) | ~np.isfinite(s)]
        raise RangeError(f"{what} value {bad.flat[0]!r} outside [{lo}, {hi}]")
    step = axis[1] - axis[0]
    t = (s - lo) / step
    k = np.clip(np.floor(t).astype(np.int64), 0, axis.size - 2)
    return k, t - k


@dataclass
class EffectiveTable:
    """Effective flux tabulated on a uniform xi-grid, interpolated bilinearly."""
    model: str
    g_max: float
    m: int
    n: int
    A_eff: np.ndarray  # (m*m, 2), node index i + m*j with xi = (axis[i], axis[j])
    mu0: float = 0.0
    lipschitz: float = 0.0

    @property
    def axis(self) -> np.ndarray:
        return xi_axis(self.g_max, self.m)

    @property
    def nodes(self) -> np.ndarray:
        a = self.axis
        X, Y = np.meshgrid(a, a)
        return np.column_stack([X.ravel(), Y.ravel()])

    def __call__(self, xi) -> np.ndarray:
        return eval_effective(self, xi)

    def certify(self) -> "EffectiveTable":
        """Monotonicity and Lipschitz constants of the bilinear interpolant.

        Inside each cell the Jacobian is affine in the local coordinates, so
        both extremes are attained at the cell corners.
        """
        m, step = self.m, 2.0 * self.g_max / (self.m - 1)
        V = self.A_eff.reshape(m, m, 2)
        d1 = (V[:, 1:] - V[:, :-1]) / step  # d/dxi1, shape (m, m-1, 2)
        d2 = (V[1:] - V[:-1]) / step        # d/dxi2, shape (m-1, m, 2)
        jacs = []
        for a in (0, 1):
            for c in (0, 1):
                col1 = d1[a:m - 1 + a]       # rows j or j+1
                col2 = d2[:, c:m - 1 + c]    # columns i or i+1
                jacs.append(np.stack([col1, col2], axis=-1))  # [..., comp, dir]
        J = np.concatenate([j.reshape(-1, 2, 2) for j in jacs])
        sym = 0.5 * (J + np.swapaxes(J, 1, 2))
        self.mu0 = float(np.linalg.eigvalsh(sym)[:, 0].min())
        self.lipschitz = float(np.linalg.norm(J, ord=2, axis=(1, 2)).max())
        return self

    def to_dict(self) -> dict:
        return {"g_max": self.g_max, "m": self.m, "n": self.n, "model": self.model,
                "A_eff": self.A_eff.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "EffectiveTable":
        t = cls(d["model"], float(d["g_max"]), int(d["m"]), int(d["n"]),
                np.asarray(d["A_eff"], dtype=float).reshape(-1, 2))
        return t.certify()


def eval_effective(table: EffectiveTable, xi) -> np.ndarray:
    """Bilinear interpolation of the effective flux; never extrapolates."""
    xi = np.asarray(xi, dtype=float)
    axis, m = table.axis, table.m
    i, t = _locate(axis, xi[..., 0], "xi1")
    j, u = _locate(axis, xi[..., 1], "xi2")
    V = table.A_eff
    k = i + m * j
    t, u = t[..., None], u[..., None]
    return ((1 - t) * (1 - u) * V[k] + t * (1 - u) * V[k + 1]
            + (1 - t) * u * V[k + m] + t * u * V[k + m + 1])


@dataclass
class CorrectorTable:
    """Corrector fields on the same xi-grid as an :class:`EffectiveTable`."""
    model: str
    g_max: float
    m: int
    n: int
    N: np.ndarray  # (m*m, n*n) nodal values on the periodic cell mesh
    field_files: list = field(default_factory=list)

    @property
    def axis(self) -> np.ndarray:
        return xi_axis(self.g_max, self.m)

    def evaluate(self, y, xi) -> np.ndarray:
        """``N(y, xi)``, bilinear in the cell variable and in ``xi``."""
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        xi = np.asarray(xi, dtype=float)
        n, m = self.n, self.m
        i, t = _locate(self.axis, xi[..., 0], "xi1")
        j, u = _locate(self.axis, xi[..., 1], "xi2")
        sy = y * n
        p = np.floor(sy).astype(np.int64)
        a = sy - p
        p0x, p0y = p[..., 0] % n, p[..., 1] % n
        p1x, p1y = (p0x + 1) % n, (p0y + 1) % n
        ax, ay = a[..., 0], a[..., 1]
        corners = ((p0x + n * p0y, (1 - ax) * (1 - ay)), (p1x + n * p0y, ax * (1 - ay)),
                   (p0x + n * p1y, (1 - ax) * ay), (p1x + n * p1y, ax * ay))
        k = i + m * j
        out = np.zeros(np.shape(t))
        for dk, w in ((0, (1 - t) * (1 - u)), (1, t * (1 - u)), (m, (1 - t) * u),
                      (m + 1, t * u)):
            vals = sum(wy * self.N[k + dk, idx] for idx, wy in corners)
            out += w * vals
        return out

    def to_dict(self) -> dict:
        return {"g_max": self.g_max, "m": self.m, "n": self.n, "model": self.model,
                "fields": list(self.field_files)}


def _solve_node(args):
    name, xi, n, opts = args
    sol = solve_corrector(get_model(name), xi, n, opts)
    return sol.A_eff, sol.N, sol.report.converged


def build_effective_table(model: CoefficientModel, g_max: float = 4.0, m: int = 9,
                          n: int = 32, opts: Optional[SolveOptions] = None,
                          jobs: int = 1) -> tuple[EffectiveTable, CorrectorTable]:
    """Solve the cell problem at every node of an ``m x m`` xi-grid."""
    if m < 3 or m % 2 == 0:
        raise InvalidArgumentError("m must be odd and >= 3 so that xi = 0 is a node")
    if not g_max > 0:
        raise InvalidArgumentError("g_max must be positive")
    axis = xi_axis(g_max, m)
    xis = [np.array([axis[i], axis[j]]) for j in range(m) for i in range(m)]
    A = np.zeros((m * m, 2))
    N = np.zeros((m * m, n * n))
    if jobs > 1 and model.name in BUILTIN_MODELS and BUILTIN_MODELS[model.name] is model:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_node, [(model.name, xi, n, opts) for xi in xis]))
        for k, (a, field_, _) in enumerate(results):
            A[k], N[k] = a, field_
    else:
        for k, xi in enumerate(xis):
            try:
                sol = solve_corrector(model, xi, n, opts)
            except Exception as exc:
                raise type(exc)(f"cell solve failed at xi={tuple(xi)}: {exc}") from exc
            A[k], N[k] = sol.A_eff, sol.N
    eff = EffectiveTable(model.name, float(g_max), m, n, A).certify()
    return eff, CorrectorTable(model.name, float(g_max), m, n, N)


def table_structure(table: EffectiveTable, n_pairs: int = 200, seed: int = 0):
    """Monotonicity margin and Lipschitz ratio over random grid-node pairs."""
    rng = np.random.default_rng(seed)
    nodes, V = table.nodes, table.A_eff
    k = nodes.shape[0]
    a = rng.integers(0, k, n_pairs)
    b = rng.integers(0, k - 1, n_pairs)
    b = b + (b >= a)  # distinct pairs
    dxi, dA = nodes[a] - nodes[b], V[a] - V[b]
    d2 = np.sum(dxi * dxi, axis=1)
    margin = np.sum(dA * dxi, axis=1) / d2
    ratio = np.sqrt(np.sum(dA * dA, axis=1) / d2)
    return float(margin.min()), float(ratio.max())


def save_tables(directory, eff: EffectiveTable, ctab: CorrectorTable) -> None:
    """Write ``effective.json``, ``correctors.json`` and one CSV per xi-node."""
    directory = Path(directory)
    (directory / "fields").mkdir(parents=True, exist_ok=True)
    cell_mesh = build_mesh(ctab.n, PERIODIC)
    files = []
    for k in range(ctab.m * ctab.m):
        rel = os.path.join("fields", f"N_{k:04d}.csv")
        write_field_csv(directory / rel, cell_mesh, ctab.N[k])
        files.append(rel)
    ctab.field_files = files
    (directory / "effective.json").write_text(eff.to_json())
    (directory / "correctors.json").write_text(json.dumps(ctab.to_dict()))


def load_tables(directory) -> tuple[EffectiveTable, CorrectorTable]:
    directory = Path(directory)
    eff = EffectiveTable.from_dict(json.loads((directory / "effective.json").read_text()))
    meta = json.loads((directory / "correctors.json").read_text())
    cell_mesh = build_mesh(meta["n"], PERIODIC)
    N = np.stack([read_field_csv(directory / f, cell_mesh) for f in meta["fields"]])
    ctab = CorrectorTable(meta["model"], float(meta["g_max"]), int(meta["m"]), int(meta["n"]),
                          N, list(meta["fields"]))
    return eff, ctab
