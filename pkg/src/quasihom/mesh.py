"""Structured P1 finite elements on the unit square.

Each of the ``n x n`` square cells is split along its (0,0)-(1,1) diagonal
into a lower-right triangle ``[(i,j), (i+1,j), (i+1,j+1)]`` and an
upper-left triangle ``[(i,j), (i+1,j+1), (i,j+1)]``.  Nodes are numbered
row-major, ``k = i + nx * j``.  The periodic flavour identifies opposite
edges (``nx = n``), the Dirichlet flavour keeps all ``(n+1)^2`` nodes.

Scalar fields are nodal arrays of shape ``(n_nodes,)``; per-triangle vector
fields (gradients, fluxes) have shape ``(n_triangles, 2)``.
"""

from __future__ import annotations

from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.signal import fftconvolve

from .errors import DegenerateRegionError, InvalidArgumentError, ResolutionError

PERIODIC = "periodic"
DIRICHLET = "dirichlet"

# Shape-function gradients (times h) of the two reference triangles.
_DPHI = np.array(
    [
        [[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]],  # lower-right
        [[0.0, -1.0], [1.0, 0.0], [-1.0, 1.0]],  # upper-left
    ]
)
_BARY_OFFSETS = np.array([[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]])


class Mesh:
    """Uniform right-triangle mesh of the unit square (torus or closed square)."""

    def __init__(self, n: int, flavor: str = DIRICHLET):
        self.n = int(n)
        self.flavor = flavor
        self.h = 1.0 / self.n
        self.nx = self.n if flavor == PERIODIC else self.n + 1
        self.n_nodes = self.nx * self.nx
        self.n_triangles = 2 * self.n * self.n
        self.area = 0.5 * self.h * self.h
        self.dphi = _DPHI / self.h

    def __repr__(self):
        return f"Mesh(n={self.n}, flavor={self.flavor!r})"

    def __eq__(self, other):
        return isinstance(other, Mesh) and (self.n, self.flavor) == (other.n, other.flavor)

    def __hash__(self):
        return hash((self.n, self.flavor))

    @property
    def periodic(self) -> bool:
        return self.flavor == PERIODIC

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.nx) * self.h
        x, y = np.meshgrid(t, t)
        return np.column_stack([x.ravel(), y.ravel()])

    @cached_property
    def triangles(self) -> np.ndarray:
        n, nx = self.n, self.nx
        i, j = np.meshgrid(np.arange(n), np.arange(n))
        i, j = i.ravel(), j.ravel()
        ip, jp = i + 1, j + 1
        if self.periodic:
            ip, jp = ip % n, jp % n
        v00, v10, v11, v01 = i + nx * j, ip + nx * j, ip + nx * jp, i + nx * jp
        tri = np.empty((n * n, 2, 3), dtype=np.int64)
        tri[:, 0] = np.column_stack([v00, v10, v11])
        tri[:, 1] = np.column_stack([v00, v11, v01])
        return tri.reshape(-1, 3)

    @cached_property
    def barycenters(self) -> np.ndarray:
        n, h = self.n, self.h
        i, j = np.meshgrid(np.arange(n), np.arange(n))
        corner = np.column_stack([i.ravel(), j.ravel()]).astype(float)
        b = (corner[:, None, :] + _BARY_OFFSETS[None]) * h
        return b.reshape(-1, 2)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        if self.periodic:
            return np.zeros(0, dtype=np.int64)
        nx = self.nx
        i, j = np.meshgrid(np.arange(nx), np.arange(nx))
        on = (i == 0) | (j == 0) | (i == nx - 1) | (j == nx - 1)
        return np.flatnonzero(on.ravel())

    @cached_property
    def free_nodes(self) -> np.ndarray:
        if self.periodic:
            return np.arange(self.n_nodes)
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        w = np.full(self.triangles.size, self.area / 3.0)
        return np.bincount(self.triangles.ravel(), w, minlength=self.n_nodes)

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Full P1 Laplace stiffness matrix (all nodes)."""
        nc = self.n * self.n
        local = self.area * np.einsum("akd,ald->akl", self.dphi, self.dphi)
        vals = np.broadcast_to(local[None], (nc, 2, 3, 3)).reshape(-1, 3, 3)
        tri = self.triangles
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        K = sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(self.n_nodes,) * 2)
        K = K.tocsr()
        K.eliminate_zeros()
        return K

    @cached_property
    def free_stiffness(self) -> sp.csr_matrix:
        free = self.free_nodes
        return self.stiffness[free][:, free].tocsr()

    def grid(self, values: np.ndarray) -> np.ndarray:
        """View nodal values as a ``(ny, nx, ...)`` array indexed ``[j, i]``."""
        return values.reshape((self.nx, self.nx) + values.shape[1:])

    def check_nodal(self, u, name="field"):
        u = np.asarray(u, dtype=float)
        if u.shape[:1] != (self.n_nodes,):
            raise InvalidArgumentError(
                f"{name} has {u.shape[0] if u.ndim else 0} entries, mesh has {self.n_nodes} nodes")
        return u

    def check_cellwise(self, q, name="field"):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_triangles, 2):
            raise InvalidArgumentError(
                f"{name} must have shape ({self.n_triangles}, 2), got {q.shape}")
        return q


def build_mesh(n: int, flavor: str = DIRICHLET) -> Mesh:
    if flavor not in (PERIODIC, DIRICHLET):
        raise InvalidArgumentError(f"unknown mesh flavor {flavor!r}")
    if int(n) != n or n < 4:
        raise InvalidArgumentError(f"need n >= 4 cells per side, got {n}")
    if flavor == PERIODIC and n % 2:
        raise InvalidArgumentError("periodic meshes need an even n")
    return Mesh(int(n), flavor)


def interpolate(mesh: Mesh, func) -> np.ndarray:
    """Nodal interpolant of ``func(x, y)``."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    return np.asarray(np.broadcast_to(func(x, y), x.shape), dtype=float).copy()


def _corner_grid(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Nodal values on an ``(n+1, n+1)`` grid, wrapping the torus."""
    g = mesh.grid(u)
    if mesh.periodic:
        g = np.concatenate([g, g[:1]], axis=0)
        g = np.concatenate([g, g[:, :1]], axis=1)
    return g


def gradient(mesh: Mesh, u) -> np.ndarray:
    """Per-triangle gradient of the P1 interpolant of nodal values ``u``."""
    u = mesh.check_nodal(u)
    if u.ndim != 1:
        raise InvalidArgumentError("gradient expects a nodal scalar field")
    g = _corner_grid(mesh, u)
    u00, u10, u11, u01 = g[:-1, :-1], g[:-1, 1:], g[1:, 1:], g[1:, :-1]
    out = np.empty((mesh.n, mesh.n, 2, 2))
    out[:, :, 0, 0] = u10 - u00
    out[:, :, 0, 1] = u11 - u10
    out[:, :, 1, 0] = u11 - u01
    out[:, :, 1, 1] = u01 - u00
    out *= 1.0 / mesh.h
    return out.reshape(-1, 2)


def divergence_form(mesh: Mesh, q) -> np.ndarray:
    """Nodal vector ``sum_T |T| q_T . grad(phi_i)`` over all nodes."""
    q = mesh.check_cellwise(q, "flux").reshape(mesh.n, mesh.n, 2, 2)
    c = mesh.area / mesh.h
    lx, ly = q[:, :, 0, 0], q[:, :, 0, 1]  # lower-right triangle
    ux, uy = q[:, :, 1, 0], q[:, :, 1, 1]  # upper-left triangle
    acc = np.zeros((mesh.n + 1, mesh.n + 1))
    acc[:-1, :-1] -= lx + uy
    acc[:-1, 1:] += lx - ly
    acc[1:, 1:] += ly + ux
    acc[1:, :-1] += uy - ux
    acc *= c
    if mesh.periodic:
        acc[0, :] += acc[-1, :]
        acc[:, 0] += acc[:, -1]
        acc = acc[:-1, :-1]
    return acc.ravel()


def load_vector(mesh: Mesh, f) -> np.ndarray:
    """Mass-lumped load ``int f phi_i`` for nodal ``f`` (all nodes)."""
    return mesh.lumped_mass * mesh.check_nodal(f, "source")


def cell_load_vector(mesh: Mesh, f_tri) -> np.ndarray:
    """Load ``int f phi_i`` for a per-triangle constant ``f`` (all nodes)."""
    f_tri = np.asarray(f_tri, dtype=float)
    if f_tri.shape != (mesh.n_triangles,):
        raise InvalidArgumentError("per-triangle scalar has wrong length")
    w = np.repeat(f_tri * (mesh.area / 3.0), 3)
    return np.bincount(mesh.triangles.ravel(), w, minlength=mesh.n_nodes)


def weak_residual(mesh: Mesh, q, Fsrc) -> np.ndarray:
    """Residual ``int q . grad(phi_i) - int F phi_i`` at the free nodes.

    A nodal field ``u`` is a discrete solution of ``-div A(x, grad u) = F``
    iff this vanishes for ``q = A(x_T, grad u)``.
    """
    r = divergence_form(mesh, q) - load_vector(mesh, Fsrc)
    return r[mesh.free_nodes]


def node_average(mesh: Mesh, values) -> np.ndarray:
    """Area-weighted average of per-triangle values onto nodes."""
    values = np.asarray(values, dtype=float)
    tri = mesh.triangles.ravel()
    count = np.bincount(tri, minlength=mesh.n_nodes).astype(float)
    if values.ndim == 1:
        return np.bincount(tri, np.repeat(values, 3), minlength=mesh.n_nodes) / count
    cols = [np.bincount(tri, np.repeat(values[:, c], 3), minlength=mesh.n_nodes) / count
            for c in range(values.shape[1])]
    return np.column_stack(cols)


# -- regions -----------------------------------------------------------------

def distance_to_boundary(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    return np.minimum(np.minimum(p[..., 0], 1.0 - p[..., 0]),
                      np.minimum(p[..., 1], 1.0 - p[..., 1]))


def colayer_mask(mesh: Mesh, r: float) -> np.ndarray:
    """Triangles whose barycenter lies in {dist(x, boundary) > r}."""
    return distance_to_boundary(mesh.barycenters) > r


def layer_mask(mesh: Mesh, r: float) -> np.ndarray:
    return ~colayer_mask(mesh, r)


def ball_mask(mesh: Mesh, center, r: float) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    d = mesh.barycenters - c
    return np.einsum("ij,ij->i", d, d) < r * r


# -- norms -------------------------------------------------------------------

def norm(mesh: Mesh, obj, kind: str = "L2", p: float | None = None, mask=None) -> float:
    """L2 / Lp / H1-seminorm of a nodal scalar or a per-triangle vector field.

    Nodal scalars are integrated exactly as P1 functions for L2 and with the
    vertex rule for other p; per-triangle fields are piecewise constant.
    ``mask`` restricts the sum to the selected triangles.
    """
    obj = np.asarray(obj, dtype=float)
    kind = kind.upper()
    if kind == "LP":
        if p is None or p < 1:
            raise InvalidArgumentError("Lp norm needs p >= 1")
        if p == 2:
            kind = "L2"
    elif kind not in ("L2", "H1SEMI"):
        raise InvalidArgumentError(f"unknown norm kind {kind!r}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (mesh.n_triangles,):
            raise InvalidArgumentError("mask length must equal the triangle count")

    if kind == "H1SEMI":
        if obj.ndim != 1:
            raise InvalidArgumentError("H1 seminorm expects a nodal scalar field")
        return norm(mesh, gradient(mesh, obj), "L2", mask=mask)

    if obj.ndim == 1:
        ut = mesh.check_nodal(obj)[mesh.triangles]
        if kind == "L2":
            dens = (np.sum(ut * ut, axis=1) + np.sum(ut, axis=1) ** 2) * (mesh.area / 12.0)
        else:
            dens = np.sum(np.abs(ut) ** p, axis=1) * (mesh.area / 3.0)
    else:
        q = mesh.check_cellwise(obj)
        mag2 = np.einsum("ij,ij->i", q, q)
        dens = mesh.area * (mag2 if kind == "L2" else mag2 ** (p / 2.0))
    if mask is not None:
        dens = dens[mask]
    total = float(np.sum(dens))
    return total ** 0.5 if kind == "L2" else total ** (1.0 / p)


def region_mean(mesh: Mesh, values, mask) -> float:
    """Area average of a per-triangle scalar over a nonempty mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DegenerateRegionError("region selects no triangles")
    return float(np.mean(np.asarray(values)[mask]))


# -- smoothing and cut-off ---------------------------------------------------

def mollifier_kernel(h: float, eps: float) -> np.ndarray:
    """Discrete bump exp(-1/(1 - 4|x/eps|^2)) on the lattice, summing to 1."""
    m = int(np.ceil(0.5 * eps / h))
    t = np.arange(-m, m + 1) * h
    X, Y = np.meshgrid(t, t)
    s = 4.0 * (X * X + Y * Y) / (eps * eps)
    k = np.zeros_like(s)
    inside = s < 1.0
    k[inside] = np.exp(-1.0 / (1.0 - s[inside]))
    return k / k.sum()


def _convolve(mesh: Mesh, g: np.ndarray, kern: np.ndarray) -> np.ndarray:
    if mesh.periodic:
        n = mesh.nx
        m = kern.shape[0] // 2
        wrapped = np.zeros((n, n))
        idx = np.arange(-m, m + 1) % n
        np.add.at(wrapped, (idx[:, None], idx[None, :]), kern)
        return scipy.fft.irfft2(scipy.fft.rfft2(g) * scipy.fft.rfft2(wrapped), s=g.shape)
    return fftconvolve(g, kern, mode="same")


def mollify(mesh: Mesh, f, eps: float) -> np.ndarray:
    """Convolve nodal ``f`` with the scale-``eps`` bump (support radius eps/2).

    Periodic meshes wrap around; on the Dirichlet square ``f`` is extended by
    zero.  Vector fields of shape ``(n_nodes, k)`` are smoothed componentwise.
    Nodes whose kernel footprint sees only zeros of ``f`` get exactly 0.
    """
    f = mesh.check_nodal(f)
    if eps < 2.0 * mesh.h:
        raise ResolutionError(f"mollifier scale {eps} is below 2h = {2 * mesh.h}")
    if f.ndim == 2:
        return np.column_stack([mollify(mesh, f[:, c], eps) for c in range(f.shape[1])])
    kern = mollifier_kernel(mesh.h, eps)
    if mesh.periodic and kern.shape[0] > mesh.nx:
        raise ResolutionError("mollifier support exceeds the period")
    g = mesh.grid(f)
    out = _convolve(mesh, g, kern)
    reach = _convolve(mesh, (g != 0).astype(float), (kern > 0).astype(float))
    out[reach < 0.5] = 0.0
    return out.ravel()


def cutoff(mesh: Mesh, r: float) -> np.ndarray:
    """Boundary cut-off: 1 where dist >= 2r, 0 where dist <= r, linear between."""
    if mesh.periodic:
        raise InvalidArgumentError("cut-off is defined on the Dirichlet square only")
    if not r > 0:
        raise InvalidArgumentError("cut-off scale must be positive")
    d = distance_to_boundary(mesh.nodes)
    return np.clip((d - r) / r, 0.0, 1.0)


# -- serialization -----------------------------------------------------------

def write_field_csv(path, mesh: Mesh, values) -> None:
    """Row-major ``x,y,value`` (or ``x,y,vx,vy``) with 17 significant digits."""
    values = mesh.check_nodal(values)
    header = "x,y,value" if values.ndim == 1 else "x,y,vx,vy"
    cols = values[:, None] if values.ndim == 1 else values
    np.savetxt(path, np.column_stack([mesh.nodes, cols]), fmt="%.17g", delimiter=",",
               header=header, comments="")


def read_field_csv(path, mesh: Mesh | None = None) -> np.ndarray:
    """Read a field written by :func:`write_field_csv`; returns the values."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:2] != ["x", "y"] or len(header) not in (3, 4):
        raise InvalidArgumentError(f"{path}: unexpected header {header}")
    body = np.loadtxt(path, delimiter=",", skiprows=1, comments="#", ndmin=2)
    values = body[:, 2] if len(header) == 3 else body[:, 2:4]
    if mesh is not None:
        mesh.check_nodal(values)
        if not np.allclose(body[:, :2], mesh.nodes, atol=1e-12):
            raise InvalidArgumentError(f"{path}: node coordinates do not match {mesh}")
    return values
