"""Dirichlet problems on the unit square: oscillating and homogenized."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .cell import EffectiveTable
from .coefficients import CoefficientModel, get_model
from .errors import InvalidArgumentError
from .mesh import DIRICHLET, Mesh, build_mesh, interpolate, read_field_csv
from .solver import SolveOptions, SolveReport, solve_monotone

R0 = math.sqrt(2.0)  # diameter of the unit square

_NUM = r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*"


def _bump(cx=0.5, cy=0.5, amp=1.0):
    def f(x, y):
        s = 16.0 * ((x - cx) ** 2 + (y - cy) ** 2)
        out = np.zeros(np.broadcast(x, y).shape)
        inside = s < 1.0
        out[inside] = amp * np.exp(-1.0 / (1.0 - s[inside]))
        return out
    return f


def named_function(desc: str) -> Callable:
    """Analytic source / boundary descriptor -> ``f(x, y)``.

    Known names: ``zero``, ``one``, ``linear-x``, ``linear-y``,
    ``affine(a,b,c)``, ``constant(c)``, ``bump``, ``bump(cx,cy[,amp])``,
    ``quadratic-radial`` (``|x - (1/2,1/2)|^2 / 4``).
    """
    d = desc.strip()
    simple = {
        "zero": lambda x, y: np.zeros_like(x),
        "one": lambda x, y: np.ones_like(x),
        "linear-x": lambda x, y: x + 0.0,
        "linear-y": lambda x, y: y + 0.0,
        "bump": _bump(),
        "quadratic-radial": lambda x, y: ((x - 0.5) ** 2 + (y - 0.5) ** 2) / 4.0,
    }
    if d in simple:
        return simple[d]
    m = re.fullmatch(r"(affine|constant|bump)\((.*)\)", d)
    if m:
        try:
            args = [float(a) for a in m.group(2).split(",")]
        except ValueError:
            raise InvalidArgumentError(f"bad arguments in {desc!r}") from None
        kind = m.group(1)
        if kind == "affine" and len(args) == 3:
            a, b, c = args
            return lambda x, y: a * x + b * y + c
        if kind == "constant" and len(args) == 1:
            return lambda x, y: np.full(np.shape(x), args[0])
        if kind == "bump" and len(args) in (2, 3):
            return _bump(*args)
    raise InvalidArgumentError(f"unknown function descriptor {desc!r}")


def nodal_data(mesh: Mesh, desc: Union[str, np.ndarray]) -> np.ndarray:
    """Evaluate a descriptor (name, ``*.csv`` field file, or array) at the nodes."""
    if isinstance(desc, np.ndarray):
        return mesh.check_nodal(desc).copy()
    if desc.endswith(".csv"):
        return read_field_csv(desc, mesh)
    return interpolate(mesh, named_function(desc))


@dataclass
class BvpSpec:
    model: str
    epsilon: float
    n: int
    F: Union[str, np.ndarray] = "zero"
    g: Union[str, np.ndarray] = "zero"
    opts: SolveOptions = field(default_factory=SolveOptions)

    def periods(self) -> int:
        """Number of periods per side, ``1/epsilon``."""
        k = round(1.0 / self.epsilon)
        if abs(k * self.epsilon - 1.0) > 1e-12:
            raise InvalidArgumentError(f"epsilon={self.epsilon} is not 1/k for an integer k")
        return k

    def validate(self) -> None:
        if self.epsilon < 0:
            raise InvalidArgumentError("epsilon must be >= 0")
        if self.epsilon > 0:
            k = self.periods()
            if self.n % k or self.n // k < 32:
                raise InvalidArgumentError(
                    f"n={self.n} must be a multiple of 1/epsilon={k} with n*epsilon >= 32")


@dataclass
class LinearEffective:
    """Closed-form linear effective map ``xi -> M xi``."""
    matrix: np.ndarray

    @property
    def mu0(self) -> float:
        sym = 0.5 * (self.matrix + self.matrix.T)
        return float(np.linalg.eigvalsh(sym)[0])

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def __call__(self, xi):
        return np.asarray(xi, dtype=float) @ self.matrix.T


def closed_form_effective(model: Union[str, CoefficientModel]) -> LinearEffective:
    """Exact effective matrices for the identity and the laminate."""
    name = model if isinstance(model, str) else model.name
    if name == "identity":
        return LinearEffective(np.eye(2))
    if name == "laminate":
        # harmonic mean across the layers, arithmetic mean along them
        return LinearEffective(np.diag([math.sqrt(3.0), 2.0]))
    raise InvalidArgumentError(f"no closed-form effective map for model {name!r}")


def _boundary_and_source(spec: BvpSpec, mesh: Mesh):
    return nodal_data(mesh, spec.F), nodal_data(mesh, spec.g)


def solve_multiscale(spec: BvpSpec, u_init=None) -> tuple[np.ndarray, SolveReport]:
    """Solve ``-div A(x/eps, grad u) = F`` in the square, ``u = g`` on the boundary."""
    spec.validate()
    if not spec.epsilon > 0:
        raise InvalidArgumentError("solve_multiscale needs epsilon > 0")
    model = get_model(spec.model)
    mesh = build_mesh(spec.n, DIRICHLET)
    F, g = _boundary_and_source(spec, mesh)
    flux = model.bind(mesh.barycenters / spec.epsilon)
    return solve_monotone(mesh, flux, F, g, spec.opts, mu0=model.mu0, mu2=model.mu2,
                          u_init=u_init)


def solve_homogenized(spec: BvpSpec, effective: Optional[Union[EffectiveTable, LinearEffective]] = None,
                      u_init=None) -> tuple[np.ndarray, SolveReport]:
    """Solve ``-div A_eff(grad u) = F`` in the square, ``u = g`` on the boundary.

    ``effective`` defaults to the closed form when one exists.  With a table,
    any iterate gradient outside the table box raises :class:`RangeError`.
    """
    spec.validate()
    model = get_model(spec.model)
    if effective is None:
        effective = closed_form_effective(model)
    mesh = build_mesh(spec.n, DIRICHLET)
    F, g = _boundary_and_source(spec, mesh)
    mu0 = model.mu0
    if effective.mu0 > 0:
        mu0 = min(mu0, effective.mu0)
    lip = max(effective.lipschitz, mu0)
    return solve_monotone(mesh, effective, F, g, spec.opts, mu0=mu0, mu2=lip, u_init=u_init)
