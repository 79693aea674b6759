"""Admissible monotone coefficient fields A(y, z) and the built-in examples.

A model is a map ``(y, z) -> A(y, z)`` that is 1-periodic in ``y`` and,
in the gradient slot ``z``, strongly monotone with constant ``mu0`` and
Lipschitz with constant ``mu2``.  All evaluations are vectorized over the
leading axes: ``y`` and ``z`` have shape ``(..., 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class CoefficientModel:
    name: str
    flux_map: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mu0: float
    mu2: float
    mu1: float = 0.0
    tau: float = 1.0
    # y -> (z -> A(y, z)); lets callers hoist the y-dependent work out of
    # solver loops.  Falls back to flux_map when absent.
    binder: Optional[Callable[[np.ndarray], Callable[[np.ndarray], np.ndarray]]] = field(
        default=None, repr=False, compare=False
    )

    def __call__(self, y, z):
        return self.flux_map(np.mod(y, 1.0), z)

    def bind(self, y):
        """Freeze the cell variable and return ``z -> A(y, z)``."""
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        if self.binder is not None:
            return self.binder(y)
        return lambda z: self.flux_map(y, z)


def _scaled(weight, profile):
    """Model of the form A(y, z) = weight(y) * profile(z)."""

    def flux_map(y, z):
        return weight(y)[..., None] * profile(np.asarray(z, dtype=float))

    def binder(y):
        a = weight(y)[..., None]
        return lambda z: a * profile(np.asarray(z, dtype=float))

    return flux_map, binder


def _unit_weight(y):
    return np.ones(np.shape(y)[:-1])


def laminate_weight(y):
    """a(t) = 2 + sin(2 pi t) acting on the first cell coordinate."""
    return 2.0 + np.sin(TWO_PI * y[..., 0])


def smooth_weight(y):
    """a(y) = 1 + 0.5 sin(2 pi y1) sin(2 pi y2)."""
    return 1.0 + 0.5 * np.sin(TWO_PI * y[..., 0]) * np.sin(TWO_PI * y[..., 1])


def _linear_profile(z):
    return z


def _saturating_profile(z):
    # z + 0.5 z / sqrt(1 + |z|^2): gradient of |z|^2/2 + 0.5 sqrt(1 + |z|^2)
    s = np.sqrt(1.0 + np.sum(z * z, axis=-1))
    return z + 0.5 * z / s[..., None]


def _make(name, weight, profile, mu0, mu2, mu1):
    flux_map, binder = _scaled(weight, profile)
    return CoefficientModel(name=name, flux_map=flux_map, mu0=mu0, mu2=mu2,
                            mu1=mu1, tau=1.0, binder=binder)


IDENTITY = _make("identity", _unit_weight, _linear_profile, 1.0, 1.0, 0.0)
LAMINATE = _make("laminate", laminate_weight, _linear_profile, 1.0, 3.0, TWO_PI)
SMOOTH2D = _make("smooth2d", smooth_weight, _linear_profile, 0.5, 1.5, np.pi)
NONLINEAR = _make("nonlinear", smooth_weight, _saturating_profile, 0.5, 2.25, 1.5 * np.pi)

BUILTIN_MODELS = {m.name: m for m in (IDENTITY, LAMINATE, SMOOTH2D, NONLINEAR)}


def get_model(name: str) -> CoefficientModel:
    try:
        return BUILTIN_MODELS[name]
    except KeyError:
        known = ", ".join(sorted(BUILTIN_MODELS))
        raise InvalidArgumentError(f"unknown model {name!r} (known: {known})") from None


def flux(model: CoefficientModel, y, z) -> np.ndarray:
    """Evaluate A(y mod 1, z) at a single point."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if y.shape != (2,) or z.shape != (2,):
        raise InvalidArgumentError("flux expects 2-vectors y and z")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
        raise InvalidArgumentError("flux arguments must be finite")
    return model(y, z)


def estimate_structure_constants(model: CoefficientModel, n_samples: int, seed: int = 0,
                                 box: float = 10.0) -> tuple[float, float]:
    """Sampled monotonicity margin and Lipschitz ratio of ``model``.

    Returns ``(mu0_emp, mu2_emp)``: the minimum of <dA, dz>/|dz|^2 and the
    maximum of |dA|/|dz| over ``n_samples`` random triples (y, z, z') with
    z, z' uniform in ``[-box, box]^2``.
    """
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    y = rng.random((n_samples, 2))
    z1 = rng.uniform(-box, box, (n_samples, 2))
    z2 = rng.uniform(-box, box, (n_samples, 2))
    same = np.all(z1 == z2, axis=1)
    while np.any(same):
        z2[same] = rng.uniform(-box, box, (int(same.sum()), 2))
        same = np.all(z1 == z2, axis=1)
    dz = z1 - z2
    dA = model(y, z1) - model(y, z2)
    dz2 = np.sum(dz * dz, axis=1)
    margin = np.sum(dA * dz, axis=1) / dz2
    ratio = np.sqrt(np.sum(dA * dA, axis=1) / dz2)
    return float(margin.min()), float(ratio.max())
