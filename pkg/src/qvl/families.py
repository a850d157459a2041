"""Closed-form sample fields used as test data and scenario generators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ParameterError, UsageError


@dataclass
class Family:
    """An analytic Q-valued map on R^m.

    ``func`` maps an (N, m) coordinate array to (N, Q, n) values; ``degree``
    is the homogeneity degree when the map is homogeneous about the origin.
    """

    name: str
    params: dict
    Q: int
    n: int
    func: Callable
    degree: float | None = None
    stationary: bool = True
    extra: dict = field(default_factory=dict)

    def __call__(self, coords):
        return self.func(np.asarray(coords, dtype=float))


def constant(value, Q: int = 1) -> Family:
    c = np.atleast_1d(np.asarray(value, dtype=float))
    if c.ndim == 1:
        c = np.tile(c, (Q, 1))
    Q, n = c.shape

    def func(x):
        return np.broadcast_to(c, (x.shape[0], Q, n)).copy()

    return Family("constant", {"value": c.tolist()}, Q, n, func, degree=0.0)


def linear(A) -> Family:
    """Single-valued f(x) = A x with A of shape (n, m)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]

    def func(x):
        return (x @ A.T)[:, None, :]

    return Family("linear", {"A": A.tolist()}, 1, n, func, degree=1.0)


def harmonic(k: int) -> Family:
    """Re (x1 + i x2)^k, single-valued and homogeneous of degree k."""
    if k < 1:
        raise ParameterError("harmonic degree must be at least 1")

    def func(x):
        z = x[:, 0] + 1j * x[:, 1]
        return np.real(z**k)[:, None, None]

    return Family("harmonic", {"k": int(k)}, 1, 1, func, degree=float(k))


def _half_power(x, k):
    r = np.hypot(x[:, 0], x[:, 1])
    t = np.arctan2(x[:, 1], x[:, 0])
    return r ** (k / 2.0), k * t / 2.0


def branch_pair(k: int = 1, complex_values: bool = False) -> Family:
    """The two-valued map {+w, -w} with w = Re z^(k/2), or w = z^(k/2) in R^2.

    The multiset is independent of the branch of the square root.
    """
    if k < 1:
        raise ParameterError("branch order must be at least 1")

    def func(x):
        rho, ang = _half_power(x, k)
        if complex_values:
            w = np.stack([rho * np.cos(ang), rho * np.sin(ang)], axis=1)
        else:
            w = (rho * np.cos(ang))[:, None]
        return np.stack([w, -w], axis=1)

    name = "branch-pair"
    return Family(name, {"k": int(k), "complex": bool(complex_values)}, 2,
                  2 if complex_values else 1, func, degree=k / 2.0)


def perturbed(base: Family, amplitude: float = 0.1, freq: float = 2.0) -> Family:
    """``base`` with every sheet shifted by amplitude * cos(freq pi x1) in its first coordinate.

    The shift has a large Laplacian, so the result is not stationary.
    """

    def func(x):
        vals = base(x).copy()
        vals[:, :, 0] += amplitude * np.cos(freq * math.pi * x[:, 0])[:, None]
        return vals

    return Family(f"perturbed-{base.name}", {"base": base.params, "amplitude": amplitude,
                                             "freq": freq}, base.Q, base.n, func,
                  degree=None, stationary=False)


def from_params(name: str, params: dict | None = None) -> Family:
    """Build a family from a scenario id and parameters."""
    params = dict(params or {})
    try:
        if name == "constant":
            return constant(params.get("value", [1.0]), int(params.get("Q", 1)))
        if name == "linear":
            return linear(params.get("A", [[1.0, 0.0]]))
        if name == "harmonic":
            return harmonic(int(params.get("k", 1)))
        if name == "branch-pair":
            return branch_pair(int(params.get("k", 1)), bool(params.get("complex", False)))
        if name == "perturbed":
            inner = params.get("base", {"family": "harmonic", "k": 1})
            inner = dict(inner)
            base = from_params(inner.pop("family"), inner)
            return perturbed(base, float(params.get("amplitude", 0.1)),
                             float(params.get("freq", 2.0)))
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"bad parameters for family {name!r}: {exc}") from exc
    raise UsageError(f"unknown family {name!r}")


FAMILIES = ("constant", "linear", "harmonic", "branch-pair", "perturbed", "radial-extension")
