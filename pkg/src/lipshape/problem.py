"""Problem data for ``-Lap u + g(u) = f`` and tracking-type integrands.

Integrand callables take ``(x, u, z)`` where ``x`` has shape ``(..., 2)``,
``u`` shape ``(...)`` and ``z = grad u`` shape ``(..., 2)``.  Derivatives
follow the convention ``j_x = d/dx``, ``j_u = d/du``, ``j_z = d/dz``.

Admissible data: ``g`` twice continuously differentiable and nondecreasing,
``f`` in ``H^1(D)``, and ``j`` obeying the usual growth bounds in ``u`` and
``z`` (quadratic in ``z``).  Only monotonicity of ``g`` is checked at
runtime; the growth bounds are the caller's responsibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .mesh import DEFAULT_HOLDALL, Rectangle

__all__ = [
    "ProblemSpec",
    "ConsistencyReport",
    "tracking_instance",
    "verify_derivative_consistency",
    "u_star",
    "u_desired",
    "LINEAR_BALL_RADIUS",
    "with_overrides",
]

#: radius of the ball on which the manufactured state vanishes, 4/sqrt(3 pi)
LINEAR_BALL_RADIUS = 4.0 / np.sqrt(3.0 * np.pi)

# fixed seed for the randomized self-checks
CHECK_SEED = 20240917


@dataclass(frozen=True)
class ProblemSpec:
    g: Callable
    dg: Callable
    d2g: Callable
    f: Callable
    grad_f: Callable
    j: Callable
    j_u: Callable
    j_z: Callable
    j_x: Callable
    holdall: Rectangle = DEFAULT_HOLDALL
    name: str = "custom"
    check_monotone: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.check_monotone:
            t = np.random.default_rng(CHECK_SEED).uniform(-20.0, 20.0, 1000)
            if np.any(np.asarray(self.dg(t)) < 0):
                raise ValueError("g must be nondecreasing (g' >= 0)")


def u_star(x):
    x = np.asarray(x)
    return 4.0 / (3.0 * np.pi) - 0.25 * np.sum(x * x, axis=-1)


def u_desired(x):
    x = np.asarray(x)
    return 4.0 / np.pi - np.sum(x * x, axis=-1)


def tracking_instance(holdall: Rectangle = DEFAULT_HOLDALL) -> ProblemSpec:
    """``g = exp/2``, ``f = 1 + g(u*)`` and ``j = (u - u_d)^2 / 2``."""

    def g(t):
        return 0.5 * np.exp(t)

    def f(x):
        return 1.0 + g(u_star(x))

    def grad_f(x):
        x = np.asarray(x)
        return g(u_star(x))[..., None] * (-0.5 * x)

    def j(x, u, z):
        return 0.5 * (u - u_desired(x)) ** 2

    def j_u(x, u, z):
        return u - u_desired(x)

    def j_z(x, u, z):
        return np.zeros(np.shape(z))

    def j_x(x, u, z):
        return (u - u_desired(x))[..., None] * (2.0 * np.asarray(x))

    return ProblemSpec(g, g, g, f, grad_f, j, j_u, j_z, j_x, holdall, name="tracking")


@dataclass
class ConsistencyReport:
    passed: bool
    mismatches: dict
    tolerance: float
    failed: list

    def __str__(self):
        rows = [f"{k}: {v:.3e}" for k, v in self.mismatches.items()]
        status = "pass" if self.passed else "FAIL (" + ", ".join(self.failed) + ")"
        return f"derivative consistency {status}; " + "; ".join(rows)


def verify_derivative_consistency(
    spec: ProblemSpec, samples: int = 50, h: float = 1e-4, seed: int = CHECK_SEED
) -> ConsistencyReport:
    """Compare supplied derivatives with central differences at random points.

    The relative mismatch of each field must stay below ``100 h^2``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    rng = np.random.default_rng(seed)
    hd = spec.holdall
    x = np.column_stack(
        [rng.uniform(hd.xmin, hd.xmax, samples), rng.uniform(hd.ymin, hd.ymax, samples)]
    )
    u = rng.uniform(-2.0, 2.0, samples)
    z = rng.uniform(-2.0, 2.0, (samples, 2))
    e = np.eye(2)

    def central(fun, shift):
        return (fun(shift(h)) - fun(shift(-h))) / (2 * h)

    checks = {
        "g'": (central(spec.g, lambda s: u + s), spec.dg(u)),
        "g''": (central(spec.dg, lambda s: u + s), spec.d2g(u)),
        "grad_f": (
            np.column_stack([central(spec.f, lambda s, k=k: x + s * e[k]) for k in range(2)]),
            spec.grad_f(x),
        ),
        "j_u": (central(lambda uu: spec.j(x, uu, z), lambda s: u + s), spec.j_u(x, u, z)),
        "j_z": (
            np.column_stack(
                [central(lambda zz: spec.j(x, u, zz), lambda s, k=k: z + s * e[k]) for k in range(2)]
            ),
            spec.j_z(x, u, z),
        ),
        "j_x": (
            np.column_stack(
                [central(lambda xx: spec.j(xx, u, z), lambda s, k=k: x + s * e[k]) for k in range(2)]
            ),
            spec.j_x(x, u, z),
        ),
    }
    tol = 100 * h**2
    mismatches = {}
    for name, (fd, exact) in checks.items():
        fd = np.broadcast_to(np.asarray(fd, dtype=float), np.shape(exact))
        exact = np.asarray(exact, dtype=float)
        scale = max(1.0, float(np.max(np.abs(exact))))
        mismatches[name] = float(np.max(np.abs(fd - exact))) / scale
    failed = [k for k, v in mismatches.items() if not v <= tol]
    return ConsistencyReport(not failed, mismatches, tol, failed)


def with_overrides(spec: ProblemSpec, **kwargs) -> ProblemSpec:
    """Copy of ``spec`` with some fields replaced (monotonicity rechecked)."""
    return replace(spec, **kwargs)
