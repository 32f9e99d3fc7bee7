"""Discrete energies of the regularised ROF flow and their gradients.

All quantities use the h^2-weighted sums of :mod:`rofflow.grid`, so
``variation_forward`` of a constant is ``sqrt(epsilon)`` regardless of ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, _check_same, bwd_diff, bwd_div, fwd_diff, fwd_div

__all__ = [
    "EnergyParams",
    "variation_forward",
    "variation_backward",
    "J_h",
    "E_h",
    "subgrad_Jh",
    "characterization_gap",
]


@dataclass(frozen=True)
class EnergyParams:
    epsilon: float
    lam: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


def _variation(px: np.ndarray, py: np.ndarray, epsilon: float, h: float) -> float:
    return float(np.sum(np.sqrt(epsilon + px * px + py * py)) * h * h)


def variation_forward(u: GridFunction, epsilon: float) -> float:
    """Sum of ``sqrt(epsilon + |grad+ u|^2) h^2`` over all cells."""
    return _variation(*fwd_diff(u.values, u.h), epsilon, u.h)


def variation_backward(u: GridFunction, epsilon: float) -> float:
    return _variation(*bwd_diff(u.values, u.h), epsilon, u.h)


def _misfit(u: GridFunction, f: GridFunction) -> float:
    d = u.values - f.values
    return float(np.sum(d * d) * u.h * u.h)


def J_h(u: GridFunction, f: GridFunction, params: EnergyParams) -> float:
    """Averaged forward/backward variation plus the fidelity term."""
    _check_same(u, f)
    eps = params.epsilon
    return (
        0.5 * variation_forward(u, eps)
        + 0.5 * variation_backward(u, eps)
        + _misfit(u, f) / (2.0 * params.lam)
    )


def E_h(
    v: GridFunction,
    u_prev: GridFunction,
    f: GridFunction,
    params: EnergyParams,
    dt: float,
) -> float:
    """Energy minimised by one implicit time step: ``J_h(v) + |v - u_prev|^2 / (2 dt)``."""
    _check_same(v, u_prev)
    return J_h(v, f, params) + _misfit(v, u_prev) / (2.0 * dt)


def flux_divergence(a: np.ndarray, epsilon: float, h: float) -> np.ndarray:
    """``1/2 div+(grad+ a / |.|_eps) + 1/2 div-(grad- a / |.|_eps)`` on raw arrays."""
    px, py = fwd_diff(a, h)
    w = 1.0 / np.sqrt(epsilon + px * px + py * py)
    out = 0.5 * fwd_div(px * w, py * w, h)
    px, py = bwd_diff(a, h)
    w = 1.0 / np.sqrt(epsilon + px * px + py * py)
    out += 0.5 * bwd_div(px * w, py * w, h)
    return out


def subgrad_Jh(u: GridFunction, f: GridFunction, params: EnergyParams) -> GridFunction:
    """Gradient of :func:`J_h` with respect to the h^2-weighted inner product.

    Per cell this is
    ``-1/2 div+(grad+ u / sqrt(eps + |grad+ u|^2))
    - 1/2 div-(grad- u / sqrt(eps + |grad- u|^2)) + (u - f) / lam``,
    i.e. the Euclidean gradient of ``J_h`` divided by ``h^2``.
    """
    _check_same(u, f)
    a = u.values
    return GridFunction(-flux_divergence(a, params.epsilon, u.h) + (a - f.values) / params.lam)


def characterization_gap(
    u_k: GridFunction,
    u_prev: GridFunction,
    v: GridFunction,
    f: GridFunction,
    params: EnergyParams,
    dt: float,
) -> float:
    """Optimality gap of a time step against the competitor ``v``.

    Returns ``<(u_k - u_prev)/dt, v - u_k> + J_h(v) - J_h(u_k)`` with every sum
    h^2-weighted.  It is non-negative for all ``v`` exactly when ``u_k`` solves
    the step from ``u_prev``.
    """
    _check_same(u_k, v)
    _check_same(u_k, u_prev)
    h2 = u_k.h * u_k.h
    rate = (u_k.values - u_prev.values) / dt
    return (
        float(np.sum(rate * (v.values - u_k.values)) * h2)
        + J_h(v, f, params)
        - J_h(u_k, f, params)
    )
