"""Cell-centred grid functions on the unit square and their difference operators.

Storage convention: a grid function of size ``n`` is an ``(n, n)`` array
``a`` with ``a[j, i] = u_{i,j}``, so ``i`` is the column (x direction, axis 1)
and ``j`` the row (y direction, axis 0).  Flattening in C order therefore
gives the row-major layout ``u_{i,j} -> j * n + i``.

Boundary handling follows the ghost-cell Neumann convention: the values just
outside the grid copy their neighbours (``u_{-1,j} = u_{0,j}``,
``u_{N,j} = u_{N-1,j}`` and likewise in ``j``), so one-sided differences that
reach across the boundary vanish.

The divergences are the negative transposes of the gradients with respect to
the h^2-weighted inner product, i.e. ``<-div+ p, u> = <p, grad+ u>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "GridFunction",
    "VectorField",
    "GridMismatchError",
    "grad_forward",
    "grad_backward",
    "div_forward",
    "div_backward",
    "inner",
    "norm",
    "translate_x",
    "translate_y",
    "project_cell_average",
]


class GridMismatchError(ValueError):
    """Raised when two grid objects of different size are combined."""


def _frozen(values, n: int | None = None) -> np.ndarray:
    a = np.array(values, dtype=np.float64)
    if a.ndim == 1:
        if n is None:
            n = int(round(np.sqrt(a.size)))
        if n * n != a.size:
            raise ValueError(f"cannot reshape {a.size} values into a square grid")
        a = a.reshape(n, n)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"grid values must be square, got shape {a.shape}")
    if a.shape[0] < 2:
        raise ValueError("grid size must be at least 2")
    if not np.all(np.isfinite(a)):
        raise ValueError("grid values must be finite")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-constant function on the ``n x n`` cell grid of [0, 1]^2.

    ``values`` may be given as an ``(n, n)`` array indexed ``[j, i]`` or as a
    flat row-major sequence of length ``n**2``.  The stored array is a
    read-only copy.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    @classmethod
    def constant(cls, n: int, c: float) -> "GridFunction":
        return cls(np.full((n, n), float(c)))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __getitem__(self, ij):
        i, j = ij
        return self.values[j, i]

    def __add__(self, other):
        if isinstance(other, GridFunction):
            _check_same(self, other)
            return GridFunction(self.values + other.values)
        return GridFunction(self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            _check_same(self, other)
            return GridFunction(self.values - other.values)
        return GridFunction(self.values - other)

    def __rsub__(self, other):
        return GridFunction(other - self.values)

    def __mul__(self, c):
        return GridFunction(self.values * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return GridFunction(self.values / c)

    def __neg__(self):
        return GridFunction(-self.values)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Pair of grid arrays: x-components ``px`` and y-components ``py``."""

    px: np.ndarray
    py: np.ndarray

    def __post_init__(self):
        px = _frozen(self.px)
        py = _frozen(self.py)
        if px.shape != py.shape:
            raise GridMismatchError(f"component shapes differ: {px.shape} vs {py.shape}")
        object.__setattr__(self, "px", px)
        object.__setattr__(self, "py", py)

    @property
    def n(self) -> int:
        return self.px.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def magnitude_squared(self) -> np.ndarray:
        return self.px * self.px + self.py * self.py

    def scaled(self, w) -> "VectorField":
        """Multiply both components by the per-cell scalar ``w``."""
        w = w.values if isinstance(w, GridFunction) else w
        return VectorField(self.px * w, self.py * w)


def _check_same(a, b):
    if a.n != b.n:
        raise GridMismatchError(f"incompatible grids: n={a.n} vs n={b.n}")


# Array kernels.  These operate on raw (n, n) arrays and are used directly by
# the solver's inner loops; the public functions below wrap them.


def fwd_diff(a: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    px = np.zeros_like(a)
    py = np.zeros_like(a)
    px[:, :-1] = (a[:, 1:] - a[:, :-1]) / h
    py[:-1, :] = (a[1:, :] - a[:-1, :]) / h
    return px, py


def bwd_diff(a: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    px = np.zeros_like(a)
    py = np.zeros_like(a)
    px[:, 1:] = (a[:, 1:] - a[:, :-1]) / h
    py[1:, :] = (a[1:, :] - a[:-1, :]) / h
    return px, py


def fwd_div(px: np.ndarray, py: np.ndarray, h: float) -> np.ndarray:
    # -transpose of fwd_diff: the last column of px (last row of py) never enters
    out = np.zeros_like(px)
    out[:, :-1] += px[:, :-1]
    out[:, 1:] -= px[:, :-1]
    out[:-1, :] += py[:-1, :]
    out[1:, :] -= py[:-1, :]
    return out / h


def bwd_div(px: np.ndarray, py: np.ndarray, h: float) -> np.ndarray:
    # -transpose of bwd_diff: the first column of px (first row of py) never enters
    out = np.zeros_like(px)
    out[:, :-1] += px[:, 1:]
    out[:, 1:] -= px[:, 1:]
    out[:-1, :] += py[1:, :]
    out[1:, :] -= py[1:, :]
    return out / h


def grad_forward(u: GridFunction) -> VectorField:
    """Forward differences ``((u_{i+1,j}-u_{i,j})/h, (u_{i,j+1}-u_{i,j})/h)``."""
    return VectorField(*fwd_diff(u.values, u.h))


def grad_backward(u: GridFunction) -> VectorField:
    """Backward differences ``((u_{i,j}-u_{i-1,j})/h, (u_{i,j}-u_{i,j-1})/h)``."""
    return VectorField(*bwd_diff(u.values, u.h))


def div_forward(p: VectorField) -> GridFunction:
    """Discrete divergence with ``<-div_forward(p), u> = <p, grad_forward(u)>``.

    Away from the boundary this is the backward difference
    ``(px_{i,j} - px_{i-1,j})/h + (py_{i,j} - py_{i,j-1})/h``.  In the first
    column it reduces to ``px_{0,j}/h`` and in the last to ``-px_{N-2,j}/h``.
    """
    return GridFunction(fwd_div(p.px, p.py, p.h))


def div_backward(p: VectorField) -> GridFunction:
    """Discrete divergence with ``<-div_backward(p), u> = <p, grad_backward(u)>``."""
    return GridFunction(bwd_div(p.px, p.py, p.h))


def inner(u, v) -> float:
    """h^2-weighted inner product of two grid functions or two vector fields."""
    _check_same(u, v)
    h2 = u.h * u.h
    if isinstance(u, VectorField):
        return float((np.sum(u.px * v.px) + np.sum(u.py * v.py)) * h2)
    return float(np.sum(u.values * v.values) * h2)


def norm(u) -> float:
    return float(np.sqrt(inner(u, u)))


def translate_x(u: GridFunction) -> GridFunction:
    """``(T u)_{i,j} = u_{i+1,j}`` with the Neumann ghost ``u_{N,j} = u_{N-1,j}``."""
    a = u.values
    return GridFunction(np.concatenate([a[:, 1:], a[:, -1:]], axis=1))


def translate_y(u: GridFunction) -> GridFunction:
    """``(T u)_{i,j} = u_{i,j+1}`` with the Neumann ghost ``u_{i,N} = u_{i,N-1}``."""
    a = u.values
    return GridFunction(np.concatenate([a[1:, :], a[-1:, :]], axis=0))


def project_cell_average(
    sampler: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n: int,
    s: int = 8,
) -> GridFunction:
    """Approximate cell averages of ``sampler(x, y)`` by an s x s midpoint rule.

    ``sampler`` is called once with broadcastable coordinate arrays and must
    return values of the same shape.  Sources that are constant on each cell
    are reproduced exactly.
    """
    if n < 2:
        raise ValueError("grid size must be at least 2")
    if s < 1:
        raise ValueError("subsample count must be positive")
    h = 1.0 / n
    offsets = (np.arange(s) + 0.5) / s
    x = ((np.arange(n)[:, None] + offsets[None, :]) * h).reshape(-1)
    # rows follow y, columns follow x
    vals = np.asarray(sampler(x[None, :], x[:, None]), dtype=np.float64)
    vals = np.broadcast_to(vals, (n * s, n * s))
    if not np.all(np.isfinite(vals)):
        raise ValueError("sampler returned non-finite values")
    blocks = vals.reshape(n, s, n, s)
    lo = blocks.min(axis=(1, 3))
    hi = blocks.max(axis=(1, 3))
    # summation rounding must not perturb cells on which the source is constant
    return GridFunction(np.where(lo == hi, lo, blocks.mean(axis=(1, 3))))
