"""Post-processing of trajectories: the piecewise-linear space-time interpolant,
continuous energies of that interpolant, discrete audits and refinement studies.

Mesh
----
The interpolant lives on the three-direction triangulation whose vertices are
the cell centres ``((i + 1/2) h, (j + 1/2) h)``.  Every square between four
neighbouring centres is cut along the direction ``(-1, 1)``, so the lower-left
triangle of the square anchored at ``(i, j)`` has gradient ``grad+ u_{i,j}``
and the upper-right one has gradient ``grad- u_{i+1,j+1}``.

The frame of width ``h/2`` between the outermost centres and the boundary of
the unit square is not covered by triangles.  There the interpolant takes the
value of the nearest cell centre, i.e. the value of the containing cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .energy import EnergyParams, J_h
from .grid import GridFunction, bwd_diff, fwd_diff, project_cell_average
from .solver import SolverConfig, Trajectory, evolve

__all__ = [
    "Interpolant",
    "interpolant_eval",
    "evaluate_piecewise_linear",
    "continuous_J_of_interpolant",
    "interpolant_cell_gap",
    "tv_equality_gap",
    "derivative_energy_audit",
    "translation_modulus",
    "lip_seminorm_estimate",
    "RefinementSchedule",
    "StudyRow",
    "StudyResult",
    "refinement_study",
]

_SNAP = 1e-10


# -- spatial interpolation --------------------------------------------------


def evaluate_piecewise_linear(a: np.ndarray, x, y) -> np.ndarray:
    """Evaluate the interpolant of the cell array ``a`` (indexed ``[j, i]``) at points.

    ``x`` and ``y`` broadcast against each other and must lie in [0, 1].
    """
    n = a.shape[0]
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if np.any((x < 0) | (x > 1) | (y < 0) | (y > 1)):
        raise ValueError("evaluation point outside the unit square")
    gx = x * n - 0.5
    gy = y * n - 0.5
    # snap coordinates that are within rounding of a vertex line
    rx, ry = np.rint(gx), np.rint(gy)
    gx = np.where(np.abs(gx - rx) < _SNAP, rx, gx)
    gy = np.where(np.abs(gy - ry) < _SNAP, ry, gy)

    inside = (gx >= 0) & (gx <= n - 1) & (gy >= 0) & (gy <= n - 1)
    out = np.empty(x.shape)

    # frame: value of the containing cell
    ci = np.clip(np.floor(x * n).astype(int), 0, n - 1)
    cj = np.clip(np.floor(y * n).astype(int), 0, n - 1)
    out[~inside] = a[cj[~inside], ci[~inside]]

    gxi, gyi = gx[inside], gy[inside]
    i0 = np.minimum(np.floor(gxi).astype(int), n - 2)
    j0 = np.minimum(np.floor(gyi).astype(int), n - 2)
    s = gxi - i0
    t = gyi - j0
    va = a[j0, i0]
    vb = a[j0, i0 + 1]
    vc = a[j0 + 1, i0]
    vd = a[j0 + 1, i0 + 1]
    lower = s + t <= 1
    val = np.where(
        lower,
        va + s * (vb - va) + t * (vc - va),
        vd + (1 - s) * (vc - vd) + (1 - t) * (vb - vd),
    )
    out[inside] = val
    return out


@dataclass
class Interpolant:
    """Piecewise-linear in space, linear in time interpolant of a trajectory."""

    trajectory: Trajectory

    @property
    def n(self) -> int:
        return self.trajectory.states[0].n

    @property
    def dt(self) -> float:
        return self.trajectory.config.dt

    @property
    def horizon(self) -> float:
        return self.dt * (len(self.trajectory.states) - 1)

    def time_weights(self, t: float) -> tuple[int, float]:
        """Return ``(k, theta)`` with ``U(t) = theta U_k + (1 - theta) U_{k-1}``."""
        if not (0.0 <= t <= self.horizon):
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        m = len(self.trajectory.states) - 1
        r = t / self.dt
        kr = round(r)
        if abs(r - kr) < _SNAP:
            return int(kr), 1.0
        k = min(max(math.ceil(r), 1), m)
        return k, r - (k - 1)

    def state_at(self, t: float) -> np.ndarray:
        """Cell values of the time-blended state ``u^h(t)``."""
        states = self.trajectory.states
        k, theta = self.time_weights(t)
        if theta == 1.0:
            return np.array(states[k].values)
        return theta * states[k].values + (1 - theta) * states[k - 1].values

    def __call__(self, x, y, t: float):
        return evaluate_piecewise_linear(self.state_at(t), x, y)


def interpolant_eval(traj: Trajectory, x: Sequence[float], t: float) -> float:
    """Value of the space-time interpolant of ``traj`` at point ``x`` and time ``t``."""
    px, py = x
    return float(Interpolant(traj)(px, py, t))


# -- triangle geometry ------------------------------------------------------


def _triangle_gradients(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients and areas of all mesh triangles from vertex coordinates.

    Works from the geometry (a 2x2 solve per triangle) rather than from the
    difference operators, so comparisons against the discrete functional are
    not circular.
    """
    n = a.shape[0]
    h = 1.0 / n
    c = (np.arange(n) + 0.5) * h
    jj, ii = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
    tris = []
    for verts in (
        ((0, 0), (1, 0), (0, 1)),  # lower-left
        ((1, 1), (0, 1), (1, 0)),  # upper-right
    ):
        pts = []
        vals = []
        for di, dj in verts:
            pts.append(np.stack([c[ii + di], c[jj + dj]], axis=-1))
            vals.append(a[jj + dj, ii + di])
        e1 = pts[1] - pts[0]
        e2 = pts[2] - pts[0]
        mat = np.stack([e1, e2], axis=-2)
        rhs = np.stack([vals[1] - vals[0], vals[2] - vals[0]], axis=-1)
        grad = np.linalg.solve(mat, rhs[..., None])[..., 0]
        area = 0.5 * np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])
        tris.append((grad, area))
    grads = np.concatenate([g.reshape(-1, 2) for g, _ in tris])
    areas = np.concatenate([ar.reshape(-1) for _, ar in tris])
    return grads, areas


def _interior_variation(a: np.ndarray, epsilon: float) -> float:
    grads, areas = _triangle_gradients(a)
    return float(np.sum(areas * np.sqrt(epsilon + np.sum(grads * grads, axis=1))))


def _frame_area(n: int) -> float:
    h = 1.0 / n
    return 2 * h - h * h


# Sub-triangles (in square-local coordinates s, t in [0, 1]) that split each
# mesh triangle along cell boundaries; the third entry is the cell offset.
_LOWER_PIECES = (
    (((0, 0), (0.5, 0), (0, 0.5)), (0, 0)),
    (((0.5, 0), (0.5, 0.5), (0, 0.5)), (0, 0)),
    (((0.5, 0), (1, 0), (0.5, 0.5)), (1, 0)),
    (((0, 0.5), (0.5, 0.5), (0, 1)), (0, 1)),
)
_UPPER_PIECES = (
    (((1, 1), (0.5, 1), (1, 0.5)), (1, 1)),
    (((0.5, 1), (0.5, 0.5), (1, 0.5)), (1, 1)),
    (((1, 0), (1, 0.5), (0.5, 0.5)), (1, 0)),
    (((0, 1), (0.5, 0.5), (0.5, 1)), (0, 1)),
)


def _squared_distance_to_cells(a: np.ndarray, c: np.ndarray) -> float:
    """Exact ``integral (U[a] - c^h)^2`` with ``c^h`` piecewise constant on cells.

    Each mesh triangle is split into four pieces lying in a single cell; on a
    piece the integrand is a quadratic polynomial, integrated exactly by the
    edge-midpoint rule.  The frame contributes ``area * (a - c)^2`` per cell.
    """
    n = a.shape[0]
    h2 = 1.0 / (n * n)
    va = a[:-1, :-1]
    vb = a[:-1, 1:]
    vc = a[1:, :-1]
    vd = a[1:, 1:]
    total = 0.0
    for pieces, lower in ((_LOWER_PIECES, True), (_UPPER_PIECES, False)):
        for verts, (oi, oj) in pieces:
            cell = c[oj : n - 1 + oj, oi : n - 1 + oi]
            acc = 0.0
            for k in range(3):
                s = 0.5 * (verts[k][0] + verts[(k + 1) % 3][0])
                t = 0.5 * (verts[k][1] + verts[(k + 1) % 3][1])
                if lower:
                    val = va + s * (vb - va) + t * (vc - va)
                else:
                    val = vd + (1 - s) * (vc - vd) + (1 - t) * (vb - vd)
                acc = acc + (val - cell) ** 2
            total += float(np.sum(acc)) * (h2 / 8) / 3
    d = (a - c) ** 2
    frame = np.zeros_like(a)
    frame[0, :] = frame[-1, :] = frame[:, 0] = frame[:, -1] = 0.5 * h2
    frame[0, 0] = frame[0, -1] = frame[-1, 0] = frame[-1, -1] = 0.75 * h2
    total += float(np.sum(frame * d))
    return total


def continuous_J_of_interpolant(u: GridFunction, f: GridFunction, params: EnergyParams) -> float:
    """``int sqrt(eps + |grad U|^2) + 1/(2 lam) int (U - f^h)^2`` for the interpolant ``U`` of ``u``."""
    a = u.values
    variation = _interior_variation(a, params.epsilon) + _frame_area(u.n) * math.sqrt(params.epsilon)
    return variation + _squared_distance_to_cells(a, f.values) / (2 * params.lam)


def interpolant_cell_gap(u: GridFunction) -> float:
    """L2 distance between the interpolant of ``u`` and ``u`` as a step function."""
    return math.sqrt(max(_squared_distance_to_cells(u.values, u.values), 0.0))


def tv_equality_gap(u: GridFunction, params: EnergyParams) -> tuple[float, float]:
    """Compare the variation of the interpolant with the discrete variation.

    ``interior_gap`` restricts both sides to the triangulated region: the
    triangle sum against half the forward terms with ``i, j <= N-2`` plus half
    the backward terms with ``i, j >= 1``.  These agree exactly up to rounding.
    ``full_gap`` compares the whole domain, frame included, against the full
    discrete variation; the mismatch lives on the frame and is O(h).
    """
    a = u.values
    h = u.h
    eps = params.epsilon
    tri = _interior_variation(a, eps)

    px, py = fwd_diff(a, h)
    fwd = np.sqrt(eps + px * px + py * py) * h * h
    px, py = bwd_diff(a, h)
    bwd = np.sqrt(eps + px * px + py * py) * h * h
    interior_discrete = 0.5 * float(np.sum(fwd[:-1, :-1])) + 0.5 * float(np.sum(bwd[1:, 1:]))
    full_discrete = 0.5 * float(np.sum(fwd)) + 0.5 * float(np.sum(bwd))

    interior_gap = abs(tri - interior_discrete)
    full_gap = abs(tri + _frame_area(u.n) * math.sqrt(eps) - full_discrete)
    return interior_gap, full_gap


# -- discrete audits --------------------------------------------------------


def derivative_energy_audit(traj: Trajectory) -> tuple[float, float]:
    """Return ``(sum_k |u^k - u^{k-1}|^2 / dt, J_h(u^0) - J_h(u^M))``."""
    cfg = traj.config
    params = cfg.params
    states = traj.states
    h2 = states[0].h ** 2
    lhs = 0.0
    for prev, cur in zip(states[:-1], states[1:]):
        d = cur.values - prev.values
        lhs += float(np.sum(d * d)) * h2 / cfg.dt
    rhs = J_h(states[0], traj.f, params) - J_h(states[-1], traj.f, params)
    return lhs, rhs


def translation_modulus(u: GridFunction) -> tuple[float, float]:
    """``(|T_x u - u|, |T_y u - u|)`` with Neumann ghosts at the far edge."""
    a = u.values
    h = u.h
    mx = math.sqrt(float(np.sum((a[:, 1:] - a[:, :-1]) ** 2))) * h
    my = math.sqrt(float(np.sum((a[1:, :] - a[:-1, :]) ** 2))) * h
    return mx, my


def lip_seminorm_estimate(u: GridFunction, alpha: float, max_shift: int | None = None) -> float:
    """Discrete surrogate for the Lip(alpha, L2) seminorm.

    Maximum over axis-aligned shifts of ``d`` cells (``1 <= d <= max_shift``,
    default ``n // 2``) of ``|u(. + d h) - u|_{overlap} / (d h)^alpha``.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    a = u.values
    n, h = u.n, u.h
    dmax = n // 2 if max_shift is None else min(max_shift, n - 1)
    best = 0.0
    for d in range(1, max(dmax, 1) + 1):
        sx = float(np.sum((a[:, d:] - a[:, :-d]) ** 2))
        sy = float(np.sum((a[d:, :] - a[:-d, :]) ** 2))
        scale = (d * h) ** alpha
        best = max(best, math.sqrt(sx) * h / scale, math.sqrt(sy) * h / scale)
    return best


# -- refinement study -------------------------------------------------------


@dataclass(frozen=True)
class RefinementSchedule:
    """Grid/step pairs ``(N, M)`` over a horizon ``T``.

    The schedule is *coupled* when ``M / (T N^alpha)`` strictly decreases
    along the levels, the discrete form of ``h^alpha / dt -> 0``.
    """

    alpha: float
    horizon: float
    levels: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        levels = tuple((int(n), int(m)) for n, m in self.levels)
        if len(levels) < 1:
            raise ValueError("schedule needs at least one level")
        for n, m in levels:
            if n < 2 or m < 1:
                raise ValueError(f"invalid level (N={n}, M={m})")
        ns = [n for n, _ in levels]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError(f"grid sizes must strictly increase, got {ns}")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def power_law(cls, alpha: float, horizon: float, sizes, exponent: float | None = None):
        """Levels with ``M = max(1, round(T N^exponent))``; exponent defaults to ``alpha/2``."""
        p = alpha / 2 if exponent is None else exponent
        return cls(alpha, horizon, tuple((n, max(1, round(horizon * n**p))) for n in sizes))

    def ratios(self) -> list[float]:
        return [m / (self.horizon * n**self.alpha) for n, m in self.levels]

    @property
    def coupled(self) -> bool:
        r = self.ratios()
        return all(b < a for a, b in zip(r, r[1:]))


@dataclass
class StudyRow:
    n: int
    m: int
    dt: float
    dist_to_prev_level: float


@dataclass
class StudyResult:
    schedule: RefinementSchedule
    rows: list[StudyRow] = field(default_factory=list)

    @property
    def coupled(self) -> bool:
        return self.schedule.coupled

    @property
    def distances(self) -> list[float]:
        return [r.dist_to_prev_level for r in self.rows[1:]]


def refinement_study(
    source: Callable[[np.ndarray, np.ndarray], np.ndarray],
    schedule: RefinementSchedule,
    cfg_template: SolverConfig,
    time_samples: int = 17,
    subsamples: int = 8,
) -> StudyResult:
    """Solve on every level and measure consecutive L2(Omega_T) distances.

    ``source`` gives both the data ``f`` and the initial value.  Each level's
    interpolant is sampled at the finest level's cell centres on a uniform
    grid of ``time_samples`` times; distances use the trapezoid rule in time
    and the h^2-weighted sum in space.
    """
    T = schedule.horizon
    n_fine = schedule.levels[-1][0]
    centres = (np.arange(n_fine) + 0.5) / n_fine
    xs, ys = np.meshgrid(centres, centres)
    times = np.linspace(0.0, T, time_samples)

    result = StudyResult(schedule)
    prev = None
    for n, m in schedule.levels:
        f = project_cell_average(source, n, subsamples)
        cfg = replace(cfg_template, dt=T / m, steps=m)
        interp = Interpolant(evolve(f, f, cfg))
        samples = np.stack([interp(xs, ys, min(t, interp.horizon)) for t in times])
        if prev is None:
            dist = math.nan
        else:
            sq = np.sum((samples - prev) ** 2, axis=(1, 2)) / n_fine**2
            dist = math.sqrt(float(np.trapezoid(sq, times)))
        result.rows.append(StudyRow(n, m, cfg.dt, dist))
        prev = samples
    return result
