"""Semi-implicit time stepping for the regularised ROF gradient flow.

Each time step minimises ``E_h(v) = J_h(v) + |v - u_prev|^2 / (2 dt)`` by the
lagged-diffusivity fixed point: the nonlinear weights
``1 / sqrt(eps + |grad v|^2)`` are frozen at the previous inner iterate, which
leaves a symmetric positive-definite linear system

    (1/dt + 1/lam) v - 1/2 div+(w+ grad+ v) - 1/2 div-(w- grad- v)
        = u_prev / dt + f / lam

solved matrix-free by conjugate gradients.  Every inner iterate must lower
``E_h`` by at least ``|v_l - v_{l-1}|^2 / (2 lam)``; a violation is treated as
a bug and raised.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .energy import EnergyParams, E_h, J_h, flux_divergence
from .grid import (
    GridFunction,
    VectorField,
    _check_same,
    bwd_diff,
    bwd_div,
    fwd_diff,
    fwd_div,
    norm,
)

log = logging.getLogger(__name__)

ENERGY_TOL = 1e-10


class SolverError(RuntimeError):
    """Base class for numerical failures of the time stepper."""


class LinearSolveError(SolverError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


class InnerIterationError(SolverError):
    def __init__(self, msg, step_norm):
        super().__init__(msg)
        self.step_norm = step_norm


class EnergyDecreaseError(SolverError):
    pass


class StabilityError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1.0
    lam: float = 30.0
    dt: float = 0.1
    steps: int = 50
    tol_inner: float = 1e-8
    max_inner: int = 500
    cg_tol: float = 1e-10
    cg_max_iters: int = 20000

    def __post_init__(self):
        for name in ("epsilon", "lam", "dt", "tol_inner", "cg_tol"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        for name in ("steps", "max_inner", "cg_max_iters"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.tol_inner < 1:
            raise ValueError("tol_inner must be below 1")
        if self.cg_tol > self.tol_inner / 10:
            raise ValueError("cg_tol must not exceed tol_inner / 10")

    @property
    def params(self) -> EnergyParams:
        return EnergyParams(self.epsilon, self.lam)

    @property
    def horizon(self) -> float:
        return self.dt * self.steps


@dataclass
class StepDiagnostics:
    step_index: int
    inner_iterations: int
    energy_J: float
    energy_E: float
    step_norm: float
    residual_inf: float
    energy_decrements: list[float] = field(default_factory=list)
    # per inner iterate: |v_l - v_{l-1}| and |v_l|
    inner_step_norms: list[float] = field(default_factory=list)
    inner_norms: list[float] = field(default_factory=list)


@dataclass
class Trajectory:
    config: object
    f: GridFunction | None
    states: list[GridFunction]
    diagnostics: list[StepDiagnostics] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        stride = getattr(self.config, "record_every", 1)
        idx = np.minimum(np.arange(len(self.states)) * stride, self.config.steps)
        return idx * self.config.dt

    @property
    def final(self) -> GridFunction:
        return self.states[-1]


# -- linearised operator ---------------------------------------------------


def _weights(a: np.ndarray, epsilon: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    px, py = fwd_diff(a, h)
    wp = 1.0 / np.sqrt(epsilon + px * px + py * py)
    px, py = bwd_diff(a, h)
    wm = 1.0 / np.sqrt(epsilon + px * px + py * py)
    return wp, wm


def _edge_matrix(wp: np.ndarray, wm: np.ndarray, shift: float, h: float) -> sparse.csr_matrix:
    """Sparse form of the linearised operator on flattened (row-major) arrays.

    Both halves of the operator couple only nearest neighbours, so the sum is
    ``shift * I`` plus a graph Laplacian whose conductance on the edge between
    cells P and Q = P + e is ``(w+_P + w-_Q) / (2 h^2)``.
    """
    n = wp.shape[0]
    cx = (wp[:, :-1] + wm[:, 1:]) / (2 * h * h)  # edges (i,j)-(i+1,j)
    cy = (wp[:-1, :] + wm[1:, :]) / (2 * h * h)  # edges (i,j)-(i,j+1)
    diag = np.full((n, n), shift)
    diag[:, :-1] += cx
    diag[:, 1:] += cx
    diag[:-1, :] += cy
    diag[1:, :] += cy
    off_x = np.zeros((n, n))
    off_x[:, :-1] = -cx
    off_y = -cy.reshape(-1)
    off_x = off_x.reshape(-1)[:-1]
    return sparse.diags(
        [diag.reshape(-1), off_x, off_x, off_y, off_y],
        [0, 1, -1, n, -n],
        format="csr",
    )


def assemble_weights(v: GridFunction, epsilon: float) -> tuple[VectorField, VectorField]:
    """Frozen diffusivities ``1/sqrt(eps + |grad+- v|^2)``, one scalar per cell.

    Both components of each returned field carry the same value.
    """
    wp, wm = _weights(v.values, epsilon, v.h)
    return VectorField(wp, wp), VectorField(wm, wm)


def apply_linearized(
    v: GridFunction,
    w_plus: VectorField,
    w_minus: VectorField,
    lam: float,
    dt: float,
) -> GridFunction:
    """``(1/dt + 1/lam) v - 1/2 div+(w+ grad+ v) - 1/2 div-(w- grad- v)``."""
    h = v.h
    px, py = fwd_diff(v.values, h)
    out = (1.0 / dt + 1.0 / lam) * v.values
    out = out - 0.5 * fwd_div(w_plus.px * px, w_plus.py * py, h)
    px, py = bwd_diff(v.values, h)
    out = out - 0.5 * bwd_div(w_minus.px * px, w_minus.py * py, h)
    return GridFunction(out)


def _cg(apply, b: np.ndarray, x0: np.ndarray, tol: float, max_iters: int):
    """Plain conjugate gradients; returns ``(x, relative residual, iterations)``.

    Convergence is judged on the recomputed residual ``b - A x`` so the
    returned residual is the true one, not the recursively updated estimate.
    """
    bnorm = math.sqrt(float(np.vdot(b, b)))
    if bnorm == 0.0:
        return np.zeros_like(b), 0.0, 0
    x = x0.copy()
    r = b - apply(x)
    rr = float(np.vdot(r, r))
    target = (tol * bnorm) ** 2
    it = 0
    while it < max_iters:
        if rr <= target:
            r = b - apply(x)
            rr = float(np.vdot(r, r))
            if rr <= target:
                break
        p = r.copy()
        # inner restart loop; leaves when the recursive residual looks converged
        while it < max_iters:
            ap = apply(p)
            alpha = rr / float(np.vdot(p, ap))
            x += alpha * p
            r -= alpha * ap
            rr_new = float(np.vdot(r, r))
            it += 1
            if rr_new <= target:
                rr = rr_new
                break
            p *= rr_new / rr
            p += r
            rr = rr_new
    r = b - apply(x)
    return x, math.sqrt(float(np.vdot(r, r))) / bnorm, it


def _solve(rhs, wp, wm, shift, h, cfg, x0):
    mat = _edge_matrix(wp, wm, shift, h)
    x, res, its = _cg(mat.dot, rhs.reshape(-1), x0.reshape(-1), cfg.cg_tol, cfg.cg_max_iters)
    x = x.reshape(rhs.shape)
    if res > cfg.cg_tol:
        raise LinearSolveError(
            f"conjugate gradients stalled at relative residual {res:.3e} "
            f"after {its} iterations (cg_tol={cfg.cg_tol:g})",
            res,
        )
    return x, its


def solve_inner_linear(
    rhs: GridFunction,
    w_plus: VectorField,
    w_minus: VectorField,
    cfg: SolverConfig,
    x0: GridFunction | None = None,
) -> GridFunction:
    """Solve the frozen-weight system to relative residual ``cfg.cg_tol``."""
    _check_same(rhs, w_plus)
    _check_same(rhs, w_minus)
    if not (np.array_equal(w_plus.px, w_plus.py) and np.array_equal(w_minus.px, w_minus.py)):
        raise ValueError("weights must be isotropic (equal components per cell)")
    shift = 1.0 / cfg.dt + 1.0 / cfg.lam
    start = np.zeros_like(rhs.values) if x0 is None else np.array(x0.values)
    x, _ = _solve(
        np.array(rhs.values), w_plus.px, w_minus.px, shift, rhs.h, cfg, start
    )
    return GridFunction(x)


# -- time stepping ---------------------------------------------------------


def _step_residual(a, prev, fa, cfg, h) -> float:
    r = (a - prev) / cfg.dt - flux_divergence(a, cfg.epsilon, h) + (a - fa) / cfg.lam
    return float(np.max(np.abs(r)))


def step_residual(
    u_k: GridFunction, u_prev: GridFunction, f: GridFunction, cfg: SolverConfig
) -> float:
    """Max-norm residual of the nonlinear one-step equation at ``u_k``."""
    _check_same(u_k, u_prev)
    _check_same(u_k, f)
    return _step_residual(u_k.values, u_prev.values, f.values, cfg, u_k.h)


def fixed_point_step(
    u_prev: GridFunction,
    f: GridFunction,
    cfg: SolverConfig,
    step_index: int = 1,
    callback=None,
) -> tuple[GridFunction, StepDiagnostics]:
    """Advance one time step by the lagged-diffusivity iteration.

    ``callback(ell, v)``, if given, sees every inner iterate, ``ell = 0`` being
    the starting guess ``u_prev``.
    """
    _check_same(u_prev, f)
    h = u_prev.h
    h2 = h * h
    params = cfg.params
    shift = 1.0 / cfg.dt + 1.0 / cfg.lam
    rhs = u_prev.values / cfg.dt + f.values / cfg.lam

    v = GridFunction(u_prev.values)
    e_prev = E_h(v, u_prev, f, params, cfg.dt)
    decrements, step_norms, norms = [], [], []
    dv = math.inf
    if callback is not None:
        callback(0, v)
    for ell in range(1, cfg.max_inner + 1):
        wp, wm = _weights(v.values, cfg.epsilon, h)
        x, _ = _solve(rhs, wp, wm, shift, h, cfg, np.array(v.values))
        v_new = GridFunction(x)
        if callback is not None:
            callback(ell, v_new)
        d = x - v.values
        dv = math.sqrt(float(np.sum(d * d)) * h2)
        e_new = E_h(v_new, u_prev, f, params, cfg.dt)
        dec = e_prev - e_new
        decrements.append(dec)
        step_norms.append(dv)
        norms.append(norm(v_new))
        if dec < dv * dv / (2.0 * cfg.lam) - ENERGY_TOL - 1e-14 * abs(e_prev):
            raise EnergyDecreaseError(
                f"step {step_index}, inner {ell}: energy decrease {dec:.3e} below "
                f"|dv|^2/(2 lam) = {dv * dv / (2 * cfg.lam):.3e}"
            )
        v, e_prev = v_new, e_new
        if dv <= cfg.tol_inner:
            break
    else:
        raise InnerIterationError(
            f"step {step_index}: fixed point not reached in {cfg.max_inner} "
            f"iterations (last |dv| = {dv:.3e})",
            dv,
        )

    diag = StepDiagnostics(
        step_index=step_index,
        inner_iterations=ell,
        energy_J=J_h(v, f, params),
        energy_E=e_prev,
        step_norm=norm(v - u_prev),
        residual_inf=_step_residual(v.values, u_prev.values, f.values, cfg, h),
        energy_decrements=decrements,
        inner_step_norms=step_norms,
        inner_norms=norms,
    )
    return v, diag


def evolve(u0: GridFunction, f: GridFunction, cfg: SolverConfig) -> Trajectory:
    """Run ``cfg.steps`` implicit steps from ``u0`` with data ``f``."""
    _check_same(u0, f)
    params = cfg.params
    states = [u0]
    diags = []
    bound = max(norm(u0), norm(f))
    j_prev = J_h(u0, f, params)
    for k in range(1, cfg.steps + 1):
        u, diag = fixed_point_step(states[-1], f, cfg, step_index=k)
        log.debug(
            "step %d: inner=%d J=%.10g |du|=%.3e res=%.3e",
            k, diag.inner_iterations, diag.energy_J, diag.step_norm, diag.residual_inf,
        )
        slack = 1e-8 * (1.0 + abs(j_prev))
        if diag.energy_J > j_prev + slack:
            raise SolverError(f"step {k}: J_h increased from {j_prev!r} to {diag.energy_J!r}")
        if norm(u) > bound + 1e-8 * (1.0 + bound):
            raise SolverError(f"step {k}: |u| = {norm(u)!r} exceeds bound {bound!r}")
        j_prev = diag.energy_J
        states.append(u)
        diags.append(diag)
    return Trajectory(config=cfg, f=f, states=states, diagnostics=diags)


# -- Perona-Malik baseline -------------------------------------------------


@dataclass(frozen=True)
class PeronaMalikConfig:
    """Explicit Perona-Malik run with diffusivity ``c(s) = 1/sqrt(1 + s)``, ``s = |grad u|^2``.

    ``dt`` is in the same time units as the ROF flow (domain [0, 1]^2); the
    explicit scheme is stable for ``dt <= h^2 / 4``.
    """

    dt: float
    steps: int
    # keep every k-th state (the final state is always kept)
    record_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be a positive integer")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be a positive integer")

    @staticmethod
    def stable_dt(n: int) -> float:
        return 0.25 / (n * n)


def perona_malik_step(a: np.ndarray, dt: float, h: float) -> np.ndarray:
    px, py = fwd_diff(a, h)
    c = 1.0 / np.sqrt(1.0 + px * px + py * py)
    return a + dt * fwd_div(c * px, c * py, h)


def perona_malik_evolve(u0: GridFunction, cfg: PeronaMalikConfig) -> Trajectory:
    """Explicit no-flux Perona-Malik diffusion, no fidelity term.

    The flux ``c(|grad+ u|^2) grad+ u`` is differenced with ``div_forward``,
    the adjoint partner of ``grad_forward``, so the update is a symmetric
    five-point operator that conserves the mean.
    """
    h = u0.h
    limit = PeronaMalikConfig.stable_dt(u0.n)
    if cfg.dt > limit * (1 + 1e-12):
        raise StabilityError(
            f"Perona-Malik time step {cfg.dt:g} exceeds explicit stability limit h^2/4 = {limit:g}"
        )
    states = [u0]
    a = u0.values
    for k in range(1, cfg.steps + 1):
        a = perona_malik_step(a, cfg.dt, h)
        if k % cfg.record_every == 0 or k == cfg.steps:
            states.append(GridFunction(a))
    return Trajectory(config=cfg, f=None, states=states)
