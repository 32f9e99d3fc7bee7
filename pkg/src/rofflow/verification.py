"""Randomised property suites for the discrete scheme.

Each suite draws seeded random instances at a given grid size, checks one
structural property of the scheme and returns a :class:`SuiteResult`.  The
command-line ``verify`` subcommand runs them by name.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analysis import derivative_energy_audit, lip_seminorm_estimate, translation_modulus
from .energy import E_h, J_h, characterization_gap, subgrad_Jh
from .grid import GridFunction, VectorField, div_backward, div_forward, grad_backward, grad_forward, inner, norm
from .solver import SolverConfig, evolve, fixed_point_step, step_residual

__all__ = ["SuiteResult", "SUITES", "run_suite", "suite_names"]

# default physical parameters for verification runs
VERIFY_CONFIG = SolverConfig(epsilon=1.0, lam=30.0, dt=0.1, steps=10)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.detail} ({self.seconds:.2f} s)"


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed, salt])


def _random_grid(rng, n, scale=1.0) -> GridFunction:
    return GridFunction(scale * rng.standard_normal((n, n)))


def _adjointness(n, seed, trials):
    rng = _rng(seed, 1)
    worst = 0.0
    for _ in range(trials):
        u = _random_grid(rng, n)
        p = VectorField(rng.standard_normal((n, n)), rng.standard_normal((n, n)))
        for grad, div in ((grad_forward, div_forward), (grad_backward, div_backward)):
            g = grad(u)
            lhs = -inner(div(p), u)
            rhs = inner(p, g)
            scale = float(np.sum(np.abs(p.px * g.px) + np.abs(p.py * g.py)) + np.sum(np.abs(div(p).values * u.values))) * u.h**2
            worst = max(worst, abs(lhs - rhs) / (1.0 + scale))
    return worst <= 1e-12, f"max relative mismatch {worst:.2e}"


def _gradient_check(n, seed, trials):
    rng = _rng(seed, 2)
    params = VERIFY_CONFIG.params
    delta = 1e-5
    worst = 0.0
    for _ in range(trials):
        u = _random_grid(rng, n)
        f = _random_grid(rng, n)
        w = _random_grid(rng, n)
        fd = (J_h(u + delta * w, f, params) - J_h(u - delta * w, f, params)) / (2 * delta)
        an = inner(subgrad_Jh(u, f, params), w)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    return worst <= 1e-5, f"max relative error {worst:.2e}"


def _characterization(n, seed, trials):
    rng = _rng(seed, 3)
    cfg = VERIFY_CONFIG
    worst = math.inf
    for _ in range(max(1, trials // 5)):
        f = _random_grid(rng, n)
        u_prev = _random_grid(rng, n)
        u_k, _ = fixed_point_step(u_prev, f, cfg)
        for _ in range(5):
            v = u_k + _random_grid(rng, n, scale=rng.choice([1e-3, 1e-1, 1.0]))
            worst = min(worst, characterization_gap(u_k, u_prev, v, f, cfg.params, cfg.dt))
    return worst >= -1e-8, f"min gap {worst:.2e}"


def _variation_monotonicity(n, seed, trials):
    rng = _rng(seed, 4)
    cfg = VERIFY_CONFIG
    worst = math.inf
    for _ in range(max(1, trials // 5)):
        f = _random_grid(rng, n)
        traj = evolve(_random_grid(rng, n), f, cfg)
        for prev, cur in zip(traj.states[:-1], traj.states[1:]):
            j_cur = J_h(cur, f, cfg.params)
            for theta in np.linspace(0, 1, 6):
                mid = theta * cur + (1 - theta) * prev
                worst = min(worst, J_h(mid, f, cfg.params) - j_cur)
    return worst >= -1e-8, f"min J(u(t)) - J(u^k) = {worst:.2e}"


def _stability(n, seed, trials):
    rng = _rng(seed, 5)
    cfg = VERIFY_CONFIG
    worst = -math.inf
    for _ in range(trials):
        f, g = _random_grid(rng, n), _random_grid(rng, n)
        u0, v0 = _random_grid(rng, n), _random_grid(rng, n)
        a = evolve(u0, f, cfg).states
        b = evolve(v0, g, cfg).states
        bound = max(norm(u0 - v0), norm(f - g))
        worst = max(worst, max(norm(x - y) for x, y in zip(a, b)) - bound)
    return worst <= 1e-8, f"max excess over bound {worst:.2e}"


def _translation(n, seed, trials):
    rng = _rng(seed, 6)
    cfg = VERIFY_CONFIG
    alpha = 1.0
    worst = -math.inf
    for _ in range(max(1, trials // 5)):
        # smooth-ish data: random low modes
        c = (np.arange(n) + 0.5) / n
        x, y = np.meshgrid(c, c)
        k = rng.integers(1, 4, size=4)
        f = GridFunction(np.cos(k[0] * np.pi * x) * np.cos(k[1] * np.pi * y))
        u0 = GridFunction(np.sin(k[2] * np.pi * x + 0.3) * np.cos(k[3] * np.pi * y))
        bound = (lip_seminorm_estimate(u0, alpha) + lip_seminorm_estimate(f, alpha)) * u0.h**alpha
        for u in evolve(u0, f, cfg).states:
            worst = max(worst, max(translation_modulus(u)) - bound)
    return worst <= 1e-8, f"max excess over bound {worst:.2e}"


def _derivative_energy(n, seed, trials):
    rng = _rng(seed, 7)
    cfg = VERIFY_CONFIG
    worst = -math.inf
    for _ in range(max(1, trials // 5)):
        traj = evolve(_random_grid(rng, n), _random_grid(rng, n), cfg)
        lhs, rhs = derivative_energy_audit(traj)
        worst = max(worst, lhs - rhs)
    return worst <= 1e-8, f"max excess {worst:.2e}"


def _inner_boundedness(n, seed, trials):
    rng = _rng(seed, 8)
    worst = -math.inf
    grid = list(itertools.product([1.0, 1e-2], [0.5, 30.0], [0.05, 1.0]))
    for t in range(trials):
        eps, lam, dt = grid[t % len(grid)]
        cfg = SolverConfig(epsilon=eps, lam=lam, dt=dt)
        f, u_prev = _random_grid(rng, n), _random_grid(rng, n)
        _, diag = fixed_point_step(u_prev, f, cfg)
        bound = (norm(u_prev) / dt + norm(f) / lam) / (1 / dt + 1 / lam)
        worst = max(worst, max(diag.inner_norms) - bound)
    return worst <= 1e-10, f"max excess over bound {worst:.2e}"


def energy_decrease_excess(n, seed, instances) -> float:
    """Largest violation of ``E(v_{l-1}) - E(v_l) >= |v_l - v_{l-1}|^2 / (2 lam)``.

    Energies are recomputed from the recorded iterates.
    """
    rng = _rng(seed, 9)
    grid = list(itertools.product([1.0, 1e-2], [0.5, 30.0], [0.05, 1.0]))
    worst = -math.inf
    for t in range(instances):
        eps, lam, dt = grid[t % len(grid)]
        cfg = SolverConfig(epsilon=eps, lam=lam, dt=dt)
        f, u_prev = _random_grid(rng, n), _random_grid(rng, n)
        iterates = []
        fixed_point_step(u_prev, f, cfg, callback=lambda ell, v: iterates.append(v))
        energies = [E_h(v, u_prev, f, cfg.params, dt) for v in iterates]
        for ell in range(1, len(iterates)):
            dv = norm(iterates[ell] - iterates[ell - 1])
            dec = energies[ell - 1] - energies[ell]
            worst = max(worst, dv * dv / (2 * lam) - dec)
    return worst


def _energy_decrease(n, seed, trials):
    worst = energy_decrease_excess(n, seed, trials)
    return worst <= 1e-10, f"max shortfall {worst:.2e}"


def _fixed_point_convergence(n, seed, trials):
    rng = _rng(seed, 10)
    cfg = VERIFY_CONFIG
    worst = 0.0
    for _ in range(max(1, trials // 2)):
        f, u_prev = _random_grid(rng, n), _random_grid(rng, n)
        u_k, _ = fixed_point_step(u_prev, f, cfg)
        # residual relative to the size of the discrete time derivative
        rate = float(np.max(np.abs(u_k.values - u_prev.values))) / cfg.dt
        worst = max(worst, step_residual(u_k, u_prev, f, cfg) / rate)
    return worst <= 1e-5, f"max relative optimality residual {worst:.2e}"


SUITES: dict[str, Callable[[int, int, int], tuple[bool, str]]] = {
    "adjointness": _adjointness,
    "gradient-check": _gradient_check,
    "characterization": _characterization,
    "variation-monotonicity": _variation_monotonicity,
    "stability": _stability,
    "translation": _translation,
    "derivative-energy": _derivative_energy,
    "inner-boundedness": _inner_boundedness,
    "energy-decrease": _energy_decrease,
    "fixed-point-convergence": _fixed_point_convergence,
}


def suite_names() -> list[str]:
    return list(SUITES)


def run_suite(name: str, size: int = 16, seed: int = 0, trials: int = 10) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(name)
    start = time.perf_counter()
    passed, detail = SUITES[name](size, seed, trials)
    return SuiteResult(name, bool(passed), detail, time.perf_counter() - start)
