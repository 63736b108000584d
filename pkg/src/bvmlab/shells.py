"""Sup/inf estimation over elliptic shells around theta_star.

The locality sets are ellipsoids ||D0 (theta - theta_star)|| <= r
intersected with the model's domain box, so extrema of smooth functionals
are estimated by scanning quasi-random directions on the unit sphere
(Sobol points pushed through the inverse normal CDF), a radial grid, and
a short projected gradient polish from the best sampled point.  Sample
points falling outside the domain box are skipped.  Everything is
deterministic given the plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .geometry import LocalGeometry

MAX_DIRECTIONS = 4096


@dataclass(frozen=True)
class ShellPlan:
    """Sampling plan for ellipsoid extremum estimation.

    ``n_directions`` defaults to min(2 * p * 64, 4096); ``n_radii`` radial
    grid points; ``polish_steps`` projected-gradient refinements of the
    worst sampled point.
    """
    n_directions: Optional[int] = None
    n_radii: int = 16
    polish_steps: int = 10
    seed: int = 0

    def directions_for(self, p: int) -> int:
        if self.n_directions is not None:
            return min(int(self.n_directions), MAX_DIRECTIONS)
        return min(2 * p * 64, MAX_DIRECTIONS)


def sphere_directions(p: int, count: int, seed: int = 0) -> np.ndarray:
    """Quasi-random unit directions in R^p (rows), deterministic in seed."""
    if p == 1:
        reps = (count + 1) // 2
        return np.tile(np.array([[1.0], [-1.0]]), (reps, 1))[:count]
    sob = qmc.Sobol(d=p, scramble=True, seed=seed)
    m = max(1, (count - 1).bit_length())  # draw a power of two, then truncate
    u = sob.random_base2(m)[:count]
    z = ndtri(np.clip(u, 1e-12, 1.0 - 1e-12))
    norms = np.linalg.norm(z, axis=1)
    norms[norms == 0.0] = 1.0
    return z / norms[:, None]


def radial_grid(r: float, n_radii: int) -> np.ndarray:
    """Radii (r/n, 2r/n, ..., r); excludes 0 where ratios degenerate."""
    return r * np.arange(1, n_radii + 1) / n_radii


def _in_box(theta: np.ndarray, box: Optional[np.ndarray]) -> bool:
    if box is None:
        return True
    return bool(np.all(theta >= box[:, 0]) and np.all(theta <= box[:, 1]))


def _polish(objective: Callable[[np.ndarray], float], geom: LocalGeometry,
            z0: np.ndarray, r: float, mode: str, steps: int,
            maximize: bool, box: Optional[np.ndarray]) -> tuple[np.ndarray, float]:
    """Projected finite-difference ascent in standardized coordinates.

    ``z`` lives in the D0-standardized space; ``mode`` is 'ball'
    (||z|| <= r) or 'shell' (||z|| = r).  Candidates leaving the domain
    box count as non-improvements.
    """
    sign = 1.0 if maximize else -1.0

    def project(z):
        nz = np.linalg.norm(z)
        if mode == "shell":
            return z * (r / nz) if nz > 0 else z
        if nz > r:
            return z * (r / nz)
        return z

    def theta_of(z):
        return geom.theta_star + geom.d0_inv @ z

    def f(z):
        theta = theta_of(z)
        if not _in_box(theta, box):
            return -math.inf
        return sign * objective(theta)

    z = project(z0.copy())
    best = f(z)
    if not math.isfinite(best):
        return z, sign * best
    step = 0.1 * r
    h = 1e-6 * max(1.0, r)
    p = z.shape[0]
    for _ in range(steps):
        g = np.empty(p)
        base = f(z)
        degenerate = False
        for j in range(p):
            zp = z.copy()
            zp[j] += h
            val = f(project(zp))
            if not math.isfinite(val):
                degenerate = True
                break
            g[j] = (val - base) / h
        if degenerate:
            break
        gnorm = np.linalg.norm(g)
        if gnorm == 0.0:
            break
        cand = project(z + step * g / gnorm)
        val = f(cand)
        if val > best:
            z, best = cand, val
        else:
            step *= 0.5
    return z, sign * best


def extremum_on_shell(objective: Callable[[np.ndarray], float],
                      geom: LocalGeometry, r: float, plan: ShellPlan, *,
                      maximize: bool = True,
                      directions: Optional[np.ndarray] = None,
                      box: Optional[np.ndarray] = None
                      ) -> tuple[float, Optional[np.ndarray]]:
    """Extremum of objective over the shell ||D0 (theta-theta_star)|| = r.

    Returns (nan, None) when no shell sample lies inside the domain box.
    """
    if directions is None:
        directions = sphere_directions(geom.p, plan.directions_for(geom.p), plan.seed)
    best_val = -math.inf if maximize else math.inf
    best_u = None
    for u in directions:
        theta = geom.theta_at(u, r)
        if not _in_box(theta, box):
            continue
        val = objective(theta)
        if (val > best_val) if maximize else (val < best_val):
            best_val = val
            best_u = u
    if best_u is None:
        return math.nan, None
    if plan.polish_steps > 0:
        z, val = _polish(objective, geom, r * best_u, r, "shell",
                         plan.polish_steps, maximize, box)
        if math.isfinite(val) and ((val > best_val) if maximize else (val < best_val)):
            return float(val), geom.theta_star + geom.d0_inv @ z
    return float(best_val), geom.theta_at(best_u, r)


def supremum_on_ball(objective: Callable[[np.ndarray], float],
                     geom: LocalGeometry, r: float, plan: ShellPlan, *,
                     maximize: bool = True,
                     include_center: bool = False,
                     box: Optional[np.ndarray] = None
                     ) -> tuple[float, Optional[np.ndarray]]:
    """Extremum of objective over the ball ||D0 (theta-theta_star)|| <= r.

    Scans the radial grid x direction set (skipping points outside the
    domain box), then polishes the best point within the ball.
    """
    directions = sphere_directions(geom.p, plan.directions_for(geom.p), plan.seed)
    radii = radial_grid(r, plan.n_radii)
    best_val = -math.inf if maximize else math.inf
    best_z = None
    if include_center:
        best_val = objective(geom.theta_star)
        best_z = np.zeros(geom.p)
    for rr in radii:
        for u in directions:
            theta = geom.theta_at(u, rr)
            if not _in_box(theta, box):
                continue
            val = objective(theta)
            if (val > best_val) if maximize else (val < best_val):
                best_val = val
                best_z = rr * u
    if best_z is None:
        return math.nan, None
    if plan.polish_steps > 0:
        z, val = _polish(objective, geom, best_z, r, "ball",
                         plan.polish_steps, maximize, box)
        if math.isfinite(val) and ((val > best_val) if maximize else (val < best_val)):
            best_val = float(val)
            best_z = z
    theta = geom.theta_star + geom.d0_inv @ best_z
    return float(best_val), theta
