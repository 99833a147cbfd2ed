"""Lax operator, calibrated sub-actions and the reduced function.

The Lax operator of F with normalising constant alpha is

    L_F(u)(x) = max_{y in T^{-1}(x)} alpha + F(y) + u(y),

and a calibrated sub-action is a fixed point.  ``solve_subaction`` finds one
on a grid by max-plus power iteration with sup-normalisation, switching to a
Krasnosel'skii-Mann averaged iteration when the plain iterates stop
improving (which happens when the maximizing orbit has period > 1).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ValidationError
from .grid import Grid, GridFunction, GridInterpolant, make_grid
from .observables import Constant, Observable, PullBack, Scale, Sum

__all__ = [
    "SubActionSolution",
    "MatherSet",
    "PreOrbit",
    "apply_lax",
    "solve_subaction",
    "reduced_function",
    "mather_set",
    "calibrated_preorbit",
    "default_resolution",
]

TIE_TOL = 1e-9


def default_resolution(system) -> int:
    return 2 ** 16 if system.kind == "circle" else 10


def default_tol(system) -> float:
    return 1e-6 if system.kind == "circle" else 1e-8


def _max_plus(grid: Grid, Fpre: np.ndarray, v: np.ndarray):
    """max over branches of Fpre + interpolated v, and the maximizing branch."""
    cand = Fpre + grid.interp(v)
    cand[~grid.valid] = -np.inf
    return cand.max(axis=1), cand


def apply_lax(sys, F: Observable, alpha: float, u: GridFunction) -> GridFunction:
    """L_F(u) on the grid of u."""
    if u.grid.system != sys:
        raise ValidationError("grid function belongs to a different system")
    best, _ = _max_plus(u.grid, u.grid.pre_values_of(F), u.values)
    return GridFunction(u.grid, best + alpha)


@dataclass
class SubActionSolution:
    u: GridFunction
    alpha: float
    residual: float
    iterations: int
    converged: bool
    F: Observable = field(repr=False)
    method: str = "plain"
    alpha_iteration: float | None = None
    alpha_orbit_bound: float | None = None

    @property
    def grid(self) -> Grid:
        return self.u.grid

    @property
    def system(self):
        return self.u.grid.system

    def recompute_residual(self) -> float:
        best, _ = _max_plus(self.grid, self.grid.pre_values_of(self.F), self.u.values)
        return float(np.abs(best + self.alpha - self.u.values).max())

    def summary(self) -> dict:
        return {"alpha": self.alpha, "residual": self.residual, "iterations": self.iterations,
                "converged": self.converged, "method": self.method,
                "resolution": self.grid.size, "lipschitz_u": self.u.lipschitz(),
                "alpha_iteration": self.alpha_iteration,
                "alpha_orbit_bound": self.alpha_orbit_bound}


def solve_subaction(sys, F: Observable, grid_resolution: int | None = None,
                    tol: float | None = None, max_iter: int = 20000,
                    refine_pmax: int | None = None, plateau: int = 40,
                    u0: np.ndarray | None = None) -> SubActionSolution:
    """Calibrated sub-action of F by normalised max-plus iteration.

    Parameters
    ----------
    grid_resolution : int
        Node count (circle, power of two) or word depth (shift).
    tol : float
        Target sup-norm residual of L_F(u) - u.
    refine_pmax : int, optional
        If given, alpha is compared with the best periodic-orbit average up
        to this period; periodic averages are lower bounds for -alpha, so
        the larger estimate of -alpha is kept and the residual recomputed.

    Returns
    -------
    SubActionSolution
        ``converged`` is False when the residual never reached ``tol``.
    """
    size = grid_resolution or default_resolution(sys)
    tol = default_tol(sys) if tol is None else tol
    if tol <= 0:
        raise ValidationError("tol must be positive")
    grid = make_grid(sys, size)
    Fpre = grid.pre_values_of(F)
    u = np.zeros(len(grid.nodes)) if u0 is None else np.asarray(u0, dtype=float) - np.max(u0)

    method = "plain"
    best_res = np.inf
    stall = 0
    it = 0
    res = np.inf
    shift = 0.0
    for it in range(1, max_iter + 1):
        Mu, _ = _max_plus(grid, Fpre, u)
        shift = float(Mu.max())
        res = float(np.abs(Mu - shift - u).max())
        if res <= tol:
            break
        if method == "plain":
            u = Mu - shift
            if res < 0.5 * best_res:
                best_res, stall = res, 0
            else:
                stall += 1
                if stall >= plateau:
                    method = "damped"
        else:
            u = 0.5 * (u + Mu - shift)
            u -= u.max()
    converged = res <= tol
    alpha = -shift
    sol = SubActionSolution(GridFunction(grid, u), alpha, res, it, converged, F, method,
                            alpha_iteration=alpha)
    if refine_pmax:
        from .orbits import best_periodic_orbit

        _, avg = best_periodic_orbit(sys, F, refine_pmax)
        sol.alpha_orbit_bound = -avg
        if avg > -alpha:
            sol.alpha = -avg
            sol.residual = sol.recompute_residual()
            sol.converged = sol.residual <= tol
    if not sol.converged:
        warnings.warn(f"sub-action iteration stopped at residual {sol.residual:.3g} > tol {tol:g}",
                      RuntimeWarning, stacklevel=2)
    return sol


def _require_converged(sol: SubActionSolution):
    if not sol.converged:
        raise ConvergenceError(
            f"sub-action not converged (residual {sol.residual:.3g}); refusing to use it")


def reduced_function(F: Observable, sol: SubActionSolution) -> Observable:
    """F + alpha + u - u o T as an exactly evaluable composite observable."""
    _require_converged(sol)
    U = GridInterpolant(sol.u)
    Fbar = Sum([F, Constant(sol.alpha), U, Scale(-1.0, PullBack(U, sol.system))])
    Fbar.solution = sol
    return Fbar


@dataclass
class MatherSet:
    indices: np.ndarray
    points: object
    values: np.ndarray
    tol_mather: float

    def __len__(self):
        return len(self.indices)


def mather_set(sys, Fbar: Observable, grid, tol_mather: float = 1e-3) -> MatherSet:
    """Grid nodes where the reduced function is >= -tol_mather.

    ``grid`` is a Grid or a resolution.  On shift grids of depth r the
    reduced function is constant on depth r + 1 cylinders, which are used
    as nodes.
    """
    if not isinstance(grid, Grid):
        size = grid
        if sys.kind != "circle":
            size = grid + 1
        grid = make_grid(sys, size)
    vals = grid.values_of(Fbar)
    idx = np.flatnonzero(vals >= -tol_mather)
    if len(idx) == 0:
        raise ConvergenceError(
            f"empty Mather set: tol_mather={tol_mather:g} is below the discretization error "
            f"(max reduced value {vals.max():.3g})")
    pts = grid.nodes[idx] if grid.is_circle else [grid.nodes[k] for k in idx]
    return MatherSet(idx, pts, vals[idx], tol_mather)


@dataclass
class PreOrbit:
    """z_0, z_{-1}, ..., z_{-depth} with the branch chosen at each step."""

    points: list
    branches: list
    ties: list
    calibration_error: float

    def __len__(self):
        return len(self.points)

    def __getitem__(self, k):
        return self.points[k]


def calibrated_preorbit(sys, F: Observable, sol: SubActionSolution, z, depth: int) -> PreOrbit:
    """Backward orbit of z choosing at each step the maximizer of alpha + F(y) + u(y).

    Ties closer than 1e-9 go to the lowest branch index and are recorded.
    ``calibration_error`` is the worst |u(z_{k+1}) - u(z_k) - alpha - F(z_k)|.
    """
    _require_converged(sol)
    if depth < 1:
        raise ValidationError("depth must be >= 1")
    sys.validate(z)
    u = sol.u
    pts, branches, ties = [z], [], []
    err = 0.0
    cur = z
    for k in range(1, depth + 1):
        pre = sys.preimages(cur)
        scores = np.array([sol.alpha + F(y) + u(y) for y, _ in pre])
        near = np.flatnonzero(scores >= scores.max() - TIE_TOL)
        if len(near) > 1:
            ties.append(k)
        j = int(near[0])
        y, b = pre[j]
        err = max(err, abs(u(cur) - scores[j]))
        pts.append(y)
        branches.append(b)
        cur = y
    return PreOrbit(pts, branches, ties, err)
