"""Transfer operator, equilibrium states and zero-temperature sweeps.

The right eigenvector of the transfer operator is computed in the log
domain so that large inverse temperatures never overflow.  The equilibrium
measure is then the stationary law of the backward Markov chain

    P(x -> y) = exp(beta F(y)) h(y) / (lambda h(x)),   T(y) = x,

whose stationary distribution equals the product of the right and left
eigenvectors.  This avoids a separate left power iteration, which loses
mass to spurious classes once tiny weights underflow.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, OverflowRisk, ValidationError
from .grid import Grid, GridFunction, make_grid
from .laxcore import default_resolution
from .observables import Observable

__all__ = [
    "GibbsState",
    "SweepResult",
    "transfer_apply",
    "equilibrium_state",
    "beta_sweep",
    "mass_near",
    "integrate",
]

OVERFLOW_EXPONENT = 700.0


def _stencil(grid: Grid):
    """Log interpolation coefficients (n, d, 2) and their node indices."""
    with np.errstate(divide="ignore"):
        logc = np.stack([np.log1p(-grid.w), np.log(grid.w)], axis=-1)
    idx = np.stack([grid.lo, grid.hi], axis=-1)
    if not grid.is_circle:
        # shift grids read exact cylinders: one coefficient per branch
        logc[..., 1] = -np.inf
    logc[~grid.valid] = -np.inf
    return logc, idx


def _beta_F(grid: Grid, F: Observable, beta: float) -> np.ndarray:
    Fpre = grid.pre_values_of(F)
    out = np.full(Fpre.shape, -np.inf)
    out[grid.valid] = beta * Fpre[grid.valid]
    return out


def _log_apply(bF, logc, idx, g):
    A = bF[..., None] + logc + g[idx]
    n = len(g)
    A = A.reshape(n, -1)
    mx = A.max(axis=1)
    return mx + np.log(np.exp(A - mx[:, None]).sum(axis=1))


def transfer_apply(sys, F: Observable, beta: float, h: GridFunction) -> GridFunction:
    """(L h)(x) = sum over preimages y of exp(beta F(y)) h(y), linear domain."""
    grid = h.grid
    if grid.system != sys:
        raise ValidationError("grid function belongs to a different system")
    Fpre = grid.pre_values_of(F)
    sup = float(np.abs(Fpre[grid.valid]).max())
    if beta * sup > OVERFLOW_EXPONENT:
        raise OverflowRisk(
            f"beta*||F||_0 = {beta * sup:.4g} > {OVERFLOW_EXPONENT:g}: exp would overflow; "
            "use the normalized (log-domain) iteration instead")
    weight = np.where(grid.valid, np.exp(beta * np.where(grid.valid, Fpre, 0.0)), 0.0)
    return GridFunction(grid, (weight * grid.interp(h.values)).sum(axis=1))


@dataclass
class GibbsState:
    beta: float
    pressure: float
    density: GridFunction
    conjugate_weights: GridFunction
    measure_weights: np.ndarray
    residual: float
    iterations: int
    converged: bool
    invariance_defect: float = math.nan
    effective_nodes: float = math.nan
    chain_residual: float = math.nan
    log_density: np.ndarray | None = field(default=None, repr=False)
    warnings: list = field(default_factory=list)

    @property
    def eigenvalue(self) -> float:
        # may be inf for very large beta; pressure stays finite
        with np.errstate(over="ignore"):
            return float(np.exp(self.pressure))

    @property
    def grid(self) -> Grid:
        return self.density.grid

    def summary(self) -> dict:
        return {"beta": self.beta, "pressure": self.pressure, "residual": self.residual,
                "iterations": self.iterations, "converged": self.converged,
                "invariance_defect": self.invariance_defect,
                "effective_nodes": self.effective_nodes, "chain_residual": self.chain_residual,
                "warnings": list(self.warnings)}


def _right_eigen(bF, logc, idx, g, tol, max_iter, warm=200):
    """Log-domain power iteration: returns log eigenvalue, log h, residual, iterations."""
    logs = []
    for _ in range(warm):
        Lg = _log_apply(bF, logc, idx, g)
        ln = Lg.max()
        g = Lg - ln
        logs.append(ln)
    ll = float(np.mean(logs[warm // 2:]))
    res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        Lg = _log_apply(bF, logc, idx, g)
        # lazy step h <- L h / lambda + h damps period-p oscillations
        gn = np.logaddexp(Lg - ll, g)
        c = gn.max()
        g = gn - c
        ll += math.log(math.expm1(c))
        if it % 10 == 0:
            Lg = _log_apply(bF, logc, idx, g)
            res = float(np.abs(np.exp(Lg - ll) - np.exp(g)).max())
            if res <= tol:
                break
    return ll, g, res, warm + it


def _stationary(bF, logc, idx, g, ll, mu0, tol, max_iter):
    n = len(g)
    logP = bF[..., None] + logc + g[idx] - g[:, None, None]
    logP = logP.reshape(n, -1)
    mx = logP.max(axis=1, keepdims=True)
    P = np.exp(logP - mx)
    P /= P.sum(axis=1, keepdims=True)
    dst = idx.reshape(n, -1)
    keep = P > 0
    src = np.broadcast_to(np.arange(n)[:, None], P.shape)[keep]
    dst, P = dst[keep], P[keep]
    mu = np.full(n, 1.0 / n) if mu0 is None else mu0 / mu0.sum()
    res = math.inf
    for _ in range(max_iter):
        step = np.bincount(dst, weights=mu[src] * P, minlength=n)
        res = float(np.abs(step - mu).sum())
        mu = 0.5 * (mu + step)
        if res <= tol:
            break
    return mu / mu.sum(), res


def _invariance_defect(grid: Grid, mu: np.ndarray) -> float:
    if grid.is_circle:
        # largest gap between Fourier coefficients of mu and of its pushforward
        m = grid.system.m
        x = grid.nodes
        return float(max(abs(np.dot(mu, np.exp(2j * np.pi * k * m * x) - np.exp(2j * np.pi * k * x)))
                         for k in range(1, 9)))
    # compare depth r-1 marginals of mu and of its image
    before, after = {}, {}
    for word, w in zip(grid.nodes, mu):
        before[word[:-1]] = before.get(word[:-1], 0.0) + w
        after[word[1:]] = after.get(word[1:], 0.0) + w
    keys = set(before) | set(after)
    return float(sum(abs(before.get(k, 0.0) - after.get(k, 0.0)) for k in keys))


def equilibrium_state(sys, F: Observable, beta: float, grid=None, tol: float = 1e-10,
                      max_iter: int = 20000, stabilize: bool = True, measure: bool = True,
                      warm_start: GibbsState | None = None) -> GibbsState:
    """Equilibrium state of beta*F on a grid.

    ``grid`` may be a Grid or a resolution.  With ``stabilize=False`` the
    plain linear-domain iteration is used, which is guarded against
    overflow.  ``measure=False`` skips the measure (pressure only).
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    if beta < 0:
        raise ValidationError("beta must be nonnegative")
    if not isinstance(grid, Grid):
        grid = make_grid(sys, grid or default_resolution(sys))
    if grid.system != sys:
        raise ValidationError("grid belongs to a different system")
    if not stabilize:
        return _linear_state(sys, F, beta, grid, tol, max_iter)
    logc, idx = _stencil(grid)
    bF = _beta_F(grid, F, beta)
    g0 = np.zeros(len(grid.nodes)) if warm_start is None else warm_start.log_density.copy()
    ll, g, res, its = _right_eigen(bF, logc, idx, g0, tol, max_iter)
    converged = res <= tol
    mu = np.zeros(len(g))
    chain_res = math.nan
    if measure:
        mu0 = None if warm_start is None else warm_start.measure_weights + 1.0 / len(g)
        mu, chain_res = _stationary(bF, logc, idx, g, ll, mu0, tol, max_iter)
        converged = converged and chain_res <= max(tol, 1e-9) * 100
    h = np.exp(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.where(h > 0, mu / h, 0.0)
    state = GibbsState(float(beta), float(ll), GridFunction(grid, h), GridFunction(grid, nu),
                       mu, res, its, converged, log_density=g, chain_residual=chain_res)
    if measure:
        state.invariance_defect = _invariance_defect(grid, mu)
        _peak_advisory(state)
    if not converged:
        warnings.warn(f"equilibrium state at beta={beta:g} not converged "
                      f"(residual {res:.3g}, chain {chain_res:.3g})", RuntimeWarning, stacklevel=2)
    return state


def _linear_state(sys, F, beta, grid, tol, max_iter):
    h = GridFunction(grid, np.ones(len(grid.nodes)))
    lam = 0.0
    res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        Lh = transfer_apply(sys, F, beta, h)
        lam = Lh.values.max()
        res = float(np.abs(Lh.values / lam - h.values).max())
        h = GridFunction(grid, 0.5 * (h.values + Lh.values / lam))
        h = GridFunction(grid, h.values / h.values.max())
        if res <= tol:
            break
    if res > tol:
        raise ConvergenceError(f"linear power iteration stopped at residual {res:.3g}")
    g = np.log(h.values)
    logc, idx = _stencil(grid)
    bF = _beta_F(grid, F, beta)
    mu, chain_res = _stationary(bF, logc, idx, g, math.log(lam), None, tol, max_iter)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.where(h.values > 0, mu / h.values, 0.0)
    state = GibbsState(float(beta), math.log(lam), h, GridFunction(grid, nu), mu, res, it,
                       True, log_density=g, chain_residual=chain_res)
    state.invariance_defect = _invariance_defect(grid, mu)
    _peak_advisory(state)
    return state


def _peak_advisory(state: GibbsState):
    state.effective_nodes = float(1.0 / np.square(state.measure_weights).sum())
    if state.effective_nodes < 4:
        state.warnings.append(
            f"measure carried by about {state.effective_nodes:.2g} grid nodes: the Gibbs peak "
            "is narrower than the grid spacing, so grid bias is unquantified")


def integrate(state: GibbsState, f: Observable) -> float:
    """Integral of f against the measure weights."""
    return math.fsum(state.measure_weights * state.grid.values_of(f))


def mass_near(state: GibbsState, points, radius: float) -> float:
    """Measure of the (open) radius-neighborhood of a finite point set."""
    grid = state.grid
    sys = grid.system
    if grid.is_circle:
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        d = np.abs(np.mod(grid.nodes[:, None] - pts[None, :] + 0.5, 1.0) - 0.5).min(axis=1)
    else:
        d = np.array([min(sys.metric(w, tuple(p)) for p in points) for w in grid.nodes])
    return float(state.measure_weights[d < radius].sum())


@dataclass
class SweepResult:
    betas: list
    pressures: list
    integrals: dict  # test-function name -> list of integrals
    masses: dict  # orbit label -> list of masses
    differences: dict  # test-function name -> successive |differences|
    pressure_slopes: list  # slope between consecutive betas
    states: list = field(repr=False, default_factory=list)

    @property
    def final_slope(self) -> float:
        return self.pressure_slopes[-1] if self.pressure_slopes else math.nan

    def rows(self):
        for k, b in enumerate(self.betas):
            row = {"beta": b, "pressure": self.pressures[k]}
            for name, vals in self.integrals.items():
                row[f"integral_{name}"] = vals[k]
            for name, vals in self.masses.items():
                row[f"mass_{name}"] = vals[k]
            yield row

    def to_csv(self, path):
        rows = list(self.rows())
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
            wr.writeheader()
            for r in rows:
                wr.writerow({k: repr(float(v)) for k, v in r.items()})

    def summary(self) -> dict:
        return {"betas": self.betas, "pressures": self.pressures,
                "pressure_slopes": self.pressure_slopes, "differences": self.differences,
                "final_integrals": {k: v[-1] for k, v in self.integrals.items()},
                "final_masses": {k: v[-1] for k, v in self.masses.items()}}


def beta_sweep(sys, F: Observable, beta_schedule, test_functions: dict | None = None,
               orbits: dict | None = None, radius: float = 0.02, grid=None,
               tol: float = 1e-10, max_iter: int = 20000, keep_states: bool = False,
               measure: bool = True) -> SweepResult:
    """Equilibrium states along an increasing beta schedule.

    ``test_functions`` maps names to observables; ``orbits`` maps names to
    point lists whose ``radius``-neighborhood mass is recorded.
    """
    betas = [float(b) for b in beta_schedule]
    if not betas or any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValidationError("beta schedule must be nonempty and strictly increasing")
    test_functions = test_functions or {}
    orbits = orbits or {}
    if not isinstance(grid, Grid):
        grid = make_grid(sys, grid or default_resolution(sys))
    pressures = []
    integrals = {k: [] for k in test_functions}
    masses = {k: [] for k in orbits}
    states = []
    prev = None
    for b in betas:
        st = equilibrium_state(sys, F, b, grid, tol, max_iter, measure=measure, warm_start=prev)
        prev = st
        pressures.append(st.pressure)
        for k, f in test_functions.items():
            integrals[k].append(integrate(st, f))
        for k, pts in orbits.items():
            masses[k].append(mass_near(st, pts, radius))
        if keep_states:
            states.append(st)
    diffs = {k: [abs(b - a) for a, b in zip(v, v[1:])] for k, v in integrals.items()}
    slopes = [(p2 - p1) / (b2 - b1)
              for p1, p2, b1, b2 in zip(pressures, pressures[1:], betas, betas[1:])]
    return SweepResult(betas, pressures, integrals, masses, diffs, slopes, states)
