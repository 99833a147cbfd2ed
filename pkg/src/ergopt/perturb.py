"""Locking perturbations around a periodic orbit and their certification.

Given a reduced function F_bar <= 0 and a periodic orbit O, the perturbed
observable

    G1 = F_bar - epsilon * d(., O) + h

has O as its unique maximizing orbit when the feasibility constants below
are satisfied.  Certification is numerical evidence from three independent
methods: orbit enumeration, Gibbs concentration and backward-orbit limits.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BudgetExceeded, ConvergenceError, InfeasibleError, ValidationError
from .laxcore import calibrated_preorbit, reduced_function, solve_subaction
from .observables import DistToSet, Observable, Scale, Sum
from .orbits import PeriodicOrbit, alpha_limit_check, close_segment, ranked_periodic_orbits

__all__ = [
    "PerturbationConstants",
    "LockinBudget",
    "LockinReport",
    "perturbation_constants",
    "feasible_delta",
    "orbit_separation",
    "build_locking_perturbation",
    "certify_lockin",
    "preimage_separation",
    "lock_orbit",
]


@dataclass
class PerturbationConstants:
    M: int
    delta: float
    gamma_delta: float
    epsilon: float
    p: int
    lip_Fbar: float
    lam: float
    lip_T: float
    e0: float
    K: float
    rho: float
    gamma3: float
    a: float
    b: float
    feasible: bool
    violated_conditions: list = field(default_factory=list)

    @property
    def required_ratio(self) -> float:
        """Leading-order lower bound on gamma_delta/delta needed for a > 0."""
        return 3 * self.K ** 2 * self.lip_T / self.epsilon ** 2

    @property
    def exact_ratio(self) -> float:
        """gamma_delta/delta above which a > 0 holds exactly."""
        K, eps, LT, lam = self.K, self.epsilon, self.lip_T, self.lam
        return self.required_ratio + LT * (2 * K + 3 * lam * K) / eps + 2 / (1 - lam)

    @property
    def h_sup_bound(self) -> float:
        """Admissible size of the secondary perturbation: ||h||_0 < K delta / (2p)."""
        return self.K * self.delta / (2 * self.p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(required_ratio=self.required_ratio, exact_ratio=self.exact_ratio,
                 h_sup_bound=self.h_sup_bound)
        return d


def _lip(Fbar) -> float:
    if isinstance(Fbar, Observable):
        return float(Fbar.lipschitz_bound)
    return float(Fbar)


def perturbation_constants(sys, Fbar, M: int, delta: float, gamma_delta: float,
                           epsilon: float, p: int) -> PerturbationConstants:
    """Feasibility constants for locking a period-p orbit.

    ``Fbar`` is the reduced observable (its Lipschitz certificate is used) or
    the Lipschitz constant itself.  Infeasibility is returned as data.
    """
    lip = _lip(Fbar)
    for name, v in (("M", M), ("delta", delta), ("gamma_delta", gamma_delta),
                    ("epsilon", epsilon), ("p", p)):
        if not v > 0:
            raise ValidationError(f"{name} must be positive, got {v!r}")
    if lip < 0:
        raise ValidationError("Lipschitz constant must be nonnegative")
    lam, LT, e0 = sys.lam, sys.lip, sys.e0
    K = max(M * lip / (1 - lam) ** 2, (lip + 2) / (1 - lam))
    rho = 3 * K * delta / epsilon
    gamma3 = (gamma_delta - 2 * delta / (1 - lam)) / LT - lam * rho
    two_b = 2 * K * delta - epsilon * rho
    two_a = 2 * K * delta + K * rho - epsilon * gamma3
    band = (1 - lam) * e0
    bad = []
    if not delta < band:
        bad.append("delta exceeds (1−λ)e₀")
    if not rho > 0:
        bad.append("rho is not positive")
    if not rho < band:
        bad.append("rho exceeds (1−λ)e₀")
    if not gamma3 > 0:
        bad.append("gamma3 is not positive")
    if not gamma3 < band:
        bad.append("gamma3 exceeds (1−λ)e₀")
    if not two_b < 0:
        bad.append("2Kδ − ερ is not negative (b ≤ 0)")
    if not two_a < 0:
        bad.append("2Kδ + Kρ − εγ₃ is not negative (a ≤ 0)")
    return PerturbationConstants(int(M), float(delta), float(gamma_delta), float(epsilon), int(p),
                                 lip, lam, LT, e0, K, rho, gamma3, -two_a / 2, -two_b / 2,
                                 not bad, bad)


def feasible_delta(sys, Fbar, M: int, gamma_delta: float, epsilon: float, p: int,
                   safety: float = 0.5) -> float:
    """A feasible delta: ``safety`` times the supremum of feasible values.

    Every condition except gamma3 < (1-lambda) e0 is an upper bound on
    delta; that one is a lower bound, checked on the returned value.
    """
    if not 0 < safety < 1:
        raise ValidationError("safety must lie in (0, 1)")
    lip = _lip(Fbar)
    lam, LT, e0 = sys.lam, sys.lip, sys.e0
    K = max(M * lip / (1 - lam) ** 2, (lip + 2) / (1 - lam))
    band = (1 - lam) * e0
    eps = epsilon
    uppers = [
        band,
        band * eps / (3 * K),
        (gamma_delta / LT) / (2 / ((1 - lam) * LT) + 3 * lam * K / eps),
        (eps * gamma_delta / LT) / (2 * K + 3 * K ** 2 / eps + 2 * eps / ((1 - lam) * LT)
                                    + 3 * lam * K),
    ]
    delta = safety * min(uppers)
    c = perturbation_constants(sys, Fbar, M, delta, gamma_delta, epsilon, p)
    if not c.feasible:
        raise InfeasibleError("no feasible delta: " + "; ".join(c.violated_conditions))
    return delta


def orbit_separation(sys, orbit: PeriodicOrbit) -> float:
    """Separation gamma_delta usable for a true orbit.

    The minimum pairwise distance, capped so that gamma3 stays inside
    the (1-lambda) e0 band as delta -> 0.
    """
    gamma = close_segment(sys, orbit.points).gamma
    return min(gamma, (1 - sys.lam) * sys.e0 * sys.lip)


class LockingPerturbation(Sum):
    """F_bar - epsilon d(., O) + h with the data it was built from."""

    def __init__(self, parts, orbit, epsilon, constants, h):
        super().__init__(parts)
        self.orbit, self.epsilon, self.constants, self.h = orbit, epsilon, constants, h


def build_locking_perturbation(Fbar: Observable, orbit: PeriodicOrbit, epsilon: float,
                               h: Observable | None = None,
                               constants: PerturbationConstants | None = None,
                               system=None) -> Observable:
    """G1 = Fbar - epsilon d(., orbit) + h.

    Without ``constants`` the result is uncertified and ``h`` must be
    omitted.  ``system`` defaults to the one Fbar was solved on.
    """
    if epsilon < 0:
        raise ValidationError("epsilon must be nonnegative")
    if constants is not None and not constants.feasible:
        raise InfeasibleError("infeasible perturbation constants: "
                              + "; ".join(constants.violated_conditions))
    if h is not None:
        if constants is None:
            raise ValidationError("a secondary perturbation h needs feasibility constants")
        if not h.sup_bound < constants.h_sup_bound:
            raise ValidationError(f"||h||_0 = {h.sup_bound:g} must be < K delta/(2p) = "
                                  f"{constants.h_sup_bound:g}")
        if not h.lipschitz_bound <= 1:
            raise ValidationError(f"Lip(h) = {h.lipschitz_bound:g} must be <= 1")
    if system is None:
        sol = getattr(Fbar, "solution", None)
        if sol is None:
            raise ValidationError("system required when Fbar carries no sub-action solution")
        system = sol.system
    parts = [Fbar]
    if epsilon > 0:
        parts.append(Scale(-epsilon, DistToSet(system, orbit.points)))
    if h is not None:
        parts.append(h)
    G1 = LockingPerturbation(parts, orbit, epsilon, constants, h)
    G1.system = system
    return G1


@dataclass
class LockinBudget:
    methods: tuple = ("enumeration", "gibbs", "preorbit")
    p_max: int = 8
    betas: tuple = (4096.0,)
    gibbs_resolution: int | None = None
    mass_threshold: float = 0.99
    radius: float | None = None  # defaults to rho of the constants
    subaction_resolution: int | None = None
    n_preorbits: int = 20
    preorbit_depth: int = 60
    seed: int = 0


@dataclass
class LockinReport:
    orbit: PeriodicOrbit
    methods: dict
    certified: bool

    def to_dict(self) -> dict:
        return {"orbit": self.orbit.to_dict(), "methods": self.methods,
                "certified": self.certified}


def _same_orbit(sys, a: PeriodicOrbit, b: PeriodicOrbit, tol=1e-9) -> bool:
    if a.period != b.period:
        return False
    if sys.kind != "circle":
        return set(a.points) == set(b.points)
    return all(min(sys.metric(x, y) for y in b.points) <= tol for x in a.points)


def _method_enumeration(sys, G1, orbit, budget):
    (best, v1), (second, v2) = ranked_periodic_orbits(sys, G1, budget.p_max, top=2)
    ok = _same_orbit(sys, best, orbit)
    return {"passed": ok, "margin": v1 - v2, "best_orbit": best.to_dict(),
            "best_average": v1, "runner_up": second.to_dict(), "runner_up_average": v2}


def _method_gibbs(sys, G1, orbit, budget, radius):
    from .thermo import equilibrium_state, mass_near

    betas = sorted(budget.betas)
    masses = []
    for b in betas:
        st = equilibrium_state(sys, G1, b, budget.gibbs_resolution, measure=True)
        if not st.converged:
            raise ConvergenceError(f"equilibrium state at beta={b:g} did not converge")
        masses.append(mass_near(st, orbit.points, radius))
    return {"passed": masses[-1] >= budget.mass_threshold,
            "margin": masses[-1] - budget.mass_threshold,
            "betas": betas, "masses": masses, "radius": radius}


def _method_preorbit(sys, G1, orbit, budget):
    sol = solve_subaction(sys, G1, budget.subaction_resolution)
    if not sol.converged:
        raise ConvergenceError(f"sub-action for G1 did not converge (residual {sol.residual:.3g})")
    rng = np.random.default_rng(budget.seed)
    from .dynamics import random_points

    starts = random_points(sys, budget.n_preorbits, rng)
    ratios, fails = [], 0
    for z in starts:
        z = float(z) if sys.kind == "circle" else z
        pre = calibrated_preorbit(sys, G1, sol, z, budget.preorbit_depth)
        rep = alpha_limit_check(sys, pre.points, orbit)
        ratios.append(rep.worst_ratio)
        fails += not rep.passed
    worst = max(ratios)
    return {"passed": fails == 0, "margin": 1.0 - worst, "failures": fails,
            "checked": len(starts), "worst_ratio": worst, "alpha_G1": sol.alpha, "residual": sol.residual}


def certify_lockin(sys, G1: Observable, orbit: PeriodicOrbit, budget: LockinBudget | None = None,
                   radius: float | None = None) -> LockinReport:
    """Run the requested certification methods; budget failures are per-method."""
    from .orbits import verify_periodic

    if not verify_periodic(sys, orbit.points):
        raise ValidationError("orbit fails periodicity verification")
    budget = budget or LockinBudget()
    if radius is None:
        radius = budget.radius
    if radius is None:
        c = getattr(G1, "constants", None)
        radius = c.rho if c is not None else (1 - sys.lam) * sys.e0
    unknown = set(budget.methods) - {"enumeration", "gibbs", "preorbit"}
    if unknown:
        raise ValidationError(f"unknown certification methods {sorted(unknown)}")
    results = {}
    for name in budget.methods:
        try:
            if name == "enumeration":
                results[name] = _method_enumeration(sys, G1, orbit, budget)
            elif name == "gibbs":
                results[name] = _method_gibbs(sys, G1, orbit, budget, radius)
            else:
                results[name] = _method_preorbit(sys, G1, orbit, budget)
        except (BudgetExceeded, ConvergenceError) as exc:
            results[name] = {"passed": False, "margin": None, "error": str(exc)}
    certified = bool(results) and all(r["passed"] for r in results.values())
    return LockinReport(orbit, results, certified)


def preimage_separation(sys, orbit: PeriodicOrbit, rho: float, n_samples: int = 1000,
                        seed: int = 0) -> float:
    """Smallest distance to the orbit among non-tracking preimages of points near it.

    For z within rho of y_k, the tracking preimage is the one on the branch
    through y_{k-1}; all other preimages should stay gamma3 away from the orbit.
    """
    if sys.kind != "circle":
        raise ValidationError("preimage_separation is implemented for circle maps")
    rng = np.random.default_rng(seed)
    pts = np.asarray(orbit.points)
    p = len(pts)
    worst = math.inf
    for _ in range(n_samples):
        k = int(rng.integers(p))
        z = float(np.mod(pts[k] + rng.uniform(-rho, rho), 1.0))
        prev = pts[(k - 1) % p]
        for y, _ in sys.preimages(z):
            if sys.metric(y, prev) <= rho:
                continue
            worst = min(worst, float(sys.metric(y, pts).min()))
    return worst


@dataclass
class LockResult:
    solution: object
    Fbar: Observable
    orbit: PeriodicOrbit
    orbit_average: float
    constants: PerturbationConstants
    G1: Observable
    report: LockinReport | None = None

    def to_dict(self) -> dict:
        out = {"alpha": self.solution.alpha, "subaction_residual": self.solution.residual,
               "orbit": self.orbit.to_dict(), "orbit_average": self.orbit_average,
               "constants": self.constants.to_dict(),
               "lip_G1": self.G1.lipschitz_bound}
        if self.report is not None:
            out["report"] = self.report.to_dict()
        return out


def lock_orbit(sys, F: Observable, epsilon: float = 0.1, M: int = 1, p_max: int = 8,
               delta: float | None = None, gamma_delta: float | None = None,
               orbit: PeriodicOrbit | None = None, resolution: int | None = None,
               safety: float = 0.5, budget: LockinBudget | None = None,
               certify: bool = True) -> LockResult:
    """Full pipeline: sub-action, maximizing orbit, constants, G1 and certification."""
    from .orbits import best_periodic_orbit

    sol = solve_subaction(sys, F, resolution)
    Fbar = reduced_function(F, sol)
    if orbit is None:
        orbit, avg = best_periodic_orbit(sys, F, p_max)
    else:
        avg = float(np.mean(F.values(orbit.points if sys.kind != "circle"
                                     else np.asarray(orbit.points))))
    gamma_delta = orbit_separation(sys, orbit) if gamma_delta is None else gamma_delta
    if delta is None:
        delta = feasible_delta(sys, Fbar, M, gamma_delta, epsilon, orbit.period, safety)
    constants = perturbation_constants(sys, Fbar, M, delta, gamma_delta, epsilon, orbit.period)
    G1 = build_locking_perturbation(Fbar, orbit, epsilon, None, constants, sys)
    res = LockResult(sol, Fbar, orbit, avg, constants, G1)
    if certify:
        if budget is None:
            budget = LockinBudget(subaction_resolution=resolution, gibbs_resolution=resolution)
        res.report = certify_lockin(sys, G1, orbit, budget)
    return res
