"""Entropy estimators, partition refinements and return-time diagnostics.

Also hosts the approximation toolkit used to push maximizing measures
towards low-complexity orbits: the entropy/Jensen bound, the drift lower
bound, exhaustive best-approximating orbit search and the distance
perturbation f - beta_size d(., L).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BudgetExceeded, ConvergenceError, ValidationError
from .observables import DistToSet, Observable, Scale, Sum
from .orbits import PeriodicOrbit, _orbit_for_key, periodic_orbit_table, ranked_periodic_orbits

__all__ = [
    "jensen_entropy_bound",
    "drift_lower_bound_check",
    "dynamic_ball_fraction",
    "brin_katok_estimate",
    "MarkovPartitionLevel",
    "refine_partition",
    "empirical_partition_entropy",
    "bq_search",
    "morris_step",
    "DigitPoint",
    "ReturnStatistics",
    "return_gap_diagnostic",
]

PARTITION_BUDGET = 2 ** 22


def jensen_entropy_bound(a) -> tuple[float, float]:
    """(sum -a_i log a_i, 1 + (sum a_i) log n) with 0 log 0 = 0."""
    a = np.asarray(a, dtype=float).ravel()
    if len(a) == 0:
        raise ValidationError("need at least one weight")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValidationError("weights must be finite and nonnegative")
    pos = a[a > 0]
    lhs = math.fsum(-pos * np.log(pos))
    rhs = 1.0 + math.fsum(a) * math.log(len(a))
    if lhs > rhs:
        raise AssertionError(f"entropy bound violated: {lhs!r} > {rhs!r}")
    return lhs, rhs


@dataclass
class DriftReport:
    lhs: float
    rhs: float
    slack: float
    C: float
    mean_distance: float
    passed: bool

    def to_dict(self):
        return dict(self.__dict__)


def drift_lower_bound_check(sys, f: Observable, sol, K_set, nu: PeriodicOrbit,
                            tol: float = 1e-6) -> DriftReport:
    """Check -alpha - C * int d(x, K) dnu <= int f dnu for a periodic measure nu.

    C is the Lipschitz certificate of f + u - u o T built from the solved
    sub-action u.
    """
    if not sol.converged:
        raise ConvergenceError(f"sub-action not converged (residual {sol.residual:.3g})")
    from .grid import GridInterpolant
    from .observables import PullBack

    U = GridInterpolant(sol.u)
    ftilde = Sum([f, U, Scale(-1.0, PullBack(U, sys))])
    C = ftilde.lipschitz_bound
    pts = np.asarray(nu.points) if sys.kind == "circle" else list(nu.points)
    dist = DistToSet(sys, K_set)
    mean_d = math.fsum(dist.values(pts)) / nu.period
    lhs = -sol.alpha - C * mean_d
    rhs = math.fsum(f.values(pts)) / nu.period
    slack = rhs - lhs
    return DriftReport(lhs, rhs, slack, C, mean_d, slack >= -tol)


def _iterate_distances(sys, sample, w, L):
    """Max over k = 0..L of d(T^k x, T^k w) for every sample point."""
    if sys.kind == "circle":
        x = np.asarray(sample, dtype=float).copy()
        y = float(w)
        worst = np.abs(np.mod(x - y + 0.5, 1.0) - 0.5)
        for _ in range(L):
            x = np.mod(sys.m * x, 1.0)
            y = (sys.m * y) % 1.0
            worst = np.maximum(worst, np.abs(np.mod(x - y + 0.5, 1.0) - 0.5))
        return worst
    out = []
    for x in sample:
        if len(x) <= L or len(w) <= L:
            raise ValidationError(f"words must be longer than L={L}")
        out.append(max(sys.metric(x[k:], w[k:]) for k in range(L + 1)))
    return np.array(out)


def dynamic_ball_fraction(sys, sample, w, L: int, eps: float) -> float:
    """Fraction of sample points whose first L iterates eps-track those of w."""
    if L < 0 or eps <= 0:
        raise ValidationError("need L >= 0 and eps > 0")
    if len(sample) == 0:
        raise ValidationError("empty sample")
    return float(np.mean(_iterate_distances(sys, sample, w, L) < eps))


@dataclass
class BrinKatokEstimate:
    estimate: float
    per_L: dict
    fractions: dict
    lower_bound_only: bool
    sample_size: int

    def to_dict(self):
        return {"estimate": self.estimate, "per_L": self.per_L, "fractions": self.fractions,
                "lower_bound_only": self.lower_bound_only, "sample_size": self.sample_size}


def brin_katok_estimate(sys, sample, w, L_schedule, eps: float,
                        min_sample: int = 100) -> BrinKatokEstimate:
    """Slope of -log mu(V(w, L, eps)) against L over the schedule.

    A ball containing no sample point yields only the lower bound
    log(n)/L; the result is then flagged ``lower_bound_only``.
    """
    Ls = sorted(int(L) for L in L_schedule)
    if not Ls or Ls[0] < 0:
        raise ValidationError("L schedule must be nonempty and nonnegative")
    n = len(sample)
    if n < min_sample:
        raise ValidationError(f"sample of size {n} below the minimum {min_sample}")
    dist = None
    if sys.kind == "circle":
        # one pass: running max distances recorded at every scheduled L
        x = np.asarray(sample, dtype=float).copy()
        y = float(w)
        dist = {}
        worst = np.abs(np.mod(x - y + 0.5, 1.0) - 0.5)
        for k in range(Ls[-1] + 1):
            if k:
                x = np.mod(sys.m * x, 1.0)
                y = (sys.m * y) % 1.0
                worst = np.maximum(worst, np.abs(np.mod(x - y + 0.5, 1.0) - 0.5))
            if k in Ls:
                dist[k] = float(np.mean(worst < eps))
    fracs = {L: (dist[L] if dist is not None else dynamic_ball_fraction(sys, sample, w, L, eps))
             for L in Ls}
    lower = any(v == 0 for v in fracs.values())
    logs = {L: (-math.log(v) if v > 0 else math.log(n)) for L, v in fracs.items()}
    per_L = {L: (logs[L] / L if L else math.nan) for L in Ls}
    if len(Ls) >= 2:
        est = float(np.polyfit(Ls, [logs[L] for L in Ls], 1)[0])
    else:
        est = per_L[Ls[0]]
    return BrinKatokEstimate(est, per_L, fracs, lower, n)


@dataclass
class MarkovPartitionLevel:
    base: list
    level: int
    cells: list
    diameters: np.ndarray
    bound: float

    def __len__(self):
        return len(self.cells)


def refine_partition(sys, n: int) -> MarkovPartitionLevel:
    """Level-n refinement of the natural Markov partition.

    Circle cells are [k/m^n, (k+1)/m^n) written as (k, m^n); shift cells
    are admissible words of length n.  ``bound`` is lambda^(n-1) times the
    base-cell diameter.
    """
    if n < 1:
        raise ValidationError("level must be >= 1")
    if sys.kind == "circle":
        m = sys.m
        if m ** n > PARTITION_BUDGET:
            raise BudgetExceeded(f"level {n} has {m}^{n} cells, over budget")
        N = m ** n
        base = [(i, m) for i in range(m)]
        cells = [(k, N) for k in range(N)]
        diam = np.full(N, min(1.0 / N, 0.5))
        base_diam = min(1.0 / m, 0.5)
    else:
        if sys.symbols ** n > PARTITION_BUDGET:
            raise BudgetExceeded(f"level {n} exceeds the partition budget")
        from .grid import make_grid

        cells = list(make_grid(sys, n).nodes)
        base = [(s,) for s in range(sys.symbols)]
        diam = np.full(len(cells), sys.lam_s ** n)
        base_diam = sys.lam_s
    bound = sys.lam ** (n - 1) * base_diam
    return MarkovPartitionLevel(base, n, cells, diam, bound)


@dataclass
class PartitionEntropy:
    per_k: dict
    minimum: float

    def to_dict(self):
        return {"per_k": self.per_k, "minimum": self.minimum}


def _cell_labels(sys, points, k):
    if sys.kind == "circle":
        y = np.asarray(points, dtype=float) * sys.m ** k
        # nodes like j/3^9 land a hair below a cell boundary in floating point
        near = np.rint(y)
        y = np.where(np.abs(y - near) <= 1e-9, near, y)
        return np.mod(np.floor(y).astype(np.int64), sys.m ** k)
    if any(len(w) < k for w in points):
        raise ValidationError(f"words shorter than partition level {k}")
    table = {}
    return np.array([table.setdefault(w[:k], len(table)) for w in points])


def empirical_partition_entropy(sys, points, weights=None, k_schedule=range(1, 9)) -> PartitionEntropy:
    """(1/k) sum over level-k cells of -nu(A) log nu(A), and its minimum.

    ``points`` are grid nodes or sample points; ``weights`` defaults to
    uniform.  Sums are taken in base 2 and converted once, so dyadic
    masses give exact results.
    """
    n = len(points)
    if n == 0:
        raise ValidationError("no points")
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != n or np.any(w < 0):
        raise ValidationError("weights must be nonnegative, one per point")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError(f"weights must sum to 1, got {w.sum()!r}")
    per_k = {}
    for k in k_schedule:
        if k < 1:
            raise ValidationError("partition levels must be >= 1")
        labels = _cell_labels(sys, points, k)
        mass = np.bincount(labels, weights=w)
        mass = mass[mass > 0]
        # group equal masses so uniform measures sum exactly
        vals, counts = np.unique(mass, return_counts=True)
        h2 = math.fsum(-c * v * math.log2(v) for v, c in zip(vals, counts))
        per_k[int(k)] = h2 / k * math.log(2)
    return PartitionEntropy(per_k, min(per_k.values()))


@dataclass
class BQRow:
    n: int
    orbit: PeriodicOrbit
    value: float

    def to_dict(self):
        return {"n": self.n, "orbit": self.orbit.to_dict(), "value": self.value}


def bq_search(sys, K_set, n_max: int) -> list[BQRow]:
    """For n = 1..n_max, the orbit of period <= n minimizing int d(x, K) dmu.

    Exhaustive enumeration; values are nonincreasing in n by construction.
    """
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    neg_dist = Scale(-1.0, DistToSet(sys, K_set))
    best = None
    rows = []
    by_period = {}
    for p, key, avg in periodic_orbit_table(sys, neg_dist, n_max):
        cur = by_period.get(p)
        if cur is None or avg > cur[1]:
            by_period[p] = (key, avg)
    for n in range(1, n_max + 1):
        if n in by_period:
            key, avg = by_period[n]
            if best is None or avg > best[2]:
                best = (n, key, avg)
        p, key, avg = best
        rows.append(BQRow(n, _orbit_for_key(sys, p, key), -avg + 0.0))
    return rows


@dataclass
class MorrisReport:
    beta_size: float
    target: PeriodicOrbit
    best_orbit: PeriodicOrbit
    best_average: float
    maximizer_on_target: bool
    gap_before: float
    gap_after: float

    def to_dict(self):
        return {"beta_size": self.beta_size, "target": self.target.to_dict(),
                "best_orbit": self.best_orbit.to_dict(), "best_average": self.best_average,
                "maximizer_on_target": self.maximizer_on_target,
                "gap_before": self.gap_before, "gap_after": self.gap_after,
                "gap_increased": self.gap_after > self.gap_before}


def morris_step(sys, f: Observable, target: PeriodicOrbit, beta_size: float,
                p_max: int = 8) -> tuple[Observable, MorrisReport]:
    """f_n = f - beta_size * d(., L_n) and a check that L_n becomes the maximizer.

    ``gap_before``/``gap_after`` are the best-minus-runner-up averages over
    periodic orbits of period <= p_max for f and f_n.
    """
    if beta_size <= 0:
        raise ValidationError("beta_size must be positive")
    fn = Sum([f, Scale(-beta_size, DistToSet(sys, target.points))])
    (b0, v0), (_, w0) = ranked_periodic_orbits(sys, f, p_max, top=2)
    (b1, v1), (_, w1) = ranked_periodic_orbits(sys, fn, p_max, top=2)
    from .perturb import _same_orbit

    rep = MorrisReport(beta_size, target, b1, v1, _same_orbit(sys, b1, target), v0 - w0, v1 - w1)
    return fn, rep


class DigitPoint:
    """A circle point given by its base-m digits, so long orbits stay exact.

    T^n(x) is read off digits n, n+1, ... to double precision.
    """

    def __init__(self, m: int, digits, period: int | None = None):
        self.m = int(m)
        self.digits = np.asarray(digits, dtype=np.int64)
        if np.any(self.digits < 0) or np.any(self.digits >= self.m):
            raise ValidationError(f"digits must lie in 0..{self.m - 1}")
        self.period = period
        self.window = int(math.ceil(60 / math.log2(self.m)))

    @classmethod
    def periodic(cls, m: int, word):
        return cls(m, list(word), period=len(word))

    @classmethod
    def random(cls, m: int, length: int, rng: np.random.Generator):
        return cls(m, rng.integers(0, m, size=length))

    @classmethod
    def from_fraction(cls, m: int, q: Fraction, length: int):
        """Exact base-m expansion of a rational in [0, 1)."""
        q = Fraction(q)
        if not 0 <= q < 1:
            raise ValidationError("rational point must lie in [0, 1)")
        num, den = q.numerator, q.denominator
        out = []
        for _ in range(length):
            num *= m
            out.append(num // den)
            num %= den
        return cls(m, out)

    def digit_array(self, length: int) -> np.ndarray:
        if self.period:
            reps = -(-length // self.period)
            return np.tile(self.digits, reps)[:length]
        if length > len(self.digits):
            raise ValidationError(f"need {length} digits, have {len(self.digits)}")
        return self.digits[:length]

    def orbit_values(self, horizon: int) -> np.ndarray:
        """T^n(x) for n = 0..horizon-1."""
        d = self.digit_array(horizon + self.window).astype(float)
        weights = float(self.m) ** -np.arange(1, self.window + 1)
        win = np.lib.stride_tricks.sliding_window_view(d, self.window)[:horizon]
        return np.mod(win @ weights, 1.0)

    def value(self) -> float:
        return float(self.orbit_values(1)[0])


@dataclass
class ReturnStatistics:
    Q: float
    N0: int
    N: int
    radius: float
    times: list
    gaps: list
    bound: float
    fraction_meeting_bound: float
    empty: bool = False
    notes: list = field(default_factory=list)

    @property
    def min_gap(self):
        return min(self.gaps) if self.gaps else None

    def to_dict(self):
        return {"Q": self.Q, "N0": self.N0, "N": self.N, "radius": self.radius,
                "n_returns": len(self.times), "min_gap": self.min_gap, "bound": self.bound,
                "fraction_meeting_bound": self.fraction_meeting_bound, "empty": self.empty,
                "notes": self.notes}


def return_gap_diagnostic(sys, q, w, Q: float, N0: int, N: int, horizon: int) -> ReturnStatistics:
    """Returns of the forward orbit of q to the ball B(w, Q^-N / 2).

    On the circle ``q`` may be a float, a Fraction or a DigitPoint (floats
    are expanded exactly, so their orbits eventually reach 0); on shifts it
    is a word at least ``horizon`` symbols long.
    """
    if not Q > 1:
        raise ValidationError("Q must exceed 1")
    if not N > N0:
        raise ValidationError("need N > N0")
    if horizon < 1 or horizon > 10 ** 7:
        raise BudgetExceeded("horizon must lie in 1..1e7")
    radius = 0.5 * Q ** (-N)
    if sys.kind == "circle":
        if not isinstance(q, DigitPoint):
            q = DigitPoint.from_fraction(sys.m, Fraction(q), horizon + 64)
        vals = q.orbit_values(horizon)
        d = np.abs(np.mod(vals - float(w) + 0.5, 1.0) - 0.5)
        times = np.flatnonzero(d <= radius).tolist()
    else:
        if len(q) < horizon + 1:
            raise ValidationError(f"word must have at least {horizon + 1} symbols")
        times = [n for n in range(horizon) if sys.metric(q[n:], w) <= radius]
    gaps = [b - a for a, b in zip(times, times[1:])]
    bound = math.sqrt(2) ** (N - N0 - 1)
    frac = float(np.mean([g >= bound for g in gaps])) if gaps else math.nan
    stats = ReturnStatistics(Q, N0, N, radius, times, gaps, bound, frac, not times)
    if not times:
        stats.notes.append("no returns within the horizon")
    elif not gaps:
        stats.notes.append("a single return: no gaps")
    return stats
