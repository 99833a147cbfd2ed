"""Periodic orbits, pseudo-orbits, constructive shadowing and alpha-limit checks."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, ValidationError
from .observables import Observable

__all__ = [
    "PeriodicOrbit",
    "PseudoOrbit",
    "AlphaLimitReport",
    "enumerate_periodic",
    "periodic_orbit_table",
    "best_periodic_orbit",
    "close_segment",
    "pseudo_orbit",
    "shadow",
    "shadow_points",
    "alpha_limit_check",
    "verify_periodic",
    "orbit_from_point",
]

PERIODIC_TOL = 1e-10
# circle enumeration handles m**p - 1 points at once
CIRCLE_BUDGET = 2 ** 22
SHIFT_BUDGET = 2 ** 20


@dataclass
class PeriodicOrbit:
    points: list
    period: int
    verified: bool = False
    # exact circle representation: points[i] = numerators[i] / denominator
    numerators: list | None = field(default=None, repr=False)
    denominator: int | None = field(default=None, repr=False)

    def __len__(self):
        return self.period

    def key(self):
        """Hashable canonical form used in equality tests."""
        if self.numerators is not None:
            return ("q", self.period, tuple(self.numerators), self.denominator)
        return tuple(round(float(p), 9) if not isinstance(p, tuple) else p for p in self.points)

    def same_as(self, other: "PeriodicOrbit", tol: float = 1e-9) -> bool:
        if self.period != other.period:
            return False
        a, b = self.points, other.points
        if isinstance(a[0], tuple):
            return list(a) == list(b)
        d = np.abs(np.mod(np.asarray(a) - np.asarray(b) + 0.5, 1.0) - 0.5)
        return bool(np.all(d <= tol))

    def to_dict(self) -> dict:
        pts = [list(p) if isinstance(p, tuple) else float(p) for p in self.points]
        out = {"points": pts, "period": self.period, "verified": self.verified}
        if self.numerators is not None:
            out["exact"] = {"numerators": [int(k) for k in self.numerators],
                            "denominator": int(self.denominator)}
        return out


def _canonical_rotation(points):
    """Rotate so the smallest point comes first."""
    if isinstance(points[0], tuple):
        k = min(range(len(points)), key=lambda i: points[i])
    else:
        k = int(np.argmin(points))
    return list(points[k:]) + list(points[:k])


def verify_periodic(sys, points, tol: float = PERIODIC_TOL) -> bool:
    """T(points[i]) = points[i+1 mod p], points distinct and p minimal."""
    p = len(points)
    if p == 0:
        return False
    for i in range(p):
        nxt = points[(i + 1) % p]
        if isinstance(nxt, tuple):
            img = points[i][1:]
            if img[: len(nxt) - 1] != nxt[: len(img)][: len(nxt) - 1]:
                return False
        elif sys.metric(sys.step(points[i]), nxt) > tol:
            return False
    for i in range(p):
        for j in range(i + 1, p):
            if sys.metric(points[i], points[j]) <= tol:
                return False
    return True


def orbit_from_point(sys, y, period: int) -> PeriodicOrbit:
    pts = [y]
    for _ in range(period - 1):
        pts.append(sys.step(pts[-1]) if sys.kind == "circle" else _shift_rotate(sys, pts[-1]))
    pts = _canonical_rotation(pts)
    return PeriodicOrbit(pts, period, verify_periodic(sys, pts))


def _shift_rotate(sys, word):
    return sys.periodic_point(word[1:] + word[:1])


def _divisors(p):
    return [d for d in range(1, p) if p % d == 0]


def _check_budget(sys, p):
    if p < 1:
        raise ValidationError("period must be >= 1")
    if sys.kind == "circle":
        if sys.m ** p - 1 > CIRCLE_BUDGET:
            raise BudgetExceeded(f"period {p} exceeds the enumeration budget "
                                 f"({sys.m}^{p} points > {CIRCLE_BUDGET})")
    elif sys.symbols ** p > SHIFT_BUDGET:
        raise BudgetExceeded(f"period {p} exceeds the enumeration budget for shifts")


def _circle_fixed_points(m, p):
    """Numerators k of Fix(T^p) = {k/(m^p - 1)}, their cycle minima and minimal periods."""
    N = m ** p - 1
    k = np.arange(N, dtype=np.int64)
    minimal = np.full(N, p)
    for d in sorted(_divisors(p), reverse=True):
        step = N // (m ** d - 1)
        minimal[k % step == 0] = d
    idx = k.copy()
    cmin = k.copy()
    for _ in range(p - 1):
        idx = (m * idx) % N
        cmin = np.minimum(cmin, idx)
    return N, k, minimal, cmin


def enumerate_periodic(sys, p: int) -> list[PeriodicOrbit]:
    """All orbits of minimal period exactly p, in canonical form."""
    _check_budget(sys, p)
    if sys.kind == "circle":
        m = sys.m
        N, k, minimal, cmin = _circle_fixed_points(m, p)
        reps = k[(minimal == p) & (cmin == k)]
        out = []
        for r in reps:
            nums = [int(r)]
            for _ in range(p - 1):
                nums.append(nums[-1] * m % N)
            order = int(np.argmin(nums))
            nums = nums[order:] + nums[:order]
            pts = [q / N for q in nums]
            out.append(PeriodicOrbit(pts, p, verify_periodic(sys, pts), nums, N))
        return out
    seen = set()
    out = []
    for word in itertools.product(range(sys.symbols), repeat=p):
        cyc = word + word[:1]
        if not all(sys.allowed(a, b) for a, b in zip(cyc, cyc[1:])):
            continue
        rots = [word[i:] + word[:i] for i in range(p)]
        if any(word[:d] * (p // d) == word for d in _divisors(p)):
            continue
        canon = min(rots)
        if canon in seen:
            continue
        seen.add(canon)
        i0 = rots.index(canon)
        pts = [sys.periodic_point(rots[(i0 + i) % p]) for i in range(p)]
        out.append(PeriodicOrbit(pts, p, verify_periodic(sys, pts)))
    return out


def periodic_orbit_table(sys, F: Observable, p_max: int):
    """Average of F over every periodic orbit with minimal period <= p_max.

    Yields (period, orbit_key, average) where orbit_key is the smallest
    numerator (circle) or the canonical word (shift).
    """
    for p in range(1, p_max + 1):
        _check_budget(sys, p)
        if sys.kind == "circle":
            N, k, minimal, cmin = _circle_fixed_points(sys.m, p)
            sel = (minimal == p) & (cmin == k)
            reps = k[sel]
            vals = np.zeros(len(reps))
            idx = reps.copy()
            for _ in range(p):
                vals += F.values(idx / N)
                idx = (sys.m * idx) % N
            for r, v in zip(reps, vals / p):
                yield p, int(r), float(v)
        else:
            for orb in enumerate_periodic(sys, p):
                vals = F.values(list(orb.points))
                yield p, orb.points[0][:p], math.fsum(vals) / p


def _orbit_for_key(sys, p, key):
    if sys.kind == "circle":
        N = sys.m ** p - 1
        nums = [key]
        for _ in range(p - 1):
            nums.append(nums[-1] * sys.m % N)
        pts = [q / N for q in nums]
        return PeriodicOrbit(pts, p, verify_periodic(sys, pts), nums, N)
    word = tuple(key)
    pts = [sys.periodic_point(word[i:] + word[:i]) for i in range(p)]
    return PeriodicOrbit(pts, p, verify_periodic(sys, pts))


def ranked_periodic_orbits(sys, F: Observable, p_max: int, top: int = 2, rel_tol=1e-12):
    """The ``top`` best (orbit, average) pairs, deterministic tie-break."""
    rows = list(periodic_orbit_table(sys, F, p_max))
    if not rows:
        raise ValidationError("no periodic orbits enumerated")
    vals = np.array([r[2] for r in rows])
    scale = max(1.0, float(np.abs(vals).max()))
    # quantise so near-equal averages tie and fall back to (period, points)
    q = np.round(vals / (scale * rel_tol * 10)) if rel_tol else vals
    order = sorted(range(len(rows)), key=lambda i: (-q[i], rows[i][0], rows[i][1]))
    return [(_orbit_for_key(sys, rows[i][0], rows[i][1]), rows[i][2]) for i in order[:top]]


def best_periodic_orbit(sys, F: Observable, p_max: int):
    """Orbit of minimal period <= p_max maximizing the average of F."""
    (orb, avg), = ranked_periodic_orbits(sys, F, p_max, top=1)
    return orb, avg


@dataclass
class PseudoOrbit:
    points: list
    delta: float
    jumps: list
    gamma: float
    periodic: bool

    def __len__(self):
        return len(self.points)

    def to_dict(self) -> dict:
        pts = [list(p) if isinstance(p, tuple) else float(p) for p in self.points]
        return {"points": pts, "delta": self.delta, "jumps": self.jumps,
                "gamma": self.gamma, "periodic": self.periodic}


def _gaps(sys, points, periodic):
    n = len(points)
    last = n if periodic else n - 1
    return [sys.metric(sys.step(points[k]), points[(k + 1) % n]) for k in range(last)]


def pseudo_orbit(sys, points, periodic: bool = False, jump_positions=None) -> PseudoOrbit:
    """Bookkeeping for a (cyclic if ``periodic``) pseudo-orbit."""
    points = list(points)
    if not points:
        raise ValidationError("pseudo-orbit needs at least one point")
    for x in points:
        sys.validate(x)
    gaps = _gaps(sys, points, periodic)
    thresh = 1e-12 if sys.kind == "circle" else 0.0
    jumps = {k for k, g in enumerate(gaps) if g > thresh}
    if jump_positions is not None:
        jumps |= {int(j) for j in jump_positions}
    n = len(points)
    if n == 1:
        gamma = sys.e0
    else:
        gamma = min(sys.metric(points[i], points[j]) for i in range(n) for j in range(i + 1, n))
    return PseudoOrbit(points, max(gaps, default=0.0), sorted(jumps), gamma, periodic)


def close_segment(sys, segment, jump_positions=None) -> PseudoOrbit:
    """Close a finite segment into a cyclic pseudo-orbit."""
    return pseudo_orbit(sys, segment, periodic=True, jump_positions=jump_positions)


def _nested_point(sys, po: PseudoOrbit, start: int, steps: int, e0: float):
    """S_start o ... o S_{start+steps-1} applied to x_{start+steps}."""
    n = len(po.points)
    pts = po.points
    z = pts[(start + steps) % n]
    for k in range(start + steps - 1, start - 1, -1):
        xk = pts[k % n]
        if sys.kind == "circle":
            # the branch is only defined on B(T(x_k), e0)
            if sys.metric(z, sys.step(xk)) >= e0:
                raise ValidationError("shadowing branch left its e0-domain")
        z = sys.branch_through(xk, z)
    return z


def _branch_radius(sys, e0):
    if e0 is None:
        return sys.e0
    # inverse branches of x -> m x are injective on balls of radius < 1/(2m)
    limit = 0.5 / sys.m if sys.kind == "circle" else sys.lam_s
    if not 0 < e0 <= limit or (sys.kind == "circle" and e0 >= limit):
        raise ValidationError(f"branch radius e0={e0:g} exceeds the injectivity radius {limit:g}")
    return e0


def shadow_points(sys, po: PseudoOrbit, precision: float = 1e-12, e0: float | None = None):
    """The shadowing orbit evaluated at every index of the pseudo-orbit.

    Each y_k is computed by its own nested composition so no forward
    iteration (and no error amplification) is involved.  ``e0`` overrides
    the system's default branch radius (it must stay inside the
    injectivity radius).
    """
    lam, e0 = sys.lam, _branch_radius(sys, e0)
    if not po.delta < (1 - lam) * e0:
        raise ValidationError(
            f"shadowing needs delta < (1-lambda) e0 = {(1 - lam) * e0:g}, got delta={po.delta:g}")
    a = lam * po.delta / (1 - lam)
    n = len(po.points)
    if po.periodic:
        if sys.kind == "circle":
            diam = max(2 * a, sys.diameter)
            steps = 1
            while diam * lam ** steps > precision and steps < 200:
                steps += 1
        else:
            steps = sys.depth
        return [_nested_point(sys, po, k, steps, e0) for k in range(n)]
    return [_nested_point(sys, po, k, n - 1 - k, e0) for k in range(n)]


def shadow(sys, po: PseudoOrbit, precision: float = 1e-12, e0: float | None = None):
    """Shadow a pseudo-orbit by a true orbit.

    Returns (y, eps_bound) with eps_bound = delta/(1 - lambda); y is a
    PeriodicOrbit when the pseudo-orbit is periodic, else the starting point.
    """
    ys = shadow_points(sys, po, precision, e0)
    eps = po.delta / (1 - sys.lam)
    worst = max(sys.metric(y, x) for y, x in zip(ys, po.points))
    if worst > eps + 1e-12:
        raise RuntimeError(f"shadowing post-condition failed: {worst:g} > {eps:g}")
    if not po.periodic:
        return ys[0], eps
    p = len(ys)
    period = p
    for d in _divisors(p):
        if all(sys.metric(ys[i], ys[(i + d) % p]) <= PERIODIC_TOL for i in range(p)):
            period = d
            break
    pts = ys[:period]
    if sys.kind != "circle":
        pts = [tuple(y) for y in pts]
    orb = PeriodicOrbit(_canonical_rotation(pts), period)
    orb.verified = verify_periodic(sys, orb.points)
    return orb, eps


@dataclass
class AlphaLimitReport:
    passed: bool
    entry_index: int | None
    phase: int | None
    worst_ratio: float
    distances: list
    reason: str = ""

    def to_dict(self):
        return {"passed": self.passed, "entry_index": self.entry_index, "phase": self.phase,
                "worst_ratio": self.worst_ratio, "reason": self.reason,
                "final_distance": self.distances[-1] if self.distances else None}


def alpha_limit_check(sys, preorbit, orbit: PeriodicOrbit, bound: float | None = None,
                      min_tail: int | None = None, atol: float = 1e-12) -> AlphaLimitReport:
    """Check that a backward orbit converges onto a periodic orbit.

    ``preorbit`` lists z_0, z_{-1}, z_{-2}, ...  The tail from the first
    index after which every z_{-k} stays within ``bound`` of the
    phase-aligned orbit point must then approach it geometrically:
    d(z_{-(k0+j)}, y) <= lambda^j * bound (+ atol).
    """
    pts = list(getattr(preorbit, "points", preorbit))
    bound = (1 - sys.lam) * sys.e0 if bound is None else bound
    for k in range(len(pts) - 1):
        nxt = pts[k]
        img = sys.step(pts[k + 1])
        if isinstance(nxt, tuple):
            ok = img[: len(nxt) - 1] == nxt[: len(img)][: len(nxt) - 1]
        else:
            ok = sys.metric(img, nxt) <= PERIODIC_TOL
        if not ok:
            raise ValidationError(f"preorbit fails backward-orbit verification at index {k}")
    p = orbit.period
    ys = orbit.points
    n = len(pts)
    min_tail = min_tail or max(p + 1, 3)
    # phase l: z_{-k} is compared with y_{(l - k) mod p}
    best = None
    for l in range(p):
        dist = [sys.metric(pts[k], ys[(l - k) % p]) for k in range(n)]
        inside = [d < bound for d in dist]
        k0 = n
        while k0 > 0 and inside[k0 - 1]:
            k0 -= 1
        if best is None or k0 < best[0]:
            best = (k0, l, dist)
    k0, l, dist = best
    if n - k0 < min_tail:
        return AlphaLimitReport(False, None, None, math.inf, dist,
                                "preorbit does not stay within the shadowing bound")
    ratios = [max(dist[k0 + j] - atol, 0.0) / (sys.lam ** j * bound) for j in range(n - k0)]
    worst = max(ratios)
    return AlphaLimitReport(worst <= 1.0, k0, l, worst, dist,
                            "" if worst <= 1.0 else "distance decay slower than lambda^k")
