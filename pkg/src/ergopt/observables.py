"""Lipschitz observables with exact evaluation and certified bounds.

Every observable carries ``lipschitz_bound`` and ``sup_bound``.  Composite
nodes (sums, scalings, pull-backs, distance-to-set) keep perturbed functions
exactly evaluable and compose their certificates.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import RepresentationMismatch, ValidationError

__all__ = [
    "Observable",
    "Trig",
    "PiecewiseLinear",
    "LocallyConstant",
    "Constant",
    "Sum",
    "Scale",
    "DistToSet",
    "PullBack",
    "evaluate",
    "birkhoff_average",
    "observable_from_config",
]


def _is_word(x) -> bool:
    return isinstance(x, tuple)


class Observable:
    """Base class.  Subclasses implement ``_circle`` and/or ``_word``."""

    kind = "any"  # "circle", "shift" or "any"
    lipschitz_bound: float = 0.0
    sup_bound: float = 0.0

    def _circle(self, x: np.ndarray) -> np.ndarray:
        raise RepresentationMismatch(f"{type(self).__name__} cannot be evaluated on circle points")

    def _word(self, w: tuple) -> float:
        raise RepresentationMismatch(f"{type(self).__name__} cannot be evaluated on shift words")

    def __call__(self, x):
        if _is_word(x):
            return float(self._word(x))
        a = np.asarray(x, dtype=float)
        out = self._circle(a)
        return float(out) if a.ndim == 0 else out

    def values(self, points) -> np.ndarray:
        """Evaluate on a batch: a float array (circle) or a list of words."""
        if isinstance(points, np.ndarray):
            return np.asarray(self._circle(points), dtype=float)
        if len(points) and _is_word(points[0]):
            return np.array([self._word(w) for w in points], dtype=float)
        return np.asarray(self._circle(np.asarray(points, dtype=float)), dtype=float)

    @property
    def norm(self) -> float:
        """Certified upper bound on sup|f| + Lip(f)."""
        return self.sup_bound + self.lipschitz_bound

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Constant(other)
        return Sum([self, other])

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Constant(other)
        return Sum([self, Scale(-1.0, other)])

    def __rsub__(self, other):
        return Constant(other) - self

    def __mul__(self, a):
        return Scale(float(a), self)

    __rmul__ = __mul__

    def __neg__(self):
        return Scale(-1.0, self)

    def to_config(self) -> dict:
        raise ValidationError(f"{type(self).__name__} has no config representation")


class Trig(Observable):
    """sum_k a_k cos(2 pi k x) + b_k sin(2 pi k x) on the circle."""

    kind = "circle"

    def __init__(self, terms: Sequence[Sequence[float]], phase: float = 0.0):
        self.terms = [(int(k), float(a), float(b)) for k, a, b in terms]
        if any(k < 0 for k, _, _ in self.terms):
            raise ValidationError("trig frequencies must be nonnegative")
        self.phase = float(phase)
        self.lipschitz_bound = sum(2 * math.pi * k * (abs(a) + abs(b)) for k, a, b in self.terms)
        self.sup_bound = sum(abs(a) + (abs(b) if k else 0.0) for k, a, b in self.terms)

    def _circle(self, x):
        t = 2 * math.pi * (x - self.phase)
        out = np.zeros_like(t, dtype=float)
        for k, a, b in self.terms:
            if a:
                out = out + a * np.cos(k * t)
            if b and k:
                out = out + b * np.sin(k * t)
        return out

    def to_config(self):
        cfg = {"type": "trig", "terms": [list(t) for t in self.terms]}
        if self.phase:
            cfg["phase"] = self.phase
        return cfg


def cosine(theta: float = 0.0) -> Trig:
    """cos(2 pi (x - theta))."""
    return Trig([(1, 1.0, 0.0)], phase=theta)


class PiecewiseLinear(Observable):
    """Periodic linear interpolation of a breakpoint/value table on [0, 1)."""

    kind = "circle"

    def __init__(self, breakpoints: Sequence[float], values: Sequence[float]):
        bp = np.asarray(breakpoints, dtype=float)
        v = np.asarray(values, dtype=float)
        if bp.ndim != 1 or len(bp) != len(v) or len(bp) < 1:
            raise ValidationError("breakpoints and values must be equal-length lists")
        if np.any(bp < 0) or np.any(bp >= 1) or np.any(np.diff(bp) <= 0):
            raise ValidationError("breakpoints must be strictly increasing in [0, 1)")
        self.breakpoints, self.table = bp, v
        self._xp = np.concatenate([bp - 1.0, bp, bp + 1.0])
        self._fp = np.tile(v, 3)
        gaps = np.diff(np.append(bp, bp[0] + 1.0))
        slopes = np.abs(np.diff(np.append(v, v[0]))) / gaps
        self.lipschitz_bound = float(slopes.max())
        self.sup_bound = float(np.abs(v).max())

    def _circle(self, x):
        return np.interp(np.mod(x, 1.0), self._xp, self._fp)

    def to_config(self):
        return {"type": "pwl", "breakpoints": self.breakpoints.tolist(),
                "values": self.table.tolist()}


class LocallyConstant(Observable):
    """A function of the first ``depth`` symbols of a shift point."""

    kind = "shift"

    def __init__(self, table: dict, depth: int, lam_s: float = 0.5):
        self.table = {tuple(int(s) for s in k): float(v) for k, v in table.items()}
        self.depth = int(depth)
        if any(len(k) != self.depth for k in self.table):
            raise ValidationError(f"all table words must have length {self.depth}")
        vals = np.array(list(self.table.values()))
        self.lam_s = lam_s
        self.lipschitz_bound = float(vals.max() - vals.min()) / lam_s ** self.depth
        self.sup_bound = float(np.abs(vals).max())

    def _word(self, w):
        if len(w) < self.depth:
            raise ValidationError(f"word {w!r} shorter than table depth {self.depth}")
        try:
            return self.table[w[: self.depth]]
        except KeyError:
            raise ValidationError(f"no table entry for cylinder {w[:self.depth]!r}") from None

    def to_config(self):
        return {"type": "table", "depth": self.depth, "lambda": self.lam_s,
                "values": {"".join(map(str, k)): v for k, v in sorted(self.table.items())}}


class Constant(Observable):
    def __init__(self, value: float):
        self.value = float(value)
        self.lipschitz_bound = 0.0
        self.sup_bound = abs(self.value)

    def _circle(self, x):
        return np.full(np.shape(x), self.value)

    def _word(self, w):
        return self.value

    def to_config(self):
        return {"type": "constant", "value": self.value}


def _combined_kind(parts) -> str:
    kinds = {p.kind for p in parts} - {"any"}
    if len(kinds) > 1:
        raise RepresentationMismatch(f"cannot combine observables of kinds {sorted(kinds)}")
    return kinds.pop() if kinds else "any"


class Sum(Observable):
    def __init__(self, parts: Sequence[Observable]):
        flat = []
        for p in parts:
            flat.extend(p.parts if type(p) is Sum else [p])
        self.parts = flat
        self.kind = _combined_kind(flat)
        self.lipschitz_bound = sum(p.lipschitz_bound for p in flat)
        self.sup_bound = sum(p.sup_bound for p in flat)

    def _circle(self, x):
        return sum(p._circle(x) for p in self.parts)

    def _word(self, w):
        return sum(p._word(w) for p in self.parts)

    def to_config(self):
        return {"type": "sum", "terms": [p.to_config() for p in self.parts]}


class Scale(Observable):
    def __init__(self, factor: float, of: Observable):
        self.factor, self.of = float(factor), of
        self.kind = of.kind
        self.lipschitz_bound = abs(self.factor) * of.lipschitz_bound
        self.sup_bound = abs(self.factor) * of.sup_bound

    def _circle(self, x):
        return self.factor * self.of._circle(x)

    def _word(self, w):
        return self.factor * self.of._word(w)

    def to_config(self):
        return {"type": "scale", "factor": self.factor, "of": self.of.to_config()}


class DistToSet(Observable):
    """x -> (min over s in S of d(x, s)) ** power, for a finite set S."""

    def __init__(self, system, points, power: int = 1):
        if power not in (1, 2):
            raise ValidationError("distance power must be 1 or 2")
        self.system, self.power = system, power
        self.kind = "circle" if system.kind == "circle" else "shift"
        if self.kind == "circle":
            self.points = np.atleast_1d(np.asarray(points, dtype=float))
        else:
            self.points = [tuple(p) for p in points]
        if len(self.points) == 0:
            raise ValidationError("distance to an empty set")
        self.sup_bound = system.diameter ** power
        self.lipschitz_bound = float(power * system.diameter ** (power - 1))

    def _circle(self, x):
        if self.kind != "circle":
            return super()._circle(x)
        d = np.abs(np.mod(x[..., None] - self.points + 0.5, 1.0) - 0.5)
        return d.min(axis=-1) ** self.power

    def _word(self, w):
        if self.kind != "shift":
            return super()._word(w)
        return min(self.system.metric(w, p) for p in self.points) ** self.power

    def to_config(self):
        pts = self.points.tolist() if self.kind == "circle" else [list(p) for p in self.points]
        cfg = {"type": "dist_to_orbit", "points": pts}
        if self.power != 1:
            cfg["power"] = self.power
        return cfg


class PullBack(Observable):
    """G o T."""

    def __init__(self, of: Observable, system):
        self.of, self.system = of, system
        self.kind = of.kind
        self.lipschitz_bound = of.lipschitz_bound * system.lip
        self.sup_bound = of.sup_bound

    def _circle(self, x):
        return self.of._circle(self.system.step(x))

    def _word(self, w):
        return self.of._word(self.system.step(w))


def evaluate(F: Observable, x):
    return F(x)


def birkhoff_average(sys, F: Observable, orbit) -> float:
    """Average of F over a verified periodic orbit."""
    from .orbits import verify_periodic

    if not verify_periodic(sys, orbit.points):
        raise ValidationError("orbit fails periodicity verification")
    vals = F.values(np.asarray(orbit.points, dtype=float) if sys.kind == "circle"
                    else list(orbit.points))
    return math.fsum(vals) / len(vals)


def observable_from_config(spec: dict, system=None) -> Observable:
    t = spec.get("type")
    if t == "trig":
        return Trig(spec["terms"], phase=spec.get("phase", 0.0))
    if t == "pwl":
        return PiecewiseLinear(spec["breakpoints"], spec["values"])
    if t == "table":
        lam = spec.get("lambda", getattr(system, "lam_s", 0.5))
        vals = {tuple(int(c) for c in k): v for k, v in spec["values"].items()}
        return LocallyConstant(vals, spec["depth"], lam)
    if t == "constant":
        return Constant(spec["value"])
    if t == "sum":
        return Sum([observable_from_config(s, system) for s in spec["terms"]])
    if t == "scale":
        return Scale(spec["factor"], observable_from_config(spec["of"], system))
    if t == "dist_to_orbit":
        if system is None:
            raise ValidationError("dist_to_orbit needs a system")
        pts = spec["points"]
        if system.kind != "circle":
            pts = [tuple(p) for p in pts]
        return DistToSet(system, pts, int(spec.get("power", 1)))
    raise ValidationError(f"unknown observable type {t!r}")
