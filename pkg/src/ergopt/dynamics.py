"""Expanding systems: circle maps x -> m x mod 1 and one-sided (sub)shifts.

Circle points are floats in [0, 1) (or numpy arrays of them).  Shift points
are tuples of symbols, read as the canonical representative of the cylinder
they spell out.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import TruncationError, ValidationError

__all__ = [
    "CircleMap",
    "ShiftSpace",
    "forward",
    "preimages",
    "metric",
    "system_from_config",
    "random_points",
]


def circle_diff(x, y):
    """Signed difference x - y lifted to [-1/2, 1/2)."""
    return np.mod(np.asarray(x, dtype=float) - y + 0.5, 1.0) - 0.5


@dataclass(frozen=True)
class CircleMap:
    """The map x -> m x mod 1 on the circle R/Z."""

    m: int = 2

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise ValidationError(f"circle map needs integer m >= 2, got {self.m!r}")

    kind = "circle"

    @property
    def lam(self) -> float:
        return 1.0 / self.m

    @property
    def e0(self) -> float:
        # strictly inside the 1/(2m) injectivity radius
        return 1.0 / (4 * self.m)

    @property
    def lip(self) -> float:
        return float(self.m)

    @property
    def branch_bound(self) -> int:
        return self.m

    @property
    def diameter(self) -> float:
        return 0.5

    @property
    def topological_entropy(self) -> float:
        return math.log(self.m)

    def validate(self, x):
        a = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(a)) or np.any(a < 0.0) or np.any(a >= 1.0):
            raise ValidationError(f"circle point outside [0, 1): {x!r}")
        return x

    def step(self, x):
        return np.mod(self.m * np.asarray(x, dtype=float), 1.0)

    def forward(self, x, n: int = 1):
        if n < 0:
            raise ValidationError("forward needs n >= 0")
        self.validate(x)
        y = np.asarray(x, dtype=float)
        for _ in range(n):
            y = self.step(y)
        return float(y) if y.ndim == 0 else y

    def preimages(self, x) -> list[tuple[float, int]]:
        self.validate(x)
        # (x + i)/m can round up to 1.0 when x is just below 1
        return [(float((x + i) / self.m) % 1.0, i) for i in range(self.m)]

    def preimage_array(self, x: np.ndarray) -> np.ndarray:
        """All preimages of an array of points, shape (len(x), m)."""
        x = np.asarray(x, dtype=float)
        return (x[..., None] + np.arange(self.m)) / self.m

    def metric(self, x, y):
        d = np.abs(circle_diff(x, y))
        return float(d) if d.ndim == 0 else d

    def inverse_branch(self, center, i: int, y):
        """Branch i of T^{-1} on the ball around ``center``, applied to y.

        Branch i maps ``center`` to (center + i)/m and is continued
        continuously over B(center, e0).
        """
        lifted = center + circle_diff(y, center)
        out = np.mod((lifted + i) / self.m, 1.0)
        return float(out) if np.ndim(out) == 0 else out

    def branch_through(self, xk, z):
        """The inverse branch S with S(T(xk)) = xk, applied to z."""
        txk = self.step(xk)
        out = np.mod(xk + circle_diff(z, txk) / self.m, 1.0)
        return float(out) if np.ndim(out) == 0 else out

    def to_config(self) -> dict:
        return {"kind": "circle", "m": self.m}


@dataclass(frozen=True)
class ShiftSpace:
    """One-sided shift on ``symbols`` letters, optionally a subshift of finite type.

    ``matrix`` is None for the full shift, otherwise a 0/1 transition matrix
    (tuple of tuples) where matrix[a][b] = 1 allows the word ...ab....
    The metric is lam_s ** (first disagreeing index).
    """

    symbols: int = 2
    matrix: tuple | None = None
    lam_s: float = 0.5
    depth: int = 40
    _adj: tuple = field(init=False, repr=False, compare=False, default=())

    def __post_init__(self):
        if int(self.symbols) != self.symbols or self.symbols < 2:
            raise ValidationError("shift needs at least 2 symbols")
        if not 0.0 < self.lam_s < 1.0:
            raise ValidationError(f"metric base lambda must lie in (0, 1), got {self.lam_s}")
        if self.depth < 2:
            raise ValidationError("truncation depth must be >= 2")
        if self.matrix is not None:
            mat = tuple(tuple(int(v) for v in row) for row in self.matrix)
            n = self.symbols
            if len(mat) != n or any(len(r) != n for r in mat):
                raise ValidationError(f"transition matrix must be {n}x{n}")
            if any(v not in (0, 1) for r in mat for v in r):
                raise ValidationError("transition matrix entries must be 0 or 1")
            if not _irreducible(np.array(mat)):
                raise ValidationError("transition matrix is not irreducible")
            object.__setattr__(self, "matrix", mat)
        a = self.adjacency
        if a.sum(axis=0).max() < 2:
            raise ValidationError("system needs at least 2 inverse branches somewhere")
        object.__setattr__(self, "_adj", tuple(map(tuple, a)))

    @property
    def kind(self) -> str:
        return "shift" if self.matrix is None else "sft"

    @property
    def adjacency(self) -> np.ndarray:
        if self.matrix is None:
            return np.ones((self.symbols, self.symbols), dtype=int)
        return np.array(self.matrix, dtype=int)

    @property
    def lam(self) -> float:
        return self.lam_s

    @property
    def e0(self) -> float:
        # closed ball of radius lam_s = words sharing the first symbol
        return self.lam_s

    @property
    def lip(self) -> float:
        return 1.0 / self.lam_s

    @property
    def branch_bound(self) -> int:
        return int(self.adjacency.sum(axis=0).max())

    @property
    def diameter(self) -> float:
        return 1.0

    @property
    def topological_entropy(self) -> float:
        return float(math.log(max(abs(np.linalg.eigvals(self.adjacency)))))

    def allowed(self, a: int, b: int) -> bool:
        return bool(self._adj[a][b])

    def validate(self, x):
        if not isinstance(x, tuple) or len(x) == 0:
            raise ValidationError(f"shift point must be a nonempty tuple of symbols: {x!r}")
        for s in x:
            if not (isinstance(s, (int, np.integer)) and 0 <= s < self.symbols):
                raise ValidationError(f"symbol {s!r} out of range in {x!r}")
        for a, b in zip(x, x[1:]):
            if not self._adj[a][b]:
                raise ValidationError(f"inadmissible transition {a}->{b} in {x!r}")
        return x

    def forward(self, x, n: int = 1):
        if n < 0:
            raise ValidationError("forward needs n >= 0")
        self.validate(x)
        if n >= len(x):
            raise TruncationError(
                f"forward by {n} needs more than the {len(x)} stored symbols")
        return x[n:]

    def step(self, x):
        return self.forward(x, 1)

    def preimages(self, x) -> list[tuple[tuple, int]]:
        self.validate(x)
        return [(((s,) + x)[: self.depth], s)
                for s in range(self.symbols) if self._adj[s][x[0]]]

    def metric(self, x, y) -> float:
        n = min(len(x), len(y), self.depth)
        for k in range(n):
            if x[k] != y[k]:
                return self.lam_s ** k
        return 0.0

    def inverse_branch(self, center, i: int, y):
        if not self._adj[i][y[0]]:
            raise ValidationError(f"branch {i} undefined at {y!r}")
        return ((i,) + tuple(y))[: self.depth]

    def branch_through(self, xk, z):
        """The inverse branch S with S(T(xk)) = xk, i.e. prepend xk[0]."""
        return self.inverse_branch(None, xk[0], z)

    def periodic_point(self, word: Sequence[int]) -> tuple:
        word = tuple(int(s) for s in word)
        reps = -(-self.depth // len(word))
        return (word * reps)[: self.depth]

    def to_config(self) -> dict:
        if self.matrix is None:
            return {"kind": "shift", "symbols": self.symbols, "lambda": self.lam_s,
                    "depth": self.depth}
        return {"kind": "sft", "matrix": [list(r) for r in self.matrix],
                "lambda": self.lam_s, "depth": self.depth}


def _irreducible(a: np.ndarray) -> bool:
    n = len(a)
    reach = (np.eye(n, dtype=int) + a) > 0
    for _ in range(n):
        reach = (reach.astype(int) @ reach.astype(int)) > 0
    return bool(reach.all())


def forward(sys, x, n: int = 1):
    return sys.forward(x, n)


def preimages(sys, x):
    return sys.preimages(x)


def metric(sys, x, y):
    return sys.metric(x, y)


def system_from_config(spec: dict):
    kind = spec.get("kind")
    if kind == "circle":
        return CircleMap(int(spec.get("m", 2)))
    if kind == "shift":
        return ShiftSpace(int(spec.get("symbols", 2)), None,
                          float(spec.get("lambda", 0.5)), int(spec.get("depth", 40)))
    if kind == "sft":
        mat = spec.get("matrix")
        if mat is None:
            raise ValidationError("sft system needs a matrix")
        return ShiftSpace(len(mat), tuple(tuple(r) for r in mat),
                          float(spec.get("lambda", 0.5)), int(spec.get("depth", 40)))
    raise ValidationError(f"unknown system kind {kind!r}")


def random_points(sys, n: int, rng: np.random.Generator, depth: int | None = None):
    """n random points: uniform on the circle, a Markov walk on the shift."""
    if sys.kind == "circle":
        return rng.random(n)
    depth = depth or sys.depth
    adj = sys.adjacency
    out = []
    for _ in range(n):
        w = [int(rng.integers(sys.symbols))]
        for _ in range(depth - 1):
            w.append(int(rng.choice(np.flatnonzero(adj[w[-1]]))))
        out.append(tuple(w))
    return out
