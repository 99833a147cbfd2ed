"""Grid carriers for functions on an expanding system.

Circle grids are G equispaced nodes j/G; off-grid values use periodic linear
interpolation.  Shift grids are all admissible words of a fixed depth r and
values are read by exact cylinder lookup.
"""
from __future__ import annotations

import csv
import functools
import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .observables import Observable

__all__ = ["Grid", "GridFunction", "GridInterpolant", "make_grid"]


@dataclass(eq=False)
class Grid:
    """Nodes plus the preimage interpolation stencil of every node.

    For node j and branch i, the preimage value of a grid function v is
    ``(1 - w[j, i]) * v[lo[j, i]] + w[j, i] * v[hi[j, i]]``; ``valid`` masks
    branches that do not exist (subshifts).
    """

    system: object
    size: int
    nodes: object  # ndarray (circle) or list of words
    pre_points: object  # ndarray (n, d) or list of lists of words
    lo: np.ndarray
    hi: np.ndarray
    w: np.ndarray
    valid: np.ndarray
    image: np.ndarray | None  # index of T(node), circle only
    depth: int | None = None
    index: dict | None = None

    @property
    def is_circle(self) -> bool:
        return self.system.kind == "circle"

    @property
    def spacing(self) -> float:
        return 1.0 / self.size if self.is_circle else self.system.lam_s ** self.depth

    def node_array(self):
        return self.nodes

    def values_of(self, F: Observable) -> np.ndarray:
        return F.values(self.nodes)

    def pre_values_of(self, F: Observable) -> np.ndarray:
        """F at every (node, branch) preimage; -inf on invalid branches."""
        if self.is_circle:
            return F.values(self.pre_points)
        out = np.full(self.lo.shape, -np.inf)
        for j, row in enumerate(self.pre_points):
            for i, word in enumerate(row):
                if word is not None:
                    out[j, i] = F(word)
        return out

    def interp(self, v: np.ndarray) -> np.ndarray:
        """Grid function v read at every preimage, shape (n, d)."""
        return (1.0 - self.w) * v[self.lo] + self.w * v[self.hi]


@functools.lru_cache(maxsize=16)
def make_grid(system, size: int) -> Grid:
    """Build (and cache) the grid of a system.

    ``size`` is the node count G for circle maps (a power of two) and the
    word depth r for shifts.
    """
    if system.kind == "circle":
        return _circle_grid(system, int(size))
    return _shift_grid(system, int(size))


def _circle_grid(system, G: int) -> Grid:
    if G < 2 or G & (G - 1):
        raise ValidationError(f"circle grid size must be a power of two, got {G}")
    m = system.m
    j = np.arange(G)
    # exact integer positions: preimage i of node j sits at (j + i G)/m grid units
    num = j[:, None] + np.arange(m)[None, :] * G
    lo = num // m
    w = (num % m) / m
    lo %= G
    hi = (lo + 1) % G
    pre = num / (m * G)
    valid = np.ones_like(lo, dtype=bool)
    image = (m * j) % G
    return Grid(system, G, j / G, pre, lo, hi, w, valid, image)


def _shift_grid(system, r: int) -> Grid:
    if r < 1:
        raise ValidationError("shift grid depth must be >= 1")
    n_sym = system.symbols
    if n_sym ** r > 2 ** 20:
        raise ValidationError(f"shift grid of depth {r} exceeds the node budget")
    words = [w for w in itertools.product(range(n_sym), repeat=r)
             if all(system.allowed(a, b) for a, b in zip(w, w[1:]))]
    index = {w: k for k, w in enumerate(words)}
    n = len(words)
    lo = np.zeros((n, n_sym), dtype=int)
    valid = np.zeros((n, n_sym), dtype=bool)
    pre = []
    for k, word in enumerate(words):
        row = []
        for s in range(n_sym):
            if system.allowed(s, word[0]):
                lo[k, s] = index[((s,) + word)[:r]]
                valid[k, s] = True
                row.append((s,) + word)
            else:
                row.append(None)
        pre.append(row)
    return Grid(system, r, words, pre, lo, lo.copy(), np.zeros((n, n_sym)), valid,
                None, depth=r, index=index)


class GridFunction:
    """Values of a function at the nodes of a grid."""

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (len(grid.nodes),):
            raise ValidationError(
                f"grid function needs {len(grid.nodes)} values, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("grid function values must be finite")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, system, size):
        g = make_grid(system, size)
        return cls(g, np.zeros(len(g.nodes)))

    @classmethod
    def from_observable(cls, system, size, F: Observable):
        g = make_grid(system, size)
        return cls(g, g.values_of(F))

    @property
    def system(self):
        return self.grid.system

    def __call__(self, x):
        g = self.grid
        if g.is_circle:
            a = np.asarray(x, dtype=float)
            pos = np.mod(a, 1.0) * g.size
            lo = np.floor(pos).astype(int)
            t = pos - lo
            lo %= g.size
            out = (1.0 - t) * self.values[lo] + t * self.values[(lo + 1) % g.size]
            return float(out) if a.ndim == 0 else out
        if len(x) < g.depth:
            raise ValidationError(f"word {x!r} shorter than grid depth {g.depth}")
        return float(self.values[g.index[tuple(x[: g.depth])]])

    def lipschitz(self) -> float:
        """Lipschitz constant of the interpolant (circle) or cylinder bound (shift)."""
        v = self.values
        if self.grid.is_circle:
            return float(np.abs(np.diff(np.append(v, v[0]))).max() * self.grid.size)
        return float(v.max() - v.min()) / self.grid.system.lam_s ** self.grid.depth

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def __add__(self, c):
        return GridFunction(self.grid, self.values + c)

    def __sub__(self, other):
        other = other.values if isinstance(other, GridFunction) else other
        return GridFunction(self.grid, self.values - other)

    def to_csv(self, path, header_path=None, **meta):
        """Write (node, value) rows and an optional JSON header."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["node", "value"])
            for node, val in zip(self.grid.nodes, self.values):
                key = repr(float(node)) if self.grid.is_circle else "".join(map(str, node))
                wr.writerow([key, repr(float(val))])
        if header_path is not None:
            head = {"resolution": self.grid.size, "system": self.system.to_config(), **meta}
            with open(header_path, "w") as fh:
                json.dump(head, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path, system, size):
        g = make_grid(system, size)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        if len(rows) != len(g.nodes):
            raise ValidationError(f"CSV has {len(rows)} rows, grid has {len(g.nodes)} nodes")
        return cls(g, [float(r[1]) for r in rows])


class GridInterpolant(Observable):
    """A grid function viewed as an observable."""

    def __init__(self, u: GridFunction):
        self.u = u
        self.kind = "circle" if u.grid.is_circle else "shift"
        self.lipschitz_bound = u.lipschitz()
        self.sup_bound = u.sup()

    def _circle(self, x):
        if self.kind != "circle":
            return super()._circle(x)
        return self.u(x)

    def _word(self, w):
        if self.kind != "shift":
            return super()._word(w)
        return self.u(w)
