"""Fixed-radius neighbor search on a uniform background grid."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalBlowupError

# half-stencil: each unordered cell pair is visited once
_HALF_STENCIL = ((0, 0), (1, -1), (1, 0), (1, 1), (0, 1))


@dataclass(frozen=True)
class NeighborList:
    """Unordered pairs (i < j), sorted lexicographically, with |x_i - x_j| < radius."""

    pairs: np.ndarray  # (P, 2) int64
    n: int
    radius: float

    def __len__(self):
        return len(self.pairs)

    def as_set(self):
        return set(map(tuple, self.pairs.tolist()))

    def counts(self):
        return np.bincount(self.pairs.ravel(), minlength=self.n)

    def neighbors_of(self, i):
        p = self.pairs
        return np.sort(np.concatenate([p[p[:, 0] == i, 1], p[p[:, 1] == i, 0]]))


def _canonical(i, j, n, radius):
    a, b = np.minimum(i, j), np.maximum(i, j)
    if len(a):
        order = np.lexsort((b, a))
        a, b = a[order], b[order]
    return NeighborList(np.column_stack([a, b]).astype(np.int64).reshape(-1, 2), n, float(radius))


def brute_force(positions, radius):
    """Exact O(N^2) enumeration; the reference for the grid search."""
    if not radius > 0:
        raise ConfigurationError(f"radius must be positive, got {radius!r}")
    x = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(x)
    if n < 2:
        return NeighborList(np.zeros((0, 2), dtype=np.int64), n, float(radius))
    i, j = np.triu_indices(n, k=1)
    d = x[i] - x[j]
    keep = np.einsum("ij,ij->i", d, d) < radius * radius
    return _canonical(i[keep], j[keep], n, radius)


def build_grid(positions, radius, cell_size=None):
    """Cell-list search returning every pair closer than ``radius``.

    ``cell_size`` defaults to ``radius`` and must not be smaller, so that the
    one-ring stencil is complete.
    """
    x = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(x)
    if cell_size is None:
        cell_size = radius
    if not radius > 0 or cell_size < radius:
        raise ConfigurationError(f"cell size {cell_size} must be >= search radius {radius} > 0")
    if not np.isfinite(x).all():
        bad = int(np.flatnonzero(~np.isfinite(x).all(axis=1))[0])
        raise NumericalBlowupError("non-finite particle position in neighbor search", particle=bad)
    if n < 2:
        return NeighborList(np.zeros((0, 2), dtype=np.int64), n, float(radius))

    cell = np.floor((x - x.min(axis=0)) / cell_size).astype(np.int64) + 1
    ny = int(cell[:, 1].max()) + 2
    key = cell[:, 0] * ny + cell[:, 1]
    order = np.argsort(key, kind="stable")
    skey = key[order]
    ui, ii = [], []
    for dx, dy in _HALF_STENCIL:
        target = skey + dx * ny + dy
        lo = np.searchsorted(skey, target, side="left")
        hi = np.searchsorted(skey, target, side="right")
        if dx == 0 and dy == 0:
            lo = np.maximum(lo, np.arange(n) + 1)  # j after i within the same cell
        cnt = np.maximum(hi - lo, 0)
        total = int(cnt.sum())
        if total == 0:
            continue
        src = np.repeat(np.arange(n), cnt)
        start = np.repeat(lo - np.concatenate([[0], np.cumsum(cnt)[:-1]]), cnt)
        dst = start + np.arange(total)
        ui.append(order[src])
        ii.append(order[dst])
    if not ui:
        return NeighborList(np.zeros((0, 2), dtype=np.int64), n, float(radius))
    a, b = np.concatenate(ui), np.concatenate(ii)
    d = x[a] - x[b]
    keep = np.einsum("ij,ij->i", d, d) < radius * radius
    return _canonical(a[keep], b[keep], n, radius)


class VerletList:
    """Grid search with a skin; rebuilt once any particle moved skin/2."""

    def __init__(self, radius, skin):
        self.radius = float(radius)
        self.skin = float(skin)
        self._ref = None
        self._candidates = None
        self.rebuilds = 0

    def update(self, positions):
        x = np.asarray(positions, dtype=float)
        if self._ref is None or len(x) != len(self._ref) or self._moved(x) > 0.5 * self.skin:
            self._candidates = build_grid(x, self.radius + self.skin)
            self._ref = x.copy()
            self.rebuilds += 1
        p = self._candidates.pairs
        d = x[p[:, 0]] - x[p[:, 1]]
        keep = np.einsum("ij,ij->i", d, d) < self.radius * self.radius
        return NeighborList(p[keep], len(x), self.radius)

    def _moved(self, x):
        d = x - self._ref
        return float(np.sqrt(np.max(np.einsum("ij,ij->i", d, d)))) if len(x) else 0.0

    def state_dict(self):
        return {"ref": self._ref, "pairs": None if self._candidates is None else self._candidates.pairs,
                "rebuilds": self.rebuilds}

    def load_state_dict(self, d, n):
        self._ref = d["ref"]
        self._candidates = None if d["pairs"] is None else NeighborList(d["pairs"], n, self.radius + self.skin)
        self.rebuilds = int(d["rebuilds"])
