"""Rectangular histogram grids with an explicit out-of-box cell."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Box ``[lower, upper)`` split into ``bins`` cells per axis.

    Axes listed in ``discrete`` hold integer modes; their cells are centred
    on the integers ``lower..upper`` and ``bins`` is ignored for them.
    Masses are stored flat in C order with one extra trailing entry for
    everything outside the box.
    """

    lower: tuple
    upper: tuple
    bins: tuple
    discrete: tuple = ()

    def __post_init__(self):
        d = len(self.lower)
        if len(self.upper) != d or len(self.bins) != d:
            raise ValueError("lower, upper and bins must have equal length")
        for i in range(d):
            if i in self.discrete:
                if self.upper[i] < self.lower[i]:
                    raise ValueError("empty mode range")
                continue
            if not self.upper[i] > self.lower[i]:
                raise ValueError("box must have positive volume")
            if self.bins[i] < 2:
                raise ValueError("need at least 2 bins per continuous axis")

    @property
    def dimension(self):
        return len(self.lower)

    @property
    def shape(self):
        return tuple(int(self.upper[i] - self.lower[i] + 1) if i in self.discrete
                     else int(self.bins[i]) for i in range(self.dimension))

    @property
    def n_cells(self):
        return int(np.prod(self.shape))

    def edges(self, axis):
        if axis in self.discrete:
            return np.arange(self.lower[axis], self.upper[axis] + 2) - 0.5
        return np.linspace(self.lower[axis], self.upper[axis], self.bins[axis] + 1)

    def cell_index(self, X):
        """Flat cell index of each row of ``X``; ``n_cells`` when outside."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = np.zeros(len(X), dtype=np.int64)
        out = np.zeros(len(X), dtype=bool)
        for a, n in enumerate(self.shape):
            e = self.edges(a)
            k = np.searchsorted(e, X[:, a], side="right") - 1
            out |= (k < 0) | (k >= n) | ~np.isfinite(X[:, a])
            idx = idx * n + np.clip(k, 0, n - 1)
        idx[out] = self.n_cells
        return idx

    def histogram(self, X, weights=None):
        """Masses per cell plus the out-of-box entry (not normalised)."""
        X = np.asarray(X, dtype=float)
        if X.size == 0:
            return np.zeros(self.n_cells + 1)
        return np.bincount(self.cell_index(X), weights=weights,
                           minlength=self.n_cells + 1).astype(float)

    def volumes(self):
        """Cell volume (counting measure on discrete axes)."""
        widths = [np.ones(n) if a in self.discrete else np.diff(self.edges(a))
                  for a, n in enumerate(self.shape)]
        vol = widths[0]
        for w in widths[1:]:
            vol = np.multiply.outer(vol, w)
        return np.asarray(vol, dtype=float).ravel()

    def centers(self):
        axes = [self.edges(a)[:-1] + 0.5 * np.diff(self.edges(a)) for a in range(self.dimension)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def cell_bounds(self):
        """``(lo, hi)`` arrays of shape ``(n_cells, d)``."""
        los = [self.edges(a)[:-1] for a in range(self.dimension)]
        his = [self.edges(a)[1:] for a in range(self.dimension)]
        lo = np.stack([m.ravel() for m in np.meshgrid(*los, indexing="ij")], axis=-1)
        hi = np.stack([m.ravel() for m in np.meshgrid(*his, indexing="ij")], axis=-1)
        return lo, hi

    def sample_in_cells(self, cells, rng):
        """One uniform point in each listed cell (mode axes exact)."""
        lo, hi = self.cell_bounds()
        lo, hi = lo[cells], hi[cells]
        u = rng.random(lo.shape)
        X = lo + u * (hi - lo)
        for a in self.discrete:
            X[:, a] = lo[:, a] + 0.5
        return X

    def refine(self, factor=2):
        """Each continuous cell split ``factor`` times per axis."""
        bins = tuple(b if a in self.discrete else b * factor for a, b in enumerate(self.bins))
        return GridSpec(self.lower, self.upper, bins, self.discrete)

    def coarsen(self, masses, factor=2):
        """Aggregate masses of ``self.refine(factor)`` back onto ``self``."""
        fine = self.refine(factor)
        m = np.asarray(masses, dtype=float)
        body = m[:-1].reshape(fine.shape)
        for a in range(self.dimension):
            if a in self.discrete:
                continue
            shp = list(body.shape)
            shp[a:a + 1] = [self.shape[a], factor]
            body = body.reshape(shp).sum(axis=a + 1)
        return np.concatenate([body.ravel(), m[-1:]])

    def to_dict(self):
        return {"lower": list(map(float, self.lower)), "upper": list(map(float, self.upper)),
                "bins": list(map(int, self.bins)), "discrete": list(self.discrete)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["lower"]), tuple(d["upper"]), tuple(d["bins"]),
                   tuple(d.get("discrete", ())))


def total_variation(p, q):
    """``0.5 * sum |p - q|`` after normalising both mass vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())
