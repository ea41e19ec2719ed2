"""Uniform grids over the fundamental domain of a Heisenberg-type nilmanifold.

The fundamental domain is ``[-1/2, 1/2)^m x [0, 1)^k`` in exponential
coordinates ``(q, tau)``.  Vertical axes are plainly periodic.  Crossing a
horizontal face is the lattice identification

    f(q + e_a, tau) = f(q, tau - B(e_a, q)),      B_s(q, q') = q^T M_s q',

so a horizontal wrap also shears every vertical coordinate by an amount that
depends on the remaining horizontal coordinates.  Grid sizes are admissible
only when that shear moves grid points onto grid points.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from nilheat.errors import GridIncompatible, IndexOutOfRange

# Antisymmetric central first-derivative weights for offsets 1..r.
STENCILS = {
    2: np.array([1.0 / 2.0]),
    4: np.array([2.0 / 3.0, -1.0 / 12.0]),
}


def check_divisibility(sizes, m, k, shear):
    """Raise :class:`GridIncompatible` unless every wrap shear is grid exact.

    Crossing the face of horizontal axis ``a`` shifts ``tau_s`` by
    ``M_s[a, b] * x_b`` with ``x_b = -1/2 + i/N_b``; in index units that is
    ``M_s[a, b] * (i * N_tau / N_b - N_tau / 2)``.
    """
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != m + k:
        raise GridIncompatible(f"expected {m + k} grid sizes, got {len(sizes)}")
    for s in range(k):
        nt = sizes[m + s]
        couples = sorted({b for a in range(m) for b in range(m) if shear[s, a, b] != 0})
        for b in couples:
            nb = sizes[b]
            if nt % nb != 0 or nt % 2 != 0:
                raise GridIncompatible(
                    f"vertical axis {m + s} has {nt} points; the lattice shear requires it "
                    f"to be even and divisible by the size {nb} of horizontal axis {b}"
                )


@dataclass(frozen=True)
class Grid:
    """Cell-centred-free uniform grid; point ``i`` on axis ``j`` sits at
    ``origin[j] + i * spacings[j]``."""

    sizes: tuple[int, ...]
    m: int
    k: int
    shear: np.ndarray = field(repr=False)  # (k, m, m) integer matrices M_s
    stencil_order: int = 4
    scheme: str = "invariant"

    def __post_init__(self):
        if self.stencil_order not in STENCILS:
            raise ValueError(f"stencil order must be one of {sorted(STENCILS)}")
        if min(self.sizes) < 2 * len(STENCILS[self.stencil_order]) + 1:
            raise GridIncompatible("grid too small for the stencil width")
        check_divisibility(self.sizes, self.m, self.k, self.shear)

    @property
    def ndim(self) -> int:
        return self.m + self.k

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sizes

    @property
    def npoints(self) -> int:
        return int(np.prod(self.sizes))

    @cached_property
    def spacings(self) -> np.ndarray:
        return 1.0 / np.asarray(self.sizes, dtype=float)

    @cached_property
    def origin(self) -> np.ndarray:
        return np.array([-0.5] * self.m + [0.0] * self.k)

    @property
    def weights(self) -> np.ndarray:
        return STENCILS[self.stencil_order]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def axis_coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + np.arange(self.sizes[axis]) * self.spacings[axis]

    def coords(self, axis: int) -> np.ndarray:
        """Coordinate ``axis`` as an array broadcastable against the grid."""
        shape = [1] * self.ndim
        shape[axis] = self.sizes[axis]
        return self.axis_coords(axis).reshape(shape)

    def mesh(self, sparse: bool = True):
        return np.meshgrid(*[self.axis_coords(j) for j in range(self.ndim)],
                           indexing="ij", sparse=sparse)

    @cached_property
    def shift_tables(self) -> np.ndarray:
        """Integer wrap shears, shape ``(m, k, m, max N)``.

        ``shift_tables[a, s, b, i]`` is the ``tau_s`` index offset contributed
        by ``x_b = x_b(i)`` when a stencil leaves the domain through the upper
        face of horizontal axis ``a``; the lower face uses the opposite sign.
        """
        m, k = self.m, self.k
        nmax = max(self.sizes[:m])
        tab = np.zeros((m, k, m, nmax), dtype=np.int64)
        for a in range(m):
            for s in range(k):
                nt = self.sizes[m + s]
                for b in range(m):
                    c = int(self.shear[s, a, b])
                    if c == 0:
                        continue
                    nb = self.sizes[b]
                    i = np.arange(nb)
                    # x_b * N_tau, exact in integers
                    xn = i * (nt // nb) - nt // 2
                    tab[a, s, b, :nb] = c * xn
        return tab

    def wrap_permutation(self, axis: int, direction: int = 1) -> np.ndarray:
        """Flat index map realising a unit shift along ``axis``.

        Entry ``p`` is the flat index of the grid point reached from ``p`` by
        one step of ``direction`` (+1 or -1) along ``axis``, applying the
        lattice identification when the step leaves the domain.
        """
        if not 0 <= axis < self.ndim:
            raise IndexOutOfRange(f"axis {axis} outside 0..{self.ndim - 1}")
        if direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        idx = list(np.indices(self.sizes))
        n_ax = self.sizes[axis]
        moved = idx[axis] + direction
        if axis < self.m:
            crossed = (moved >= n_ax) | (moved < 0)
            tab = self.shift_tables[axis]
            for s in range(self.k):
                shift = np.zeros(self.sizes, dtype=np.int64)
                for b in range(self.m):
                    shift += tab[s, b][idx[b]]
                t_ax = self.m + s
                idx[t_ax] = np.where(crossed, idx[t_ax] - direction * shift, idx[t_ax])
                idx[t_ax] %= self.sizes[t_ax]
        idx[axis] = moved % n_ax
        return np.ravel_multi_index(tuple(idx), self.sizes).ravel()
