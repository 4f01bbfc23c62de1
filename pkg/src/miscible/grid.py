"""Axis-aligned box grids and the sparse face operators built on them.

Cell fields are flat arrays in x-fastest order: cell ``(i, j[, k])`` sits at
``i + nx*(j + ny*k)``.  For each axis ``a`` only interior faces are
represented; boundary faces carry zero flux by construction, so they never
need storage.

The building blocks per axis are

``diff[a]``  (faces x cells)   ``(c_hi - c_lo) / h_a``
``avg[a]``   (faces x cells)   ``(c_lo + c_hi) / 2``
``grad[a]``  (cells x cells)   ``avg[a].T @ diff[a]``: the mean of the two face
                               gradients of a cell, with boundary faces taken
                               as zero (centered inside, half one-sided at
                               the boundary).

With these, the divergence of a face flux is ``-diff[a].T @ F`` and the
divergence of a cell vector averaged to faces is ``-grad[a].T @ F``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid on ``[0, L_x] x [0, L_y] (x [0, L_z])``."""

    shape: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        lengths = tuple(float(L) for L in self.lengths)
        if len(shape) not in (2, 3) or len(lengths) != len(shape):
            raise InvalidArgumentError("grid must be 2D or 3D with one length per axis")
        if min(shape) < 4:
            raise InvalidArgumentError("every axis needs at least 4 cells")
        if not all(np.isfinite(L) and L > 0 for L in lengths):
            raise InvalidArgumentError("domain lengths must be positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lengths", lengths)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def ncells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def volume(self) -> float:
        return float(np.prod(self.spacing))

    def centers(self) -> np.ndarray:
        """Cell-center coordinates, shape ``(ncells, dim)``, x-fastest."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.shape, self.spacing)]
        mesh = np.meshgrid(*axes[::-1], indexing="ij")
        return np.stack([m.ravel() for m in mesh[::-1]], axis=-1)

    def to_array(self, f) -> np.ndarray:
        """View a flat field as an array indexed ``[k, j, i]`` (or ``[j, i]``)."""
        return np.asarray(f).reshape(self.shape[::-1])

    def integrate(self, f) -> float:
        return float(np.sum(f) * self.volume)

    def mean(self, f) -> float:
        return float(np.mean(f))

    @cached_property
    def ops(self) -> "FaceOperators":
        return FaceOperators(self)


def _kron_axis(grid: Grid, axis: int, block) -> sp.csr_matrix:
    """Embed a 1D operator acting on ``axis`` into the flat x-fastest layout."""
    out = sp.identity(1, format="csr")
    for a in reversed(range(grid.dim)):
        factor = block if a == axis else sp.identity(grid.shape[a], format="csr")
        out = sp.kron(out, factor, format="csr")
    return out


@dataclass
class FaceOperators:
    grid: Grid
    diff: list = field(init=False)
    avg: list = field(init=False)
    grad: list = field(init=False)
    lo: list = field(init=False)
    hi: list = field(init=False)

    def __post_init__(self):
        g = self.grid
        self.diff, self.avg, self.grad, self.lo, self.hi = [], [], [], [], []
        for a, (n, h) in enumerate(zip(g.shape, g.spacing)):
            lo1 = sp.eye(n - 1, n, k=0, format="csr")
            hi1 = sp.eye(n - 1, n, k=1, format="csr")
            lo, hi = _kron_axis(g, a, lo1), _kron_axis(g, a, hi1)
            diff = ((hi - lo) / h).tocsr()
            avg = (0.5 * (lo + hi)).tocsr()
            self.lo.append(lo)
            self.hi.append(hi)
            self.diff.append(diff)
            self.avg.append(avg)
            self.grad.append((avg.T @ diff).tocsr())

    def cell_gradient(self, f) -> np.ndarray:
        """Cell gradient, shape ``(ncells, dim)``; normal part is zero on boundary faces."""
        return np.stack([G @ f for G in self.grad], axis=-1)

    def wall_cells(self, axis: int) -> np.ndarray:
        """Boolean mask of the cells touching either wall normal to ``axis``."""
        g = self.grid
        idx = np.indices(g.shape[::-1]).reshape(g.dim, -1)[g.dim - 1 - axis]
        return (idx == 0) | (idx == g.shape[axis] - 1)

    def tangential_cell_gradient(self, f) -> np.ndarray:
        """Cell gradient with the wall-normal component set to zero in wall cells."""
        G = self.cell_gradient(f)
        for a in range(self.grid.dim):
            G[self.wall_cells(a), a] = 0.0
        return G

    def divergence_of_cell_vector(self, F) -> np.ndarray:
        """Divergence of a cell vector field averaged to faces, zero boundary flux."""
        return -sum(G.T @ F[:, a] for a, G in enumerate(self.grad))

    def divergence_of_face_flux(self, fluxes) -> np.ndarray:
        return -sum(D.T @ F for D, F in zip(self.diff, fluxes))

    def face_average(self, f) -> list:
        return [A @ f for A in self.avg]


def harmonic_face_mean(grid: Grid, K) -> list:
    """Harmonic mean of ``K`` on the interior faces of each axis."""
    ops = grid.ops
    out = []
    for lo, hi in zip(ops.lo, ops.hi):
        a, b = lo @ K, hi @ K
        out.append(2.0 * a * b / (a + b))
    return out
