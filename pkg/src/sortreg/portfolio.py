"""
Quantile-spaced portfolio formation.

Breakpoints are estimated order statistics: for ``J`` portfolios on ``n``
observations the interior breakpoints are ``z_(floor(n j / J))`` for
``j = 1, ..., J-1`` (1-indexed order statistics).  Marginal bins are
left-closed and right-open; the outer bins extend to -inf / +inf, so an
observation equal to a breakpoint joins the upper portfolio.  For several
characteristics, cells are Cartesian products of the marginal bins and are
numbered in C (row-major) order, first characteristic most significant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionMismatch, EmptyInput, JTooLarge


@dataclass(frozen=True)
class Partition:
    J: int
    d: int
    breakpoints: tuple
    cell_of: np.ndarray
    counts: np.ndarray
    nonempty: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.J ** self.d

    def locate(self, z) -> int:
        """Cell index of an arbitrary point ``z`` (length ``d``)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.shape != (self.d,):
            raise DimensionMismatch(f"point has shape {z.shape}, partition has d={self.d}")
        bins = [int(np.searchsorted(b, v, side="right")) for b, v in zip(self.breakpoints, z)]
        return int(np.ravel_multi_index(bins, (self.J,) * self.d))

    def locate_many(self, points) -> np.ndarray:
        """Cell indices of the rows of an ``(m, d)`` array."""
        P = np.asarray(points, dtype=float)
        if P.ndim == 1:
            P = P[:, None] if self.d == 1 else P[None, :]
        if P.shape[1] != self.d:
            raise DimensionMismatch(f"points have {P.shape[1]} columns, partition has d={self.d}")
        cell = np.zeros(P.shape[0], dtype=np.int64)
        for k, b in enumerate(self.breakpoints):
            cell = cell * self.J + np.searchsorted(b, P[:, k], side="right")
        return cell


def marginal_breakpoints(values, J: int) -> np.ndarray:
    """Interior breakpoints ``[z_(floor(n/J)), ..., z_(floor(n(J-1)/J))]``.

    Examples
    --------
    >>> marginal_breakpoints([0.1, 0.2, 0.3, 0.6, 0.7, 0.9], 3)
    array([0.2, 0.6])
    """
    v = np.asarray(values, dtype=float).ravel()
    n = v.size
    if n == 0:
        raise EmptyInput("cannot form breakpoints from an empty sample")
    J = int(J)
    if J < 1:
        raise ValueError("J must be a positive integer")
    if J > n:
        raise JTooLarge(J, n)
    if J == 1:
        return np.empty(0)
    ranks = (n * np.arange(1, J)) // J  # 1-indexed order statistic
    return np.sort(v)[ranks - 1]


def marginal_bins(values, breakpoints) -> np.ndarray:
    """0-indexed marginal bin of each value under the half-open convention."""
    return np.searchsorted(np.asarray(breakpoints, dtype=float),
                           np.asarray(values, dtype=float), side="right")


def assign_cells(Z, breakpoints) -> Partition:
    """Assign observations to Cartesian-product cells.

    Parameters
    ----------
    Z : array_like, shape (n, d)
    breakpoints : sequence of d arrays, each of length J - 1
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, d = Z.shape
    if len(breakpoints) != d:
        raise DimensionMismatch(f"{len(breakpoints)} breakpoint vectors for d={d}")
    lens = {len(b) for b in breakpoints}
    if len(lens) != 1:
        raise DimensionMismatch("all dimensions must use the same number of portfolios")
    J = lens.pop() + 1
    bps = tuple(np.asarray(b, dtype=float) for b in breakpoints)
    cell = np.zeros(n, dtype=np.int64)
    for k in range(d):
        cell = cell * J + marginal_bins(Z[:, k], bps[k])
    counts = np.bincount(cell, minlength=J ** d)
    for arr in (cell, counts):
        arr.setflags(write=False)
    nonempty = counts > 0
    nonempty.setflags(write=False)
    for b in bps:
        b.setflags(write=False)
    return Partition(J=J, d=d, breakpoints=bps, cell_of=cell, counts=counts, nonempty=nonempty)


def form_partition(Z, J: int) -> Partition:
    """Marginal quantile breakpoints for every column, then cell assignment."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    return assign_cells(Z, [marginal_breakpoints(Z[:, k], J) for k in range(Z.shape[1])])
