"""2-D voxel lattice with first-order (4-adjacent) neighbourhoods."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Lattice:
    """Row-major ``ny`` x ``nx`` grid restricted to a mask.

    ``edges`` holds each unordered neighbour pair once as (i, j) with i < j,
    in full-grid voxel indices. ``nbr_ptr``/``nbr_idx`` give the neighbour
    lists in CSR form, also in full-grid indices.
    """

    nx: int
    ny: int
    mask: np.ndarray
    edges: np.ndarray
    nbr_ptr: np.ndarray
    nbr_idx: np.ndarray
    masked_index: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def n_masked(self) -> int:
        return int(self.masked_index.size)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def neighbours(self, i: int) -> np.ndarray:
        return self.nbr_idx[self.nbr_ptr[i]:self.nbr_ptr[i + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.nbr_ptr)

    def row_col(self, i: int) -> tuple[int, int]:
        return divmod(int(i), self.nx)


def build_lattice(nx: int, ny: int, mask=None) -> Lattice:
    if nx < 1 or ny < 1:
        raise ValueError(f"lattice dimensions must be >= 1, got {nx}x{ny}")
    n = nx * ny
    if mask is None:
        mask = np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.size != n:
        raise ValueError(f"mask has {mask.size} entries, expected nx*ny = {n}")

    grid = mask.reshape(ny, nx)
    idx = np.arange(n).reshape(ny, nx)
    horiz = grid[:, :-1] & grid[:, 1:]
    vert = grid[:-1, :] & grid[1:, :]
    edges = np.concatenate([
        np.stack([idx[:, :-1][horiz], idx[:, 1:][horiz]], axis=1),
        np.stack([idx[:-1, :][vert], idx[1:, :][vert]], axis=1),
    ]).astype(np.int64)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]

    both = np.concatenate([edges, edges[:, ::-1]])
    both = both[np.lexsort((both[:, 1], both[:, 0]))]
    counts = np.bincount(both[:, 0], minlength=n)
    nbr_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=nbr_ptr[1:])
    return Lattice(
        nx=nx,
        ny=ny,
        mask=mask,
        edges=edges,
        nbr_ptr=nbr_ptr,
        nbr_idx=both[:, 1].copy(),
        masked_index=np.flatnonzero(mask),
    )


def pair_diff_sumsq(lattice: Lattice, values) -> float:
    """Sum over neighbour pairs of squared differences."""
    values = np.asarray(values, dtype=float)
    if values.size != lattice.size:
        raise ValueError("field length must equal the voxel count")
    if lattice.n_edges == 0:
        return 0.0
    d = values[lattice.edges[:, 0]] - values[lattice.edges[:, 1]]
    return float(np.dot(d, d))


def local_diff_sumsq(lattice: Lattice, i: int, values) -> float:
    """Sum of squared differences between voxel ``i`` and its neighbours."""
    if not (0 <= i < lattice.size) or not lattice.mask[i]:
        raise IndexError(f"voxel {i} is not inside the mask")
    values = np.asarray(values, dtype=float)
    d = values[i] - values[lattice.neighbours(i)]
    return float(np.dot(d, d))
