"""Sparse synaptic matrices, step kernels and their embeddings.

Neuron indices are 0-based in memory and 1-based in matrix files. The diagonal
is always empty: self-coupling is excluded from the dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import rng as rngmod
from .grids import ExtendedDensity, GridMeasure1D
from .trees import Tree


class ConnMatrix:
    """Sparse N x N matrix ``w[i, j]``: jump received by ``i`` when ``j`` fires.

    Kept in CSR (rows, jumps received) and CSC (columns, firing broadcasts).
    """

    def __init__(self, N: int, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        if N < 1:
            raise ValueError("N must be >= 1")
        if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= N or cols.max() >= N):
            raise IndexError("matrix entry index out of range")
        if np.any(rows == cols):
            raise ValueError("diagonal entries are not allowed (self-coupling is excluded)")
        if not np.all(np.isfinite(vals)):
            raise ValueError("weights must be finite")
        csr = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        self.N = N
        self.csr = csr
        self.csc = csr.tocsc()

    @classmethod
    def from_scipy(cls, mat) -> ConnMatrix:
        coo = sp.coo_matrix(mat)
        return cls(coo.shape[0], coo.row, coo.col, coo.data)

    @classmethod
    def zeros(cls, N: int) -> ConnMatrix:
        return cls(N, [], [], [])

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def triplets(self):
        coo = self.csr.tocoo()
        return coo.row, coo.col, coo.data

    def dense(self) -> np.ndarray:
        return self.csr.toarray()

    def entry(self, i: int, j: int) -> float:
        return float(self.csr[i, j])

    def abs(self) -> ConnMatrix:
        r, c, v = self.triplets()
        return ConnMatrix(self.N, r, c, np.abs(v))

    @property
    def row_norm(self) -> float:
        return float(abs(self.csr).sum(axis=1).max()) if self.nnz else 0.0

    @property
    def col_norm(self) -> float:
        return float(abs(self.csr).sum(axis=0).max()) if self.nnz else 0.0

    @property
    def max_entry(self) -> float:
        return float(np.abs(self.csr.data).max()) if self.nnz else 0.0

    def __repr__(self) -> str:
        return f"ConnMatrix(N={self.N}, nnz={self.nnz})"


@dataclass(frozen=True)
class SpikeVector:
    indices: tuple[int, ...]
    j: int
    components: np.ndarray

    @property
    def l1(self) -> float:
        return float(np.abs(self.components).sum())


class StepKernel:
    """Kernel ``w(xi, zeta)`` constant on the cells of an M x M partition of [0,1]^2."""

    def __init__(self, values):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("step kernel values must be a square matrix")
        self.values = values

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def norm(self) -> float:
        """max of the largest row mean and column mean of |w|."""
        a = np.abs(self.values)
        return float(max(a.mean(axis=1).max(), a.mean(axis=0).max()))

    def at_resolution(self, M: int) -> StepKernel:
        """Same step function on a finer partition, or its cell average on a coarser one."""
        if M == self.M:
            return self
        if M % self.M == 0:
            r = M // self.M
            return StepKernel(np.repeat(np.repeat(self.values, r, axis=0), r, axis=1))
        if self.M % M == 0:
            r = self.M // M
            return StepKernel(self.values.reshape(M, r, M, r).mean(axis=(1, 3)))
        raise ValueError(f"kernel resolution {self.M} and {M} are not in integer ratio")

    @classmethod
    def constant(cls, c: float, M: int = 1) -> StepKernel:
        return cls(np.full((M, M), float(c)))

    def __repr__(self) -> str:
        return f"StepKernel(M={self.M})"


def common_resolution(a: int, b: int) -> int:
    if max(a, b) % min(a, b):
        raise ValueError(f"resolutions {a} and {b} are not in integer ratio")
    return max(a, b)


# --- generators -------------------------------------------------------------

def _distinct_targets(rng: np.random.Generator, pool_size: int, degree: int, excluded: int | None):
    """``degree`` distinct indices in ``[0, pool_size)`` avoiding ``excluded``."""
    if excluded is None:
        return rng.choice(pool_size, size=degree, replace=False)
    picks = rng.choice(pool_size - 1, size=degree, replace=False)
    picks[picks >= excluded] += 1
    return picks


def gen_sparse(N: int, degree: int, strength: float, sign_mix: float, seed: int) -> ConnMatrix:
    """Row-regular random matrix: every row has ``degree`` off-diagonal entries
    ``+-strength/degree``, negative with probability ``sign_mix``."""
    if not 1 <= degree < N:
        raise ValueError(f"degree must satisfy 1 <= degree < N, got degree={degree}, N={N}")
    if strength <= 0:
        raise ValueError("strength must be positive")
    if not 0.0 <= sign_mix <= 1.0:
        raise ValueError("sign_mix must lie in [0, 1]")
    gen = rngmod.stream(seed, rngmod.NETWORK, 0)
    rows = np.repeat(np.arange(N), degree)
    cols = np.concatenate([_distinct_targets(gen, N, degree, i) for i in range(N)])
    signs = np.where(gen.random(N * degree) < sign_mix, -1.0, 1.0)
    return ConnMatrix(N, rows, cols, signs * strength / degree)


def block_sizes(N: int, M: int) -> np.ndarray:
    return np.array([len(b) for b in np.array_split(np.arange(N), M)])


def gen_block_sparse(N: int, kernel: StepKernel, degree: int, seed: int) -> ConnMatrix:
    """Sparse matrix whose block row sums reproduce a step kernel.

    Neurons are split into ``kernel.M`` contiguous blocks. A neuron of block
    ``p`` receives from ``degree`` distinct random neurons of every block ``q``
    with ``w(p, q) != 0``, each with weight ``w(p, q) / (M * degree)``, so its
    input from block ``q`` sums to ``w(p, q) / M`` exactly.
    """
    M = kernel.M
    sizes = block_sizes(N, M)
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if degree > sizes.min() - 1:
        raise ValueError(f"degree {degree} exceeds the smallest block size minus one ({sizes.min() - 1})")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    block_of = np.repeat(np.arange(M), sizes)
    gen = rngmod.stream(seed, rngmod.NETWORK, 1)
    rows, cols, vals = [], [], []
    for i in range(N):
        p = block_of[i]
        for q in range(M):
            w = kernel.values[p, q]
            if w == 0.0:
                continue
            excl = i - starts[q] if p == q else None
            targets = starts[q] + _distinct_targets(gen, sizes[q], degree, excl)
            rows.append(np.full(degree, i))
            cols.append(targets)
            vals.append(np.full(degree, w / (M * degree)))
    if not rows:
        return ConnMatrix.zeros(N)
    return ConnMatrix(N, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))


def gen_complete(N: int, kappa: float) -> ConnMatrix:
    """Exchangeable all-to-all coupling ``w[i, j] = kappa / N`` for ``i != j``."""
    i, j = np.nonzero(~np.eye(N, dtype=bool))
    return ConnMatrix(N, i, j, np.full(i.size, kappa / N))


# --- statistics and tree quantities ----------------------------------------

def scaling_stats(W: ConnMatrix) -> tuple[float, float, float]:
    """(max row L1 norm, max column L1 norm, max |entry|)."""
    return W.row_norm, W.col_norm, W.max_entry


def tree_weight(W: ConnMatrix, tree: Tree, indices) -> float:
    """Product of ``w[i_l, i_m]`` over the tree edges ``(l, m)``; indices are 0-based."""
    if len(indices) != tree.size:
        raise ValueError(f"tuple length {len(indices)} does not match tree size {tree.size}")
    out = 1.0
    for l, m in tree.edges:
        out *= W.entry(indices[l - 1], indices[m - 1])
        if out == 0.0:
            return 0.0
    return out


def spike_vector(W: ConnMatrix, indices, j: int) -> SpikeVector:
    """Jumps ``(w[i_1, j], ..., w[i_k, j])`` received by the tuple when ``j`` fires."""
    col = W.csc[:, j].toarray().ravel()
    idx = tuple(int(i) for i in indices)
    return SpikeVector(idx, int(j), col[list(idx)])


def embed_graphon(W: ConnMatrix) -> StepKernel:
    """N x N step kernel equal to ``N * w[i, j]`` on cell ``(i, j)``."""
    return StepKernel(W.N * W.dense())


def embed_density(marginals) -> ExtendedDensity:
    """Stack N one-particle grid measures as the fibers of an extended density."""
    marginals = list(marginals)
    if not marginals:
        raise ValueError("need at least one marginal")
    grid = marginals[0].grid
    for g in marginals:
        if not isinstance(g, GridMeasure1D) or g.grid != grid:
            raise ValueError("marginals must be grid measures on a common grid")
        if np.any(g.masses < 0) or abs(g.total_mass - 1.0) > 1e-9:
            raise ValueError("marginals must be nonnegative with unit mass")
    return ExtendedDensity(grid, np.array([g.masses for g in marginals]))


# --- file formats -----------------------------------------------------------

def write_matrix(W: ConnMatrix, path, comment: str | None = None) -> None:
    r, c, v = W.triplets()
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(f"{W.N} {W.nnz}\n")
        for i, j, w in zip(r, c, v):
            fh.write(f"{i + 1} {j + 1} {float(w)!r}\n")


def _data_lines(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if s and not s.startswith("#"):
                yield lineno, s


def read_matrix(path) -> ConnMatrix:
    lines = _data_lines(path)
    try:
        _, header = next(lines)
        N, nnz = (int(t) for t in header.split())
    except (StopIteration, ValueError):
        raise ValueError(f"{path}: missing or malformed 'N nnz' header") from None
    rows, cols, vals = [], [], []
    for lineno, s in lines:
        parts = s.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'i j w'")
        rows.append(int(parts[0]) - 1)
        cols.append(int(parts[1]) - 1)
        vals.append(float(parts[2]))
    if len(vals) != nnz:
        raise ValueError(f"{path}: header announces {nnz} entries, found {len(vals)}")
    return ConnMatrix(N, rows, cols, vals)


def write_kernel(K: StepKernel, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{K.M}\n")
        for row in K.values:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_kernel(path) -> StepKernel:
    lines = list(_data_lines(path))
    if not lines:
        raise ValueError(f"{Path(path)}: empty kernel file")
    M = int(lines[0][1])
    rows = [[float(v) for v in s.split()] for _, s in lines[1:]]
    if len(rows) != M or any(len(r) != M for r in rows):
        raise ValueError(f"{path}: expected {M} rows of {M} values")
    return StepKernel(np.array(rows))
