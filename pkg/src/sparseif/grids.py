"""Uniform cell grids and the measures that live on them.

Measures store the mass of each cell rather than a density, so point masses
are represented exactly. Whenever a grid measure has to be paired with a
kernel, each cell mass is treated as an atom at the cell midpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TruncationError(ValueError):
    """Raised when a measure carries non-negligible mass near the domain edge."""


@dataclass(frozen=True)
class Grid1D:
    """``G`` cells of width ``h = 2L/G`` covering ``[-L, L]``."""

    L: float = 10.0
    G: int = 1025

    def __post_init__(self):
        if self.L <= 0 or self.G < 1:
            raise ValueError("grid needs L > 0 and G >= 1")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.G

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.G + 1)

    @property
    def centers(self) -> np.ndarray:
        return -self.L + (np.arange(self.G) + 0.5) * self.h

    @property
    def zero_index(self) -> int:
        """Index of the cell centered at 0 (needs an odd cell count)."""
        if self.G % 2 == 0:
            raise ValueError(f"no cell is centered at 0 for even G={self.G}; use an odd cell count")
        return self.G // 2

    def cell_of(self, x) -> np.ndarray:
        """Cell index containing ``x``; positions outside the domain go to the boundary cell."""
        idx = np.floor((np.asarray(x, dtype=float) + self.L) / self.h).astype(np.int64)
        return np.clip(idx, 0, self.G - 1)

    def outer_mask(self, frac: float = 0.05) -> np.ndarray:
        n = max(1, int(np.ceil(frac * self.G)))
        mask = np.zeros(self.G, dtype=bool)
        mask[:n] = True
        mask[-n:] = True
        return mask


@dataclass
class GridMeasure1D:
    grid: Grid1D
    masses: np.ndarray

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        if self.masses.shape != (self.grid.G,):
            raise ValueError(f"expected {self.grid.G} cell masses, got shape {self.masses.shape}")

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @classmethod
    def dirac(cls, grid: Grid1D, x0: float = 0.0, mass: float = 1.0) -> GridMeasure1D:
        m = np.zeros(grid.G)
        m[grid.cell_of(x0)] = mass
        return cls(grid, m)

    @classmethod
    def from_atoms(cls, grid: Grid1D, positions, weights=None) -> GridMeasure1D:
        positions = np.asarray(positions, dtype=float)
        weights = np.ones_like(positions) if weights is None else np.asarray(weights, dtype=float)
        m = np.bincount(grid.cell_of(positions), weights=weights, minlength=grid.G)
        return cls(grid, m)

    def as_tensor(self) -> TensorGridMeasure:
        return TensorGridMeasure(self.grid, self.masses)


@dataclass
class TensorGridMeasure:
    """Measure on ``R^k`` with the same 1-D grid on every axis."""

    grid: Grid1D
    masses: np.ndarray

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        if any(n != self.grid.G for n in self.masses.shape):
            raise ValueError(f"every axis must have {self.grid.G} cells, got {self.masses.shape}")

    @property
    def k(self) -> int:
        return self.masses.ndim

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def __sub__(self, other: TensorGridMeasure) -> TensorGridMeasure:
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return TensorGridMeasure(self.grid, self.masses - other.masses)

    def __add__(self, other: TensorGridMeasure) -> TensorGridMeasure:
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        return TensorGridMeasure(self.grid, self.masses + other.masses)

    def scaled(self, c: float) -> TensorGridMeasure:
        return TensorGridMeasure(self.grid, c * self.masses)


def tensor_power(f: GridMeasure1D | TensorGridMeasure, k: int) -> TensorGridMeasure:
    m = f.masses
    out = m
    for _ in range(k - 1):
        out = np.multiply.outer(out, m)
    return TensorGridMeasure(f.grid, out)


@dataclass
class ExtendedDensity:
    """Fibered density: row ``m`` is the x-measure of fiber ``[m/M, (m+1)/M)``."""

    grid: Grid1D
    masses: np.ndarray
    time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        if self.masses.ndim != 2 or self.masses.shape[1] != self.grid.G:
            raise ValueError(f"expected masses of shape (M, {self.grid.G}), got {self.masses.shape}")

    @property
    def M(self) -> int:
        return self.masses.shape[0]

    def fiber_mass(self) -> np.ndarray:
        return self.masses.sum(axis=1)

    def fiber(self, m: int) -> GridMeasure1D:
        return GridMeasure1D(self.grid, self.masses[m].copy())

    def marginal(self) -> GridMeasure1D:
        """xi-average of the fibers, i.e. the one-particle law."""
        return GridMeasure1D(self.grid, self.masses.mean(axis=0))

    def refine(self, M: int) -> ExtendedDensity:
        """Split every fiber into ``M / self.M`` identical sub-fibers."""
        if M % self.M:
            raise ValueError(f"fiber count {self.M} does not divide {M}")
        return ExtendedDensity(self.grid, np.repeat(self.masses, M // self.M, axis=0), self.time, dict(self.meta))

    def copy(self) -> ExtendedDensity:
        return ExtendedDensity(self.grid, self.masses.copy(), self.time, dict(self.meta))

    @classmethod
    def from_laws(cls, grid: Grid1D, laws, M: int | None = None) -> ExtendedDensity:
        """One initial law per block of fibers, blocks of equal xi-length."""
        laws = list(laws)
        M = len(laws) if M is None else M
        if M % len(laws):
            raise ValueError("fiber count must be a multiple of the number of laws")
        rows = [law.cell_masses(grid.edges) for law in laws]
        return cls(grid, np.repeat(np.array(rows), M // len(laws), axis=0))
