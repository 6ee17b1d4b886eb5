"""Tree-indexed observables of the network and of its mean-field limit.

Empirical side, for a tree ``T`` of size ``k`` and a snapshot of ``R`` replicas:

    tau_N(T) = 1/(R N) sum_r sum_{distinct (i_1..i_k)} prod_{(l,m) in E(T)} w[i_l, i_m]
               delta_{(X_r^{i_1}, ..., X_r^{i_k})}

Limit side, for a step kernel ``w`` and an extended density ``f``:

    tau_inf(T) = int prod_{(l,m)} w(xi_l, xi_m) prod_m f(xi_m, z_m) dxi,

evaluated by the recursion seed / graft / grow over the tree.

Weak norms are computed without materializing either measure: every side is a
weighted atom set with a linear operator on its atom index that realizes one
tree edge, and the pairing is contracted leaf to root,

    A_v = G o prod_{children c} (W_a A_c W_b^T),    <a, b> = s_a s_b sum A_root,

with ``G[a, b] = u_a u_b Lambda(x_a - x_b) eta(x_a) eta(x_b)``.

Repeated indices: ``w`` has no diagonal, so for ``k <= 2`` the unconstrained
tree sum already equals the distinct-tuple sum. For ``k = 3`` the only
surviving repeated class identifies the two vertices that are not adjacent; it
is built explicitly and subtracted. For ``k >= 4`` the contraction keeps the
repeated tuples and :func:`diagonal_bound` gives a certified error bar.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from itertools import product as iproduct
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .connectivity import ConnMatrix, StepKernel, common_resolution
from .grids import ExtendedDensity, Grid1D, TensorGridMeasure
from .particle_sim import Snapshot
from .trees import Tree
from .weakmetric import (KERNEL_L2_SQ, WeightEta, lambda_kernel, lambda_potential)

MAX_GRAM_ENTRIES = 40_000_000
MAX_GRID_CELLS = 40_000_000
MAX_BRUTE_ATOMS = 60_000


class CapacityError(RuntimeError):
    """Problem size exceeds the limits of the requested evaluation path."""


# --- observables --------------------------------------------------------------

@dataclass
class EmpiricalObservable:
    tree: Tree
    W: ConnMatrix
    snapshot: Snapshot
    absolute: bool = False

    def __post_init__(self):
        if self.snapshot.N != self.W.N:
            raise ValueError(f"snapshot has {self.snapshot.N} neurons, matrix has {self.W.N}")

    @property
    def time(self) -> float:
        return self.snapshot.time

    @property
    def weights(self) -> ConnMatrix:
        return self.W.abs() if self.absolute else self.W


@dataclass
class FiberAtoms:
    """Extended density given by weighted atoms, each attached to one of ``M`` fibers."""

    M: int
    fiber: np.ndarray
    x: np.ndarray
    w: np.ndarray
    time: float = 0.0

    @classmethod
    def from_density(cls, f: ExtendedDensity, subcells: int = 1) -> FiberAtoms:
        """Cell masses as atoms. With ``subcells > 1`` each cell mass is spread over
        that many equal atoms at the sub-cell midpoints, which approximates the
        piecewise-constant density to ``O(h / subcells)`` instead of ``O(h)``."""
        if subcells < 1:
            raise ValueError("subcells must be >= 1")
        m, c = np.nonzero(f.masses)
        if subcells == 1:
            return cls(f.M, m, f.grid.centers[c], f.masses[m, c], f.time)
        off = ((np.arange(subcells) + 0.5) / subcells - 0.5) * f.grid.h
        x = (f.grid.centers[c][:, None] + off[None, :]).ravel()
        w = np.repeat(f.masses[m, c] / subcells, subcells)
        return cls(f.M, np.repeat(m, subcells), x, w, f.time)

    @classmethod
    def embedding(cls, snapshot: Snapshot, replica: int = 0) -> FiberAtoms:
        """Fiber ``i`` carries the point mass at neuron ``i``'s potential."""
        x = snapshot.potentials[replica]
        return cls(x.size, np.arange(x.size), x.copy(), np.ones(x.size), snapshot.time)

    def refine(self, M: int) -> FiberAtoms:
        if M == self.M:
            return self
        if M % self.M:
            raise ValueError(f"cannot refine {self.M} fibers to {M}")
        r = M // self.M
        fib = (self.fiber[:, None] * r + np.arange(r)[None, :]).ravel()
        return FiberAtoms(M, fib, np.repeat(self.x, r), np.repeat(self.w, r), self.time)


@dataclass
class LimitObservable:
    tree: Tree
    kernel: StepKernel
    density: ExtendedDensity | FiberAtoms
    subcells: int = 1

    @property
    def time(self) -> float:
        return self.density.time


# --- algebra of transforms ---------------------------------------------------------

@dataclass(frozen=True)
class Seed:
    vertex: int = 1

    @property
    def rank(self) -> int:
        return 1

    @property
    def labels(self) -> tuple[int, ...]:
        return (self.vertex,)

    def __str__(self) -> str:
        return "Seed"


@dataclass(frozen=True)
class Grow:
    inner: object

    @property
    def rank(self) -> int:
        return self.inner.rank

    @property
    def labels(self) -> tuple[int, ...]:
        return self.inner.labels

    def __str__(self) -> str:
        return f"Grow({self.inner})"


@dataclass(frozen=True)
class Graft:
    left: object
    right: object

    @property
    def rank(self) -> int:
        return self.left.rank + self.right.rank

    @property
    def labels(self) -> tuple[int, ...]:
        return self.left.labels + self.right.labels

    def __str__(self) -> str:
        return f"Graft({self.left}, {self.right})"


def tree_to_algebra(tree: Tree, vertex: int = 1):
    """Seed at ``vertex`` grafted with the grown expressions of its child subtrees
    (right-nested when there are several children)."""
    kids = tree.children[vertex]
    if not kids:
        return Seed(vertex)
    grown = Grow(tree_to_algebra(tree, kids[-1]))
    for c in reversed(kids[:-1]):
        grown = Graft(Grow(tree_to_algebra(tree, c)), grown)
    return Graft(Seed(vertex), grown)


def evaluate_algebra(expr, kernel: np.ndarray, fibers: np.ndarray) -> np.ndarray:
    """Per-fiber tensors of shape (M, G, ..., G) for an expression."""
    M = fibers.shape[0]
    if isinstance(expr, Seed):
        return fibers
    if isinstance(expr, Grow):
        inner = evaluate_algebra(expr.inner, kernel, fibers)
        return np.tensordot(kernel, inner, axes=([1], [0])) / M
    if isinstance(expr, Graft):
        a = evaluate_algebra(expr.left, kernel, fibers)
        b = evaluate_algebra(expr.right, kernel, fibers)
        return a.reshape(a.shape + (1,) * (b.ndim - 1)) * b.reshape((M,) + (1,) * (a.ndim - 1) + b.shape[1:])
    raise TypeError(f"not an algebra expression: {expr!r}")


def _to_label_order(arr: np.ndarray, labels) -> np.ndarray:
    """Axes currently ordered as ``labels``; return them ordered 1..k."""
    perm = np.argsort(np.asarray(labels))
    return np.transpose(arr, perm)


def tau_inf_grid(tree: Tree, w: StepKernel, f: ExtendedDensity) -> TensorGridMeasure:
    """Limiting observable materialized on the x-grid (``|T| <= 3``)."""
    k = tree.size
    if k > 3 or f.grid.G ** k > MAX_GRID_CELLS:
        raise CapacityError(f"grid materialization limited to |T| <= 3 and {MAX_GRID_CELLS} cells; "
                            "use weak_norm_sq for larger trees")
    M = common_resolution(w.M, f.M)
    dens = f.refine(M) if f.M != M else f
    kern = w.at_resolution(M).values
    expr = tree_to_algebra(tree)
    per_fiber = evaluate_algebra(expr, kern, dens.masses)
    return TensorGridMeasure(f.grid, _to_label_order(per_fiber.mean(axis=0), expr.labels))


# --- empirical side on the grid ----------------------------------------------------

def _rowwise_kron(A: sp.csr_matrix, C: sp.csr_matrix) -> sp.csr_matrix:
    """Row ``i`` of the result is ``kron(A[i], C[i])``."""
    A = A.tocsr()
    C = C.tocsr()
    N = A.shape[0]
    na = np.diff(A.indptr)
    nc = np.diff(C.indptr)
    rows_a = np.repeat(np.arange(N), na)
    rep = nc[rows_a]
    total = int(rep.sum())
    a_idx = np.repeat(np.arange(A.nnz), rep)
    offsets = np.arange(total) - np.repeat(np.cumsum(rep) - rep, rep)
    c_idx = np.repeat(C.indptr[rows_a], rep) + offsets
    data = A.data[a_idx] * C.data[c_idx]
    cols = A.indices[a_idx].astype(np.int64) * C.shape[1] + C.indices[c_idx]
    return sp.csr_matrix((data, (rows_a[a_idx], cols)), shape=(N, A.shape[1] * C.shape[1]))


def _nonadjacent_pair(tree: Tree):
    """For ``|T| = 3``: (middle vertex, (a, b)) with ``a, b`` the non-adjacent pair."""
    if tree.size != 3:
        return None
    deg = {v: 0 for v in range(1, 4)}
    for p, c in tree.edges:
        deg[p] += 1
        deg[c] += 1
    mid = max(deg, key=deg.get)
    a, b = [v for v in (1, 2, 3) if v != mid]
    return mid, (a, b)


def _edge_operator(tree: Tree, mid: int, leaf: int, W: sp.csr_matrix) -> sp.csr_matrix:
    """Weights indexed by (index at ``mid``, index at ``leaf``) along the edge joining them."""
    return W if tree.parent_of(leaf) == mid else W.T.tocsr()


def repeated_class_matrix(tree: Tree, W: ConnMatrix):
    """For ``|T| = 3``: sparse ``E[i, j]`` giving the tree weight of tuples with index
    ``i`` at the middle vertex and ``j`` at both non-adjacent vertices."""
    mid, (a, b) = _nonadjacent_pair(tree)
    E = _edge_operator(tree, mid, a, W.csr).multiply(_edge_operator(tree, mid, b, W.csr))
    return mid, (a, b), sp.csr_matrix(E)


def tau_N_grid(tree: Tree, W: ConnMatrix, snapshot: Snapshot, grid: Grid1D,
               absolute: bool = False) -> TensorGridMeasure:
    """Empirical observable binned on the grid, exact over distinct tuples for ``|T| <= 3``."""
    k = tree.size
    if k > 3 or grid.G ** k > MAX_GRID_CELLS:
        raise CapacityError(f"grid materialization limited to |T| <= 3 and {MAX_GRID_CELLS} cells")
    if snapshot.N != W.N:
        raise ValueError("snapshot and matrix sizes differ")
    Wm = abs(W.csr) if absolute else W.csr
    R, N = snapshot.R, snapshot.N
    G = grid.G
    total = np.zeros(G ** k)
    order = tree.subtree(1)
    pair = _nonadjacent_pair(tree) if k == 3 else None
    if pair is not None:
        mid, (a, b), E = repeated_class_matrix(tree, W)
        if absolute:
            E = abs(E)
        diag = np.zeros((G, G))
    for r in range(R):
        bins = grid.cell_of(snapshot.potentials[r])
        B = sp.csr_matrix((np.ones(N), (np.arange(N), bins)), shape=(N, G))

        def message(v):
            out = B
            for c in tree.children[v]:
                out = _rowwise_kron(out, sp.csr_matrix(Wm @ message(c)))
            return out

        total += np.asarray(message(1).sum(axis=0)).ravel()
        if pair is not None:
            diag += (B.T @ E @ B).toarray()
    tensor = _to_label_order(total.reshape((G,) * k), order)
    if pair is not None:
        # axis ``mid`` takes the row bin p, axes ``a`` and ``b`` the column bin q
        P, Q = np.meshgrid(np.arange(G), np.arange(G), indexing="ij")
        coords = [None] * 3
        coords[mid - 1] = P
        coords[a - 1] = Q
        coords[b - 1] = Q
        sub = np.zeros((G,) * 3)
        sub[tuple(coords)] = diag
        tensor = tensor - sub
    return TensorGridMeasure(grid, tensor / (R * N))


# --- atom sides for contraction ----------------------------------------------------

@dataclass
class _Side:
    """Atoms with one position per tree vertex and an edge operator on the atom index."""

    n: int
    positions: Callable[[int], np.ndarray]  # vertex -> positions (n,)
    weights: Callable[[int], np.ndarray]  # vertex -> per-atom weight (n,)
    apply: Callable[[np.ndarray], np.ndarray]  # X (n, m) -> W X
    scale: float
    sign: float = 1.0
    nnz: int = 0


def _empirical_side(obs: EmpiricalObservable) -> _Side:
    snap = obs.snapshot
    R, N = snap.R, snap.N
    Wm = obs.weights.csr
    x = snap.potentials.ravel()
    ones = np.ones(R * N)

    def apply(X):
        m = X.shape[1]
        Y = X.reshape(R, N, m).transpose(1, 0, 2).reshape(N, R * m)
        Z = np.asarray(Wm @ Y)
        return Z.reshape(N, R, m).transpose(1, 0, 2).reshape(R * N, m)

    return _Side(R * N, lambda v: x, lambda v: ones, apply, 1.0 / (R * N), nnz=R * Wm.nnz)


def _limit_side(obs: LimitObservable) -> _Side:
    dens = obs.density
    atoms = FiberAtoms.from_density(dens, obs.subcells) if isinstance(dens, ExtendedDensity) else dens
    M = common_resolution(obs.kernel.M, atoms.M)
    atoms = atoms.refine(M)
    K = obs.kernel.at_resolution(M).values
    n = atoms.x.size
    P = sp.csr_matrix((np.ones(n), (np.arange(n), atoms.fiber)), shape=(n, M))
    PT = P.T.tocsr()

    def apply(X):
        return np.asarray(P @ (K @ np.asarray(PT @ X))) / M

    return _Side(n, lambda v: atoms.x, lambda v: atoms.w, apply, 1.0 / M, nnz=M * M)


def _tuple_side(positions: np.ndarray, weights: np.ndarray, scale: float, sign: float = 1.0) -> _Side:
    """Explicit k-dimensional atoms; the edge operator is the identity."""
    positions = np.asarray(positions, dtype=float)
    weights = np.asarray(weights, dtype=float)
    ones = np.ones(weights.size)
    return _Side(weights.size, lambda v: positions[:, v - 1],
                 lambda v: weights if v == 1 else ones, lambda X: X, scale, sign)


def _repeated_side(obs: EmpiricalObservable) -> _Side | None:
    """Tuples of the repeated class for ``|T| = 3`` as explicit atoms (sign -1)."""
    if obs.tree.size != 3:
        return None
    W = obs.weights
    mid, (a, b), E = repeated_class_matrix(obs.tree, W)
    E = E.tocoo()
    if E.nnz == 0:
        return None
    snap = obs.snapshot
    pos, wts = [], []
    for r in range(snap.R):
        X = snap.potentials[r]
        z = np.empty((E.nnz, 3))
        z[:, mid - 1] = X[E.row]
        z[:, a - 1] = X[E.col]
        z[:, b - 1] = X[E.col]
        pos.append(z)
        wts.append(E.data)
    return _tuple_side(np.concatenate(pos), np.concatenate(wts), 1.0 / (snap.R * snap.N), sign=-1.0)


def _sides(obs, exact_diagonal: bool) -> list[_Side]:
    if isinstance(obs, EmpiricalObservable):
        out = [_empirical_side(obs)]
        if exact_diagonal:
            rep = _repeated_side(obs)
            if rep is not None:
                out.append(rep)
        return out
    if isinstance(obs, LimitObservable):
        return [_limit_side(obs)]
    if isinstance(obs, _Side):
        return [obs]
    raise TypeError(f"unsupported observable {type(obs).__name__}")


def _gram(sa: _Side, sb: _Side, v: int, eta: WeightEta | None) -> np.ndarray:
    xa, xb = sa.positions(v), sb.positions(v)
    G = lambda_kernel(xa[:, None] - xb[None, :])
    ua = sa.weights(v) * (eta(xa) if eta is not None else 1.0)
    ub = sb.weights(v) * (eta(xb) if eta is not None else 1.0)
    G *= ua[:, None]
    G *= ub[None, :]
    return G


def _contract(tree: Tree, sa: _Side, sb: _Side, eta: WeightEta | None) -> float:
    if sa.n * sb.n > MAX_GRAM_ENTRIES:
        raise CapacityError(f"pairing matrix {sa.n} x {sb.n} exceeds {MAX_GRAM_ENTRIES} entries")
    if sa.n == 0 or sb.n == 0:
        return 0.0

    def message(v):
        A = _gram(sa, sb, v, eta)
        for c in tree.children[v]:
            C = sa.apply(message(c))
            A *= sb.apply(C.T).T
        return A

    return sa.sign * sb.sign * sa.scale * sb.scale * float(message(1).sum())


def _singleton_pair(sa: _Side, sb: _Side, eta: WeightEta | None) -> float:
    xa, xb = sa.positions(1), sb.positions(1)
    ua = sa.weights(1) * (eta(xa) if eta is not None else 1.0)
    ub = sb.weights(1) * (eta(xb) if eta is not None else 1.0)
    return sa.sign * sb.sign * sa.scale * sb.scale * float(ub @ lambda_potential(xa, ua, xb))


def _check_pair(tree: Tree, a, b) -> None:
    for obs in (a, b):
        if isinstance(obs, (EmpiricalObservable, LimitObservable)) and obs.tree != tree:
            raise ValueError(f"observable tree {obs.tree} differs from requested tree {tree}")
    ta, tb = getattr(a, "time", None), getattr(b, "time", None)
    if ta is not None and tb is not None and abs(ta - tb) > 1e-9:
        raise ValueError(f"observables at different times ({ta} vs {tb})")


def weak_norm_sq(tree: Tree, a, b, eta: WeightEta | None = None, *, exact_diagonal: bool = True) -> float:
    """``<tau_a(T), tau_b(T)>`` in the tensorized weighted negative Sobolev norm.

    With ``exact_diagonal`` (default) the repeated-index class is removed exactly
    for ``|T| = 3``; for ``|T| >= 4`` repeated tuples stay in the empirical side
    and :func:`diagonal_bound` bounds their contribution to the norm.
    """
    _check_pair(tree, a, b)
    total = 0.0
    for sa in _sides(a, exact_diagonal):
        for sb in _sides(b, exact_diagonal):
            if tree.size == 1:
                total += _singleton_pair(sa, sb, eta)
            else:
                total += _contract(tree, sa, sb, eta)
    return total


def contraction_gram(a, b, eta: WeightEta | None = None):
    """Pairing matrix between the atoms of two observables (first side of each)."""
    from .weakmetric import PairingMatrix

    sa = _sides(a, False)[0]
    sb = _sides(b, False)[0]
    return PairingMatrix.build(sa.positions(1), sb.positions(1), eta)


def contraction_cost(tree: Tree, a, b) -> int:
    """Rough multiply-add count of the contraction."""
    sa, sb = _sides(a, False)[0], _sides(b, False)[0]
    edges = tree.size - 1
    return int(tree.size * sa.n * sb.n + edges * (sa.nnz * sb.n + sb.nnz * sa.n))


@dataclass
class DistanceReport:
    tree: Tree
    time: float
    norm_a: float
    norm_b: float
    cross: float
    distance: float
    diag_bound: float
    wallclock_ms: float
    extra: dict = field(default_factory=dict)


def weak_distance(tree: Tree, a, b, eta: WeightEta | None = None, *, method: str = "contraction",
                  grid: Grid1D | None = None) -> DistanceReport:
    """``||tau_a - tau_b||`` together with the two norms and the cross term.

    ``method="grid"`` bins the empirical side on ``grid`` (or on the density's
    grid) and uses the Fourier route; it needs ``|T| <= 3``.
    """
    from .weakmetric import norm_grid_sq

    _check_pair(tree, a, b)
    t0 = time.perf_counter()
    emp = a if isinstance(a, EmpiricalObservable) else b if isinstance(b, EmpiricalObservable) else None
    dbound = diagonal_bound(tree, emp.W, emp.snapshot, eta) if emp is not None else 0.0
    if method == "grid":
        ga, gb = _grid_of(a, tree, grid), _grid_of(b, tree, grid)
        aa = norm_grid_sq(ga, eta)
        bb = norm_grid_sq(gb, eta)
        dd = norm_grid_sq(ga - gb, eta)
        ab = 0.5 * (aa + bb - dd)
    elif method == "contraction":
        if tree.size > 1:
            # fail before any work if one of the three pairings is too large
            na = max(s.n for s in _sides(a, True))
            nb = max(s.n for s in _sides(b, True))
            if max(na, nb) ** 2 > MAX_GRAM_ENTRIES:
                raise CapacityError(f"pairing matrix {max(na, nb)} x {max(na, nb)} exceeds {MAX_GRAM_ENTRIES} entries")
        aa = weak_norm_sq(tree, a, a, eta)
        bb = weak_norm_sq(tree, b, b, eta)
        ab = weak_norm_sq(tree, a, b, eta)
        if tree.size == 1:
            dd = _singleton_distance_sq(a, b, eta)
        else:
            dd = aa + bb - 2.0 * ab
    else:
        raise ValueError(f"unknown method {method!r}")
    ms = 1000.0 * (time.perf_counter() - t0)
    return DistanceReport(tree, float(getattr(a, "time", 0.0)), float(np.sqrt(max(aa, 0.0))),
                          float(np.sqrt(max(bb, 0.0))), float(ab), float(np.sqrt(max(dd, 0.0))),
                          float(dbound), ms)


def _singleton_distance_sq(a, b, eta) -> float:
    """Norm of the difference from one merged signed atom list (no cancellation)."""
    xs, ws = [], []
    for obs, sgn in ((a, 1.0), (b, -1.0)):
        for s in _sides(obs, False):
            xs.append(s.positions(1))
            ws.append(sgn * s.sign * s.scale * s.weights(1))
    x = np.concatenate(xs)
    u = np.concatenate(ws) * (eta(x) if eta is not None else 1.0)
    return float(u @ lambda_potential(x, u, x))


def _grid_of(obs, tree: Tree, grid: Grid1D | None) -> TensorGridMeasure:
    if isinstance(obs, LimitObservable):
        if not isinstance(obs.density, ExtendedDensity):
            raise ValueError("grid method needs the limit side as an ExtendedDensity")
        if grid is not None and grid != obs.density.grid:
            raise ValueError("grid differs from the density grid")
        return tau_inf_grid(tree, obs.kernel, obs.density)
    if isinstance(obs, EmpiricalObservable):
        if grid is None:
            raise ValueError("grid method needs a grid for the empirical side")
        return tau_N_grid(tree, obs.W, obs.snapshot, grid, obs.absolute)
    raise TypeError(f"unsupported observable {type(obs).__name__}")


# --- scalar diagnostics --------------------------------------------------------------

def absolute_weighted_mass(tree: Tree, W: ConnMatrix, snapshot: Snapshot,
                           eta: WeightEta | None = None) -> float:
    """``|| |tau_N|(T) eta^k ||`` in total variation: ``1/(RN) sum_r sum_distinct |w_T| prod eta(X)``.

    Exact for ``|T| <= 3``; for larger trees repeated tuples are included, which
    can only increase the value.
    """
    A = abs(W.csr)
    X = snapshot.potentials
    g = eta(X) if eta is not None else np.ones_like(X)

    def message(v):
        out = g.copy()
        for c in tree.children[v]:
            out *= np.asarray(A @ message(c).T).T
        return out

    total = float(message(1).sum())
    if tree.size == 3:
        _, _, E = repeated_class_matrix(tree, W)
        E = abs(E)
        for r in range(snapshot.R):
            total -= float(g[r] @ (E @ (g[r] ** 2)))
    return total / (snapshot.R * snapshot.N)


def repeated_weighted_mass(tree: Tree, W: ConnMatrix, snapshot: Snapshot,
                           eta: WeightEta | None = None) -> float:
    """Total variation of the repeated-index part ``1/(RN) sum_r sum_repeated |w_T| prod eta(X)``."""
    k = tree.size
    if k <= 2:
        return 0.0
    A = abs(W.csr)
    X = snapshot.potentials
    g = eta(X) if eta is not None else np.ones_like(X)
    if k == 3:
        _, _, E = repeated_class_matrix(tree, W)
        E = abs(E)
        return float(sum(g[r] @ (E @ (g[r] ** 2)) for r in range(snapshot.R))) / (snapshot.R * snapshot.N)
    # larger trees: bound via the repeated-tuple count estimate and the largest weight
    row, col, wbar = W.row_norm, W.col_norm, W.max_entry
    return wbar * max(row, col) ** (k - 2) * k ** 2 * float(np.max(g)) ** k


def diagonal_bound(tree: Tree, W: ConnMatrix, snapshot: Snapshot, eta: WeightEta | None = None) -> float:
    """Certified bound on the norm of the repeated-index part of the empirical observable,
    ``||K||_{L2}^k`` times its weighted total variation. Zero for ``|T| <= 2``; for
    ``|T| = 3`` the part is removed exactly by the contraction, and the value reports
    its size."""
    return float(np.sqrt(KERNEL_L2_SQ) ** tree.size * repeated_weighted_mass(tree, W, snapshot, eta))


# --- remainder terms -----------------------------------------------------------------

_GL_R, _GL_RW = np.polynomial.legendre.leggauss(8)


def tuple_atoms(tree: Tree, W: ConnMatrix, snapshot: Snapshot, absolute: bool = False):
    """All distinct tuples with nonzero weight as explicit k-dimensional atoms.

    Returns ``(indices (n, k), replica (n,), positions (n, k), weights (n,))``.
    """
    k = tree.size
    Wd = W.dense()
    if absolute:
        Wd = np.abs(Wd)
    N = W.N
    if k == 1:
        tuples = np.arange(N)[:, None]
        wts = np.ones(N)
    else:
        if N ** k > 50_000_000:
            raise CapacityError("brute-force tuple enumeration too large")
        grids = np.array(list(iproduct(range(N), repeat=k))) if k > 2 else np.indices((N, N)).reshape(2, -1).T
        wts = np.ones(len(grids))
        for l, m in tree.edges:
            wts = wts * Wd[grids[:, l - 1], grids[:, m - 1]]
        distinct = np.array([len(set(t)) == k for t in grids]) if k > 2 else grids[:, 0] != grids[:, 1]
        keep = distinct & (wts != 0)
        tuples, wts = grids[keep], wts[keep]
    R = snapshot.R
    pos = np.concatenate([snapshot.potentials[r][tuples] for r in range(R)])
    rep = np.repeat(np.arange(R), len(tuples))
    return np.tile(tuples, (R, 1)), rep, pos, np.tile(wts, R)


def pair_tuple_atoms(pa, wa, pb, wb, eta: WeightEta | None = None, chunk: int = 1024) -> float:
    """Direct ``sum_{a,b} wa wb prod_m Lambda(pa_m - pb_m) eta(pa_m) eta(pb_m)``."""
    pa, pb = np.atleast_2d(pa), np.atleast_2d(pb)
    ua = np.asarray(wa, dtype=float) * (np.prod(eta(pa), axis=1) if eta is not None else 1.0)
    ub = np.asarray(wb, dtype=float) * (np.prod(eta(pb), axis=1) if eta is not None else 1.0)
    k = pa.shape[1]
    total = 0.0
    for s in range(0, len(ua), chunk):
        d = np.abs(pa[s:s + chunk, None, :] - pb[None, :, :]).sum(axis=2)
        total += float(ua[s:s + chunk] @ np.exp(-d) @ ub)
    return total * 0.5 ** k


def remainder_norm_bruteforce(tree: Tree, m: int, W: ConnMatrix, snapshot: Snapshot,
                              eta: WeightEta, integrated: bool = False):
    """Norm of the jump remainder for vertex ``m`` and its bound.

    The remainder is ``1/N sum_tuples w_T (f(z - s) - f(z))`` with the spike vector
    ``s_n = w[i_n, i_m]``; the integrated variant averages the shift ``r s`` over
    ``r in [0, 1]`` by 8-point Gauss-Legendre. Returns ``(lhs, rhs)`` where
    ``rhs = sqrt(exp((2 + 2 alpha) c) - 1) || |tau_N|(T) ||`` and
    ``c = min(|T| wbar, max(row, col))``.
    """
    k = tree.size
    if k > 2 or W.N > 200:
        raise CapacityError("brute-force remainder limited to |T| <= 2 and N <= 200")
    if not 1 <= m <= k:
        raise IndexError(f"vertex {m} not in tree of size {k}")
    idx, _, pos, wts = tuple_atoms(tree, W, snapshot)
    Wd = W.dense()
    shift = Wd[idx, idx[:, [m - 1]]]  # s_n = w[i_n, i_m]
    scale = 1.0 / (snapshot.R * snapshot.N)
    if integrated:
        rs = 0.5 * (_GL_R + 1.0)
        rw = 0.5 * _GL_RW
        moved = np.concatenate([pos + r * shift for r in rs])
        moved_w = np.concatenate([q * wts for q in rw])
    else:
        moved, moved_w = pos + shift, wts
    all_pos = np.concatenate([moved, pos])
    all_w = np.concatenate([moved_w, -wts]) * scale
    keep = all_w != 0
    if keep.sum() > MAX_BRUTE_ATOMS:
        raise CapacityError("too many atoms for the brute-force remainder")
    lhs_sq = pair_tuple_atoms(all_pos[keep], all_w[keep], all_pos[keep], all_w[keep], eta)
    row, col, wbar = W.row_norm, W.col_norm, W.max_entry
    c = min(k * wbar, max(row, col))
    abs_obs = EmpiricalObservable(tree, W, snapshot, absolute=True)
    tau_abs = np.sqrt(max(weak_norm_sq(tree, abs_obs, abs_obs, eta), 0.0))
    rhs = np.sqrt(np.expm1((2.0 + 2.0 * eta.alpha) * c)) * tau_abs
    return float(np.sqrt(max(lhs_sq, 0.0))), float(rhs)


def write_observable_report(rows, path, header_comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("tree,time,norm_tauN,norm_tauInf,cross,distance,diag_bound,wallclock_ms\n")
        for r in rows:
            fh.write(f"\"{r.tree.serialize() or 'singleton'}\",{float(r.time)!r},{float(r.norm_a)!r},"
                     f"{float(r.norm_b)!r},{float(r.cross)!r},{float(r.distance)!r},{float(r.diag_bound)!r},{r.wallclock_ms:.3f}\n")
