"""Kernels and the tensorized weighted negative Sobolev norm.

For a signed measure ``g`` on ``R^k`` and the weight ``eta``,

    ||g||^2 = sum_{a,b} (g eta^k)(a) (g eta^k)(b) prod_m Lambda(x_{a,m} - x_{b,m}),

with ``Lambda(x) = exp(-|x|) / 2``. ``Lambda = K * K`` where ``K = K_0(|x|)/pi``
has Fourier transform ``1/sqrt(1 + 4 pi^2 xi^2)``, so the same quantity is the
squared L2 norm of ``K^{(x)k} * (g eta^k)``. Two evaluation routes are given:

* atomic pairings, ``O(n^2)`` directly or ``O(n log n)`` in one dimension by
  sorting and prefix sums (``e^{-|x-y|} = e^{-x} e^{y}`` for ``y <= x``);
* grid tensors, through the discrete Fourier transform of the cell masses
  multiplied by the lattice symbol of ``Lambda``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special

from .coefficients import BoundedFn
from .grids import Grid1D, GridMeasure1D, TensorGridMeasure, TruncationError

KERNEL_L2_SQ = 0.5  # ||K||_{L^2}^2 = Lambda(0)
TRUNCATION_TOL = 1e-8


def lambda_kernel(x):
    return 0.5 * np.exp(-np.abs(np.asarray(x, dtype=float)))


# Gauss-Legendre nodes for the integral representation of K_0
_GL_T, _GL_W = np.polynomial.legendre.leggauss(200)


def bessel_K(x):
    """``K(x) = (1/pi) int_0^inf exp(-|x| cosh t) dt`` by Gauss-Legendre quadrature.

    The integrand is written as ``exp(-|x|) exp(-|x| (cosh t - 1))`` and cut
    where the second factor drops below ``e^{-60}``.
    """
    x = np.abs(np.asarray(x, dtype=float))
    if np.any(x == 0):
        raise ValueError("K diverges at x = 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    t_max = np.arccosh(1.0 + 60.0 / x)
    t = 0.5 * t_max[:, None] * (_GL_T[None, :] + 1.0)
    vals = np.exp(-x[:, None] * (np.cosh(t) - 1.0))
    out = np.exp(-x) * 0.5 * t_max * (vals @ _GL_W) / np.pi
    return out[0] if scalar else out


def kernel_self_convolution(x: float) -> float:
    """``(K * K)(x)`` by adaptive quadrature, split at the two log singularities."""
    x = float(x)
    f = lambda y: float(bessel_K(y) * bessel_K(x - y))
    pts = sorted({0.0, x})
    pieces = [(-np.inf, pts[0])] + list(zip(pts[:-1], pts[1:])) + [(pts[-1], np.inf)]
    total = 0.0
    for a, b in pieces:
        val, _ = integrate.quad(f, a, b, limit=400, epsabs=1e-13, epsrel=1e-11)
        total += val
    return total


def kernel_l2_sq() -> float:
    """``int K^2`` by adaptive quadrature (equals ``Lambda(0) = 1/2``)."""
    val, _ = integrate.quad(lambda y: float(bessel_K(y) ** 2), 0.0, np.inf, limit=400,
                            epsabs=1e-13, epsrel=1e-11)
    return 2.0 * val


@dataclass(frozen=True)
class WeightEta:
    """``eta(x) = C_alpha exp(sqrt(1 + alpha^2 x^2))`` with
    ``C_alpha = int exp(-sqrt(1 + alpha^2 x^2)) dx``."""

    alpha: float = 0.25

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def C_alpha(self) -> float:
        return _normalizer(self.alpha)

    def log_weight(self, x):
        x = np.asarray(x, dtype=float)
        return np.log(self.C_alpha) + np.sqrt(1.0 + (self.alpha * x) ** 2)

    def __call__(self, x):
        with np.errstate(over="ignore"):
            return np.exp(self.log_weight(x))

    @property
    def at_zero(self) -> float:
        return self.C_alpha * np.e

    def dlog(self, x):
        """``eta'/eta``; bounded by alpha."""
        x = np.asarray(x, dtype=float)
        return self.alpha ** 2 * x / np.sqrt(1.0 + (self.alpha * x) ** 2)

    def d2log(self, x):
        """Second derivative of ``log eta``; bounded by alpha^2."""
        x = np.asarray(x, dtype=float)
        return self.alpha ** 2 / (1.0 + (self.alpha * x) ** 2) ** 1.5


@lru_cache(maxsize=64)
def _normalizer(alpha: float) -> float:
    val, _ = integrate.quad(lambda x: np.exp(-np.sqrt(1.0 + (alpha * x) ** 2)), 0.0, np.inf,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * val


# --- grid route ---------------------------------------------------------------

def _weighted_masses(g: TensorGridMeasure, eta: WeightEta | None) -> np.ndarray:
    a = g.masses
    if eta is None:
        return a
    w = eta(g.grid.centers)
    for axis in range(a.ndim):
        shape = [1] * a.ndim
        shape[axis] = -1
        a = a * w.reshape(shape)
    return a


def truncation_fraction(g: TensorGridMeasure, eta: WeightEta | None = None) -> float:
    """Share of ``|g eta^k|`` lying in the outermost 5% of cells of any axis."""
    a = np.abs(_weighted_masses(_as_tensor(g), eta))
    total = a.sum()
    if total == 0:
        return 0.0
    inner = ~g.grid.outer_mask()
    core = a[np.ix_(*([inner] * a.ndim))].sum()
    return float((total - core) / total)


def _as_tensor(g) -> TensorGridMeasure:
    return g.as_tensor() if isinstance(g, GridMeasure1D) else g


def lattice_symbol(h: float, n: int) -> np.ndarray:
    """DFT of ``Lambda`` sampled on the lattice ``h Z``, at the ``n`` frequencies of a
    length-``n`` transform. This is ``h * sum_j 1/(1 + 4 pi^2 (xi + j/h)^2)``, i.e.
    the continuous symbol with its aliases folded in."""
    theta = 2.0 * np.pi * np.fft.fftfreq(n)
    return 0.5 * np.sinh(h) / (np.cosh(h) - np.cos(theta))


def norm_grid(g, eta: WeightEta | None = None, *, check_truncation: bool = True) -> float:
    """Weighted negative Sobolev norm of a grid measure via the Fourier route.

    Each axis is zero-padded to at least twice its length so the periodic
    transform reproduces the linear pairing up to ``e^{-2L}`` wrap-around terms.
    ``eta=None`` gives the unweighted norm.
    """
    return float(np.sqrt(max(norm_grid_sq(g, eta, check_truncation=check_truncation), 0.0)))


def norm_grid_sq(g, eta: WeightEta | None = None, *, check_truncation: bool = True) -> float:
    g = _as_tensor(g)
    if g.k > 3:
        raise ValueError("grid norms are limited to k <= 3")
    if check_truncation:
        frac = truncation_fraction(g, eta)
        if frac > TRUNCATION_TOL:
            raise TruncationError(
                f"{frac:.3e} of the weighted mass sits in the outer 5% of the domain; enlarge L")
    a = _weighted_masses(g, eta)
    if not np.any(a):
        return 0.0
    k = a.ndim
    P = sfft.next_fast_len(2 * g.grid.G)
    spec = sfft.rfftn(a, s=(P,) * k)
    sym_full = lattice_symbol(g.grid.h, P)
    power = np.abs(spec) ** 2
    for axis in range(k):
        sym = sym_full if axis < k - 1 else sym_full[: P // 2 + 1]
        shape = [1] * k
        shape[axis] = -1
        power = power * sym.reshape(shape)
    # rfft stores half of the last axis: count interior frequencies twice
    mult = np.full(P // 2 + 1, 2.0)
    mult[0] = 1.0
    if P % 2 == 0:
        mult[-1] = 1.0
    power = power * mult.reshape([1] * (k - 1) + [-1])
    return float(power.sum() / P ** k)


def lambda_matrix(grid: Grid1D) -> np.ndarray:
    c = grid.centers
    return lambda_kernel(c[:, None] - c[None, :])


def norm_grid_pairing_sq(g, eta: WeightEta | None = None) -> float:
    """Same quantity as :func:`norm_grid_sq` by direct Lambda pairing of cell midpoints."""
    g = _as_tensor(g)
    a = _weighted_masses(g, eta)
    T = lambda_matrix(g.grid)
    b = a
    for axis in range(a.ndim):
        b = np.moveaxis(np.tensordot(T, b, axes=([1], [axis])), 0, axis)
    return float((a * b).sum())


def weighted_mass(g, eta: WeightEta | None = None) -> float:
    """Total variation of ``g eta^k``."""
    return float(np.abs(_weighted_masses(_as_tensor(g), eta)).sum())


# --- atomic route ------------------------------------------------------------

@dataclass
class Atoms:
    """Weighted point masses on the line."""

    x: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).ravel()
        self.w = np.asarray(self.w, dtype=float).ravel()
        if self.x.shape != self.w.shape:
            raise ValueError("positions and weights must have equal length")

    def weighted(self, eta: WeightEta | None) -> np.ndarray:
        return self.w if eta is None else self.w * eta(self.x)

    @classmethod
    def from_grid(cls, g: GridMeasure1D) -> Atoms:
        keep = g.masses != 0
        return cls(g.grid.centers[keep], g.masses[keep])

    def concat(self, other: Atoms, sign: float = 1.0) -> Atoms:
        return Atoms(np.concatenate([self.x, other.x]), np.concatenate([self.w, sign * other.w]))


_MAX_SPAN = 600.0


def lambda_potential(src_x, src_w, targets) -> np.ndarray:
    """``sum_a src_w[a] Lambda(t - src_x[a])`` at every target, O((n + m) log(n + m))."""
    src_x = np.asarray(src_x, dtype=float)
    src_w = np.asarray(src_w, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if src_x.size == 0:
        return np.zeros_like(targets)
    lo = min(src_x.min(), targets.min())
    hi = max(src_x.max(), targets.max())
    if hi - lo > _MAX_SPAN:
        return _lambda_potential_direct(src_x, src_w, targets)
    c = 0.5 * (lo + hi)
    order = np.argsort(src_x, kind="stable")
    xs, ws = src_x[order] - c, src_w[order]
    t = targets - c
    left_cum = np.concatenate([[0.0], np.cumsum(ws * np.exp(xs))])
    right_cum = np.concatenate([np.cumsum((ws * np.exp(-xs))[::-1])[::-1], [0.0]])
    n_left = np.searchsorted(xs, t, side="right")  # sources with x <= t
    return 0.5 * (np.exp(-t) * left_cum[n_left] + np.exp(t) * right_cum[n_left])


def _lambda_potential_direct(src_x, src_w, targets, chunk: int = 2048) -> np.ndarray:
    out = np.empty(len(targets))
    for s in range(0, len(targets), chunk):
        t = targets[s:s + chunk]
        out[s:s + chunk] = lambda_kernel(t[:, None] - src_x[None, :]) @ src_w
    return out


def pairing_sum(atoms_a: Atoms, atoms_b: Atoms, eta: WeightEta | None = None,
                method: str = "fast") -> float:
    """``sum_{a,b} w_a w_b Lambda(x_a - x_b) eta(x_a) eta(x_b)``."""
    ua, ub = atoms_a.weighted(eta), atoms_b.weighted(eta)
    if method == "direct":
        return float(ua @ lambda_kernel(atoms_a.x[:, None] - atoms_b.x[None, :]) @ ub)
    if method != "fast":
        raise ValueError(f"unknown method {method!r}")
    return float(ub @ lambda_potential(atoms_a.x, ua, atoms_b.x))


def atomic_norm(atoms: Atoms, eta: WeightEta | None = None) -> float:
    return float(np.sqrt(max(pairing_sum(atoms, atoms, eta), 0.0)))


@dataclass
class PairingMatrix:
    """Gram matrix ``G[a, b] = Lambda(x_a - x_b) eta(x_a) eta(x_b)`` between two atom sets."""

    x_a: np.ndarray
    x_b: np.ndarray
    G: np.ndarray

    @classmethod
    def build(cls, x_a, x_b, eta: WeightEta | None = None) -> PairingMatrix:
        x_a = np.asarray(x_a, dtype=float)
        x_b = np.asarray(x_b, dtype=float)
        G = lambda_kernel(x_a[:, None] - x_b[None, :])
        if eta is not None:
            G *= eta(x_a)[:, None]
            G *= eta(x_b)[None, :]
        return cls(x_a, x_b, G)

    def pair(self, w_a, w_b) -> float:
        return float(np.asarray(w_a) @ self.G @ np.asarray(w_b))


def lambda_tensor_potential(positions, weights, probes) -> np.ndarray:
    """``(Lambda^{(x)k} * f)(z)`` for the atomic measure ``sum_a w_a delta_{x_a}`` on R^k."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    d = np.abs(probes[:, None, :] - positions[None, :, :]).sum(axis=2)
    k = positions.shape[1]
    return (0.5 ** k) * np.exp(-d) @ np.asarray(weights, dtype=float)


# --- inequalities -------------------------------------------------------------

def multiply_axis(g, nu: BoundedFn, axis: int) -> TensorGridMeasure:
    """``nu`` applied to coordinate ``axis`` (0-based) of a grid measure."""
    g = _as_tensor(g)
    if not 0 <= axis < g.k:
        raise IndexError(f"axis {axis} out of range for k={g.k}")
    vals = nu(g.grid.centers)
    shape = [1] * g.k
    shape[axis] = -1
    return TensorGridMeasure(g.grid, g.masses * vals.reshape(shape))


def commutator_check(g, nu: BoundedFn, axis: int, eta: WeightEta | None = None):
    """``(||nu_m g||, 2 ||nu||_{W^{1,inf}} ||g||)``; the first never exceeds the second."""
    lhs = norm_grid(multiply_axis(g, nu, axis), eta, check_truncation=False)
    rhs = 2.0 * nu.w1inf * norm_grid(g, eta, check_truncation=False)
    return lhs, rhs


def dual_h1_norm(nu: BoundedFn, eta: WeightEta) -> float:
    """``||nu / eta||_{H^1}``, the largest value of ``|int nu f|`` over ``||f||_{H^{-1}_eta} <= 1``."""
    X = 60.0 / eta.alpha
    x = np.linspace(-X, X, 400_001)
    inv = np.exp(-eta.log_weight(x))
    g = nu(x) * inv
    dg = (nu.deriv(x) - nu(x) * eta.dlog(x)) * inv
    return float(np.sqrt(integrate.trapezoid(g * g + dg * dg, x)))


def _probe_family():
    from .coefficients import constant, saturated_leak, sigmoid

    probes = [constant(1.0)]
    for theta in np.linspace(-6.0, 6.0, 13):
        for beta in (0.05, 0.25, 1.0, 4.0, 16.0):
            probes.append(sigmoid(1.0, theta, beta))
    for scale in (0.25, 1.0, 4.0, 16.0):
        probes.append(saturated_leak(1.0, scale))
    return probes


@lru_cache(maxsize=16)
def firing_constant(alpha: float) -> float:
    """Calibrated constant of the firing-rate bound for the weight with rate ``alpha``.

    For each probe rate the supremum of ``|int nu f| / ||f||`` over measures is
    ``||nu/eta||_{H^1}`` (duality), so the calibration maximizes
    ``||nu/eta||_{H^1} / ||nu||_{W^{1,inf}}`` over constants, sigmoids and
    saturating profiles.
    """
    eta = WeightEta(alpha)
    return max(dual_h1_norm(p, eta) / p.w1inf for p in _probe_family())


def firing_constant_ceiling(alpha: float) -> float:
    """Analytic upper bound ``sqrt(int (1 + (1 + |log eta|')^2) / eta^2)`` valid for every
    ``nu`` in ``W^{1,inf}``."""
    eta = WeightEta(alpha)
    X = 60.0 / alpha
    x = np.linspace(-X, X, 400_001)
    inv2 = np.exp(-2.0 * eta.log_weight(x))
    return float(np.sqrt(integrate.trapezoid((1.0 + (1.0 + np.abs(eta.dlog(x))) ** 2) * inv2, x)))


def firing_functional_bound(f: GridMeasure1D, nu: BoundedFn, eta: WeightEta):
    """``(|int nu f|, C(alpha) ||nu||_{W^{1,inf}} ||f||_{H^{-1}_eta})``."""
    lhs = abs(float(nu(f.grid.centers) @ f.masses))
    rhs = firing_constant(eta.alpha) * nu.w1inf * norm_grid(f, eta, check_truncation=False)
    return lhs, rhs
