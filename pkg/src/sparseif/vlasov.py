"""Finite-volume solver for the extended Vlasov equation.

Every fiber ``xi`` carries a measure on the x-grid which is advected by the
mean-field drift ``mu(x) + int w(xi, zeta) J(zeta) dzeta``, diffused with
coefficient ``sigma^2/2``, killed at rate ``nu(x)`` and re-injected at x = 0 with
the total killed mass ``J(xi) dt``. All terms are explicit; the killed mass is
deposited in the cell centered at 0, so fiber masses are conserved to rounding.

Two advection fluxes are offered: first-order ``upwind`` and second-order
``centered``. The centered flux keeps masses nonnegative as long as the cell
Peclet number ``|mu*| h / (sigma^2/2)`` stays below 2, which is checked.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .coefficients import BoundedFn, CoefficientSet
from .connectivity import StepKernel
from .grids import ExtendedDensity

CFL_MAX = 0.9
NEG_TOL = 1e-14
SCHEMES = ("upwind", "centered")


def firing_rate(f: ExtendedDensity, nu: BoundedFn) -> np.ndarray:
    """``J(xi_m) = sum_c nu(x_c) mass(m, c)``."""
    return f.masses @ nu(f.grid.centers)


def _kernel_for(f: ExtendedDensity, w: StepKernel) -> np.ndarray:
    if w.M == f.M:
        return w.values
    if w.M % f.M == 0 or f.M % w.M == 0:
        if f.M % w.M:
            raise ValueError(f"density has {f.M} fibers but kernel resolution is {w.M}; refine the density")
        return w.at_resolution(f.M).values
    raise ValueError(f"kernel resolution {w.M} and fiber count {f.M} are not in integer ratio")


def drift_shift(f: ExtendedDensity, w: StepKernel, nu: BoundedFn) -> np.ndarray:
    """``(1/M) sum_zeta w(xi, zeta) J(zeta)`` per fiber."""
    return _kernel_for(f, w) @ firing_rate(f, nu) / f.M


def mean_field_drift(f: ExtendedDensity, w: StepKernel, mu: BoundedFn, nu: BoundedFn) -> np.ndarray:
    """Table ``mu*(xi_m, x_c)`` at the cell centers, shape (M, G)."""
    return mu(f.grid.centers)[None, :] + drift_shift(f, w, nu)[:, None]


def stable_dt(f: ExtendedDensity, w: StepKernel, coef: CoefficientSet) -> float:
    """Largest ``dt`` meeting the CFL bound, using the worst-case drift ``sup|mu| + |w| sup nu``."""
    h = f.grid.h
    amax = coef.mu.sup + float(np.abs(w.values).max()) * coef.nu_max
    return CFL_MAX / (amax / h + coef.sigma ** 2 / h ** 2)


def step(f: ExtendedDensity, w: StepKernel, coef: CoefficientSet, dt: float,
         scheme: str = "upwind") -> ExtendedDensity:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if coef.sigma_fn is not None:
        raise ValueError("the Vlasov solver only supports constant sigma")
    grid = f.grid
    h = grid.h
    m = f.masses
    J = firing_rate(f, coef.nu)
    shift = _kernel_for(f, w) @ J / f.M
    a = coef.mu(grid.edges[1:-1])[None, :] + shift[:, None]  # drift at interior faces
    amax = float(np.abs(a).max()) if a.size else 0.0
    D = 0.5 * coef.sigma ** 2
    cfl = dt * (amax / h + coef.sigma ** 2 / h ** 2)
    if cfl > CFL_MAX:
        suggested = CFL_MAX / (amax / h + coef.sigma ** 2 / h ** 2)
        raise ValueError(f"CFL number {cfl:.3f} exceeds {CFL_MAX}; use dt <= {suggested:.3e}")
    rho = m / h
    if scheme == "upwind":
        adv = np.maximum(a, 0.0) * rho[:, :-1] + np.minimum(a, 0.0) * rho[:, 1:]
    else:
        if D == 0 or amax * h / D > 2.0:
            raise ValueError("centered advection needs cell Peclet number |mu*| h / (sigma^2/2) <= 2")
        adv = 0.5 * a * (rho[:, :-1] + rho[:, 1:])
    flux = dt * (adv - D * (rho[:, 1:] - rho[:, :-1]) / h)
    new = m.copy()
    new[:, :-1] -= flux
    new[:, 1:] += flux
    new -= dt * coef.nu(grid.centers)[None, :] * m
    new[:, grid.zero_index] += dt * J
    low = new.min()
    if low < -NEG_TOL:
        raise FloatingPointError(f"negative mass {low:.3e}; reduce dt")
    np.maximum(new, 0.0, out=new)
    return ExtendedDensity(grid, new, f.time + dt, dict(f.meta))


def solve(f0: ExtendedDensity, w: StepKernel, coef: CoefficientSet, dt: float, t_end: float,
          snapshot_times: Sequence[float] = (), scheme: str = "upwind") -> list[ExtendedDensity]:
    """Time-step from ``f0`` to ``t_end``; return the requested snapshots (default: final state)."""
    n_end = int(round(t_end / dt)) if t_end > 0 else 0
    if t_end < 0 or abs(n_end * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a nonnegative multiple of dt")
    times = list(snapshot_times) if len(snapshot_times) else [t_end]
    want: dict[int, list[int]] = {}
    for pos, t in enumerate(times):
        k = int(round(t / dt))
        if t < -1e-12 or t > t_end + 1e-12 or abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"snapshot time {t} must be a multiple of dt in [0, t_end]")
        want.setdefault(k, []).append(pos)
    out: list[ExtendedDensity | None] = [None] * len(times)
    f = f0
    t0 = f0.time
    for n in range(n_end + 1):
        if n in want:
            for pos in want[n]:
                snap = f.copy()
                snap.time = t0 + n * dt
                out[pos] = snap
        if n < n_end:
            f = step(f, w, coef, dt, scheme)
    return out


def boundary_mass(f: ExtendedDensity, frac: float = 0.05) -> float:
    """Largest per-fiber mass in the outer ``frac`` of cells."""
    mask = f.grid.outer_mask(frac)
    return float(f.masses[:, mask].sum(axis=1).max())


def write_density_csv(snapshots: Sequence[ExtendedDensity], path, header_comment: str | None = None,
                      skip_zero: bool = True) -> None:
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("t,xi_cell,x_cell,mass\n")
        for f in snapshots:
            for m in range(f.M):
                row = f.masses[m]
                idx = np.nonzero(row)[0] if skip_zero else range(f.grid.G)
                for c in idx:
                    fh.write(f"{float(f.time)!r},{m},{c},{float(row[c])!r}\n")
