"""Explicit constants of the stability analysis and desk-scale convergence runs.

* :func:`apriori_constants` / :func:`apriori_check`: exponential growth rate of
  the eta-weighted total variation of ``|tau_N|(T)`` and its check on simulated
  trajectories.
* :func:`gronwall_bound`: closed-form bound for the truncated recursive
  differential inequality ``M_k' <= k (C M_{k+1} + eps)``, ``M_k <= L``, with
  :func:`closure_ode_max` as an independent integration of the extremal system.
* :func:`stability_constants`: the four coefficients of the energy inequality.
* :func:`convergence_experiment`: particle ensembles on an N-ladder compared with
  one Vlasov solve through weak distances of tree observables.
"""

from __future__ import annotations

import csv
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from . import particle_sim, rng as rngmod, vlasov
from .coefficients import CoefficientSet, InitialLaw
from .connectivity import ConnMatrix, StepKernel, gen_block_sparse, gen_complete
from .grids import ExtendedDensity, Grid1D
from .observables import (EmpiricalObservable, LimitObservable, absolute_weighted_mass,
                          weak_distance)
from .trees import Tree, singleton
from .weakmetric import KERNEL_L2_SQ, WeightEta, firing_constant, norm_grid


# --- a priori bound ------------------------------------------------------------------

@dataclass(frozen=True)
class AprioriConstants:
    alpha: float
    C_W: float
    A_eta: float


def apriori_constants(coef: CoefficientSet, W, eta: WeightEta) -> AprioriConstants:
    """Growth rate ``A_eta`` for ``h(x) = sqrt(1 + alpha^2 x^2)``, using
    ``sup|h'| = alpha`` and ``sup|h''| = alpha^2``.

    ``W`` is a :class:`ConnMatrix` (``C_W`` = max of row and column norms), a
    :class:`StepKernel` (its kernel norm) or the number ``C_W`` itself.
    """
    a = eta.alpha
    if isinstance(W, ConnMatrix):
        C_W = max(W.row_norm, W.col_norm)
    elif isinstance(W, StepKernel):
        C_W = W.norm
    else:
        C_W = float(W)
    A = (coef.mu.sup * a + 0.5 * coef.sigma ** 2 * (a ** 2 + a ** 2)
         + coef.nu.sup * a * C_W * np.exp(a * C_W))
    return AprioriConstants(a, C_W, float(A))


@dataclass
class AprioriRow:
    tree: Tree
    time: float
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs

    @property
    def margin(self) -> float:
        """``rhs / lhs``; above 1 when the bound holds."""
        return self.rhs / self.lhs if self.lhs > 0 else float("inf")


def apriori_check(snapshots: Sequence[particle_sim.Snapshot], W: ConnMatrix, coef: CoefficientSet,
                  eta: WeightEta, trees: Sequence[Tree]) -> list[AprioriRow]:
    """Compare ``|| |tau_N|(T)(t) eta^k ||`` with ``C_eta(T) exp(|T| A_eta t)``.

    ``C_eta(T)`` is the measured value on the first snapshot, whose time is the
    origin of the bound.
    """
    if len(snapshots) < 2:
        raise ValueError("need a trajectory with at least two snapshots")
    consts = apriori_constants(coef, W, eta)
    t0 = snapshots[0].time
    rows = []
    for tree in trees:
        c0 = absolute_weighted_mass(tree, W, snapshots[0], eta)
        for snap in snapshots:
            lhs = c0 if snap is snapshots[0] else absolute_weighted_mass(tree, W, snap, eta)
            rhs = c0 * np.exp(tree.size * consts.A_eta * (snap.time - t0))
            rows.append(AprioriRow(tree, snap.time, float(lhs), float(rhs)))
    return rows


# --- recursive Gronwall bound ------------------------------------------------------------

@dataclass(frozen=True)
class GronwallParams:
    C: float
    epsilon: float
    L: float
    theta: float
    p: float
    n: int
    n_prime: int = 1
    t_star: float = 1.0

    def __post_init__(self):
        if self.p <= 1:
            raise ValueError("p must exceed 1")
        q = self.p / (self.p - 1.0)
        if not 0 < self.theta < 2.0 ** (-q):
            raise ValueError(f"theta must lie in (0, 2^(-p')) = (0, {2.0 ** (-q):.4g})")
        if self.C <= 0 or self.L <= 0:
            raise ValueError("C and L must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.n < 2:
            raise ValueError("depth n must be at least 2")

    @property
    def floor(self) -> float:
        """``eps / (C L) + (2 theta)^n``."""
        return self.epsilon / (self.C * self.L) + (2.0 * self.theta) ** self.n


def gronwall_bound(params: GronwallParams, M0, t: float) -> float:
    """``L (Ct/theta + 2) max(floor, max_k theta^k M_k(0) / L)^(1 / p^(Ct/theta + 1))``.

    ``M0`` holds ``M_1(0), ..., M_{n-1}(0)``.
    """
    P = params
    if P.floor > 1.0:
        raise ValueError(f"eps/(C L) + (2 theta)^n = {P.floor:.4g} exceeds 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    M0 = np.asarray(M0, dtype=float)
    if M0.shape != (P.n - 1,):
        raise ValueError(f"expected {P.n - 1} initial values")
    if np.any(M0 < 0):
        raise ValueError("initial values must be nonnegative")
    k = np.arange(1, P.n)
    start = float(np.max(P.theta ** k * M0)) / P.L
    s = P.C * t / P.theta
    base = max(P.floor, start)
    return float(P.L * (s + 2.0) * base ** (1.0 / P.p ** (s + 1.0)))


def closure_ode_max(params: GronwallParams, M0, t: float) -> float:
    """``max_k theta^k M_k(t)`` for the extremal system ``M_k' = k (C M_{k+1} + eps)``
    (``k < n``), ``M_n = L``, each ``M_k`` frozen once it reaches ``L``.

    Integration restarts at every crossing of ``L`` so the right-hand side stays
    smooth on each piece.
    """
    P = params
    y = np.minimum(np.asarray(M0, dtype=float), P.L)
    k = np.arange(1, P.n)
    frozen = y >= P.L
    t_now = 0.0
    while t_now < t and not frozen.all():
        def rhs(_, z, frozen=frozen):
            nxt = np.append(z[1:], P.L)
            d = k * (P.C * nxt + P.epsilon)
            d[frozen] = 0.0
            return d

        active = np.nonzero(~frozen)[0]
        events = []
        for i in active:
            ev = (lambda _, z, i=i: z[i] - P.L)
            ev.terminal, ev.direction = True, 1
            events.append(ev)
        sol = integrate.solve_ivp(rhs, (t_now, t), y, method="RK45", rtol=1e-10, atol=1e-12 * P.L,
                                  events=events)
        if sol.status == -1:
            raise RuntimeError(sol.message)
        t_now = float(sol.t[-1])
        y = np.minimum(sol.y[:, -1], P.L)
        hit = [i for i, te in zip(active, sol.t_events) if te.size]
        frozen = frozen | (y >= P.L)
        frozen[hit] = True
        y[frozen] = P.L
    vals = np.append(P.theta ** k * y, P.theta ** P.n * P.L)
    return float(vals.max())


# --- stability constants ------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityConstants:
    C0: float
    C1: float
    eps0: float
    eps1: float
    lam: float

    @property
    def C(self) -> float:
        return self.C0 + self.C1 / self.lam

    def epsilon(self, C_lam_eta: float = 1.0) -> float:
        return (self.eps0 + self.eps1 / self.lam) * C_lam_eta ** 2


def _w1inf_table(values: np.ndarray, derivs: np.ndarray) -> float:
    return float(max(np.abs(values).max(), np.abs(derivs).max()))


def weight_norms(coef: CoefficientSet, eta: WeightEta, span: float = 400.0, n: int = 400_001) -> dict:
    """``W^{1,inf}`` norms of ``mu h'``, ``eta''/eta = h'' + h'^2`` and ``h'`` on a dense grid."""
    a = eta.alpha
    x = np.linspace(-span / a, span / a, n)
    s = np.sqrt(1.0 + (a * x) ** 2)
    h1 = a ** 2 * x / s
    h2 = a ** 2 / s ** 3
    h3 = -3.0 * a ** 4 * x / s ** 5
    mu = coef.mu(x)
    dmu = coef.mu.deriv(x)
    return {
        "mu_h1": _w1inf_table(mu * h1, dmu * h1 + mu * h2),
        "eta2_over_eta": _w1inf_table(h2 + h1 ** 2, h3 + 2.0 * h1 * h2),
        "h1": _w1inf_table(h1, h2),
    }


def stability_constants(coef: CoefficientSet, eta: WeightEta, lam: float, n: int,
                        w_bar: float) -> StabilityConstants:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    if coef.sigma <= 0:
        raise ValueError("the constants need sigma > 0")
    s2 = coef.sigma ** 2
    nu = coef.nu.w1inf
    mu = coef.mu.w1inf
    Ca = firing_constant(eta.alpha)
    wn = weight_norms(coef, eta)
    fire0 = KERNEL_L2_SQ * eta.at_zero ** 2 * Ca ** 2 * nu ** 2
    fire1 = 4.0 * Ca ** 2 / s2 * nu ** 2
    C0 = (4.0 + s2 / 2.0
          + 4.0 * (nu ** 2 + wn["mu_h1"] ** 2 + s2 / 2.0 * wn["eta2_over_eta"] ** 2
                   + 4.0 / s2 * mu ** 2 + 2.0 * s2 * wn["h1"] ** 2)
          + fire0)
    growth = np.expm1((2.0 + 2.0 * eta.alpha) * n * w_bar)
    return StabilityConstants(float(C0), float(fire1), float(fire0 * growth), float(fire1 * growth), float(lam))


def default_lambda(A_eta: float, t_star: float, moment: float, eta: WeightEta,
                   kernel_norm: float, f_norm: float) -> float:
    """Scale ``lambda`` making the a priori bounds of both hierarchies at most one.

    ``moment`` bounds ``E exp(alpha |X(0)|)``; ``f_norm`` is the largest fiber
    norm of the limit density.
    """
    emp = np.sqrt(KERNEL_L2_SQ) * moment * eta.C_alpha * np.e * np.exp(A_eta * t_star)
    lim = max(kernel_norm, 1.0) * f_norm
    return float(min(emp ** -2.0, lim ** -2.0))


def max_fiber_norm(f: ExtendedDensity, eta: WeightEta) -> float:
    return max(norm_grid(f.fiber(m), eta, check_truncation=False) for m in range(f.M))


# --- convergence experiment ---------------------------------------------------------------

class ExperimentStageError(RuntimeError):
    """A stage of the convergence experiment failed; the message starts with the stage tag."""

    def __init__(self, stage: str, detail: str):
        super().__init__(f"[{stage}] {detail}")
        self.stage = stage


@dataclass
class ConvergenceConfig:
    """Ladder of network sizes matched to one step kernel and per-block initial laws.

    ``network = "complete"`` uses ``w[i, j] = kernel / N`` (kernel must be 1x1);
    ``network = "block_sparse"`` draws ``degree_at(N)`` inputs per nonzero block
    with ``degree_at(N) = round(degree * (N / ladder[0]) ** degree_exponent)``.
    Singleton distances pair the particles exactly with the limit density spread
    over ``subcells`` atoms per cell; larger trees use the grid route.
    """

    kernel: StepKernel
    laws: list
    coef: CoefficientSet
    ladder: tuple = (125, 250, 500, 1000, 2000)
    network: str = "complete"
    degree: int = 8
    degree_exponent: float = 0.5
    R: int = 20
    reseeds: int = 5
    t_star: float = 1.0
    times: tuple = (1.0,)
    trees: tuple = ()
    dt_particle: float = 1e-3
    dt_vlasov: float = 1e-3
    L: float = 10.0
    G: int = 1025
    scheme: str = "centered"
    alpha: float = 0.25
    subcells: int = 16
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.network not in ("complete", "block_sparse"):
            raise ValueError(f"unknown network family {self.network!r}")
        if self.network == "complete" and self.kernel.M != 1:
            raise ValueError("the complete network needs a 1x1 kernel")
        if len(self.laws) != self.kernel.M:
            raise ValueError(f"need one initial law per block ({self.kernel.M}), got {len(self.laws)}")
        if any(N % self.kernel.M for N in self.ladder):
            raise ValueError("every ladder size must be a multiple of the block count")
        if self.reseeds < 2:
            raise ValueError("reseeds must be >= 2 to estimate Monte Carlo error")
        if not self.trees:
            self.trees = (singleton(),)
        for t in self.times:
            if t < 0 or t > self.t_star + 1e-12:
                raise ValueError(f"time {t} outside [0, t_star]")

    def degree_at(self, N: int) -> int:
        return max(1, int(round(self.degree * (N / self.ladder[0]) ** self.degree_exponent)))

    def network_for(self, N: int, seed: int) -> ConnMatrix:
        if self.network == "complete":
            return gen_complete(N, float(self.kernel.values[0, 0]))
        return gen_block_sparse(N, self.kernel, self.degree_at(N), seed)


@dataclass
class ConvergenceRow:
    N: int
    R: int
    tree: Tree
    time: float
    distance: float
    mc_err: float
    diag_bound: float
    slope_fit: float = float("nan")
    samples: list = field(default_factory=list)


@dataclass
class ConvergenceReport:
    rows: list
    limit: list  # Vlasov snapshots at the requested times
    wallclock_s: float = 0.0

    def select(self, tree: Tree, time: float) -> list:
        return sorted((r for r in self.rows if r.tree == tree and abs(r.time - time) < 1e-9), key=lambda r: r.N)

    def slope(self, tree: Tree, time: float) -> tuple[float, float]:
        """Least-squares slope of ``log distance`` against ``log N`` and its standard error
        (NaN when some distance is zero)."""
        rows = self.select(tree, time)
        if len(rows) < 2 or any(r.distance <= 0 for r in rows):
            return float("nan"), float("nan")
        x = np.log([r.N for r in rows])
        y = np.log([r.distance for r in rows])
        fit = stats.linregress(x, y)
        return float(fit.slope), float(fit.stderr)

    def strictly_decreasing(self, tree: Tree, time: float) -> bool:
        """Each distance lies below the previous one by more than both error bars."""
        rows = self.select(tree, time)
        return all(b.distance + b.mc_err < a.distance - a.mc_err for a, b in zip(rows, rows[1:]))

    def write_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["N", "R", "tree", "time", "distance", "mc_err", "diag_bound", "slope_fit"])
            for r in self.rows:
                out.writerow([r.N, r.R, str(r.tree), repr(r.time), repr(r.distance), repr(r.mc_err),
                              repr(r.diag_bound), repr(r.slope_fit)])


def read_convergence_csv(path) -> list[dict]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def limit_density(cfg: ConvergenceConfig) -> list[ExtendedDensity]:
    grid = Grid1D(cfg.L, cfg.G)
    f0 = ExtendedDensity.from_laws(grid, cfg.laws)
    try:
        return vlasov.solve(f0, cfg.kernel, cfg.coef, cfg.dt_vlasov, cfg.t_star,
                            snapshot_times=list(cfg.times), scheme=cfg.scheme)
    except (ValueError, FloatingPointError) as exc:
        raise ExperimentStageError("vlasov", str(exc)) from exc


def _run_one(cfg: ConvergenceConfig, N: int, rep: int, limits: list[ExtendedDensity]) -> dict:
    """One reseeded ensemble at size ``N``: distances for every (tree, time)."""
    seed = int(rngmod.stream(cfg.seed, rngmod.EXPERIMENT, N, rep).integers(2 ** 62))
    try:
        W = cfg.network_for(N, seed)
    except ValueError as exc:
        raise ExperimentStageError("network", f"N={N}: {exc}") from exc
    try:
        ens = particle_sim.init_ensemble(cfg.R, N, list(cfg.laws) if cfg.kernel.M > 1 else cfg.laws[0], seed)
        snaps, _ = particle_sim.run(ens, W, cfg.coef, cfg.dt_particle, cfg.t_star, snapshot_times=list(cfg.times))
    except ValueError as exc:
        raise ExperimentStageError("particles", f"N={N}: {exc}") from exc
    eta = WeightEta(cfg.alpha)
    out = {}
    try:
        for tree in cfg.trees:
            for snap, f in zip(snaps, limits):
                emp = EmpiricalObservable(tree, W, snap)
                lim = LimitObservable(tree, cfg.kernel, f, cfg.subcells)
                if tree.size == 1:
                    rep_ = weak_distance(tree, emp, lim, eta)
                else:
                    rep_ = weak_distance(tree, emp, lim, eta, method="grid", grid=f.grid)
                out[(tree, snap.time)] = (rep_.distance, rep_.diag_bound)
    except Exception as exc:  # noqa: BLE001 - surfaced with a stage tag
        raise ExperimentStageError("observables", f"N={N}: {type(exc).__name__}: {exc}") from exc
    return out


def convergence_experiment(cfg: ConvergenceConfig) -> ConvergenceReport:
    t_start = _time.perf_counter()
    limits = limit_density(cfg)
    jobs = [(N, rep) for N in cfg.ladder for rep in range(cfg.reseeds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_one, [cfg] * len(jobs), [N for N, _ in jobs],
                                    [r for _, r in jobs], [limits] * len(jobs)))
    else:
        results = [_run_one(cfg, N, rep, limits) for N, rep in jobs]
    rows = []
    for N in cfg.ladder:
        mine = [res for (n, _), res in zip(jobs, results) if n == N]
        for tree in cfg.trees:
            for t in cfg.times:
                key = next(k for k in mine[0] if k[0] == tree and abs(k[1] - t) < 1e-9)
                d = np.array([m[key][0] for m in mine])
                db = float(np.mean([m[key][1] for m in mine]))
                rows.append(ConvergenceRow(N, cfg.R, tree, float(t), float(d.mean()),
                                           float(d.std(ddof=1) / np.sqrt(d.size)), db, samples=list(d)))
    report = ConvergenceReport(rows, limits)
    for tree in cfg.trees:
        for t in cfg.times:
            if len(cfg.ladder) >= 2:
                s, _ = report.slope(tree, t)
                for r in report.select(tree, t):
                    r.slope_fit = s
    report.wallclock_s = _time.perf_counter() - t_start
    return report
