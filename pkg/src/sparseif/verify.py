"""Fast invariant suites run by ``sparseif verify``.

Each suite is a function returning ``(name, passed, detail)`` triples. The checks
are small instances of the properties the test suite covers in depth, so a fresh
install can confirm the numerics in a few seconds.
"""

from __future__ import annotations

import io
import math
import tempfile
from pathlib import Path

import numpy as np

from . import particle_sim, rng as rngmod, vlasov
from .coefficients import CoefficientSet, InitialLaw, constant, saturated_leak, sigmoid
from .connectivity import (ConnMatrix, StepKernel, embed_graphon, gen_block_sparse, gen_sparse,
                           read_matrix, write_matrix)
from .grids import ExtendedDensity, Grid1D, GridMeasure1D, tensor_power
from .hierarchy import (GronwallParams, closure_ode_max, gronwall_bound, stability_constants)
from .observables import (EmpiricalObservable, absolute_weighted_mass, pair_tuple_atoms, tuple_atoms,
                          weak_norm_sq)
from .trees import canonical_class, enumerate_trees, parse_tree, path, singleton, star
from .weakmetric import (KERNEL_L2_SQ, WeightEta, kernel_l2_sq, kernel_self_convolution, lambda_kernel,
                         norm_grid, norm_grid_sq)


def _check(name, ok, detail=""):
    return (name, bool(ok), detail)


def suite_trees():
    levels = enumerate_trees(6)
    counts = [len(l) for l in levels]
    shapes = [len({canonical_class(t) for t in l}) for l in levels]
    t = parse_tree("1,1,2")
    return [
        _check("labeled increasing trees number (n-1)!", counts == [math.factorial(n - 1) for n in range(1, 7)],
               str(counts)),
        _check("rooted shapes 1,1,2,4,9,20", shapes == [1, 1, 2, 4, 9, 20], str(shapes)),
        _check("serialize/parse round trip", all(parse_tree(x.serialize()) == x for l in levels for x in l)),
        _check("subtree of root is everything", sorted(t.subtree(1)) == [1, 2, 3, 4]),
        _check("path and star differ in shape", canonical_class(path(3)) != canonical_class(star(3))),
    ]


def suite_connectivity():
    K = StepKernel([[1.0, -0.5], [0.25, 0.0]])
    W = gen_block_sparse(40, K, 4, seed=3)
    emb = embed_graphon(W).at_resolution(2)
    buf = Path(tempfile.mkdtemp()) / "w.txt"
    write_matrix(W, buf)
    W2 = read_matrix(buf)
    S = gen_sparse(50, 5, 1.0, 0.5, seed=1)
    return [
        _check("block-sparse embedding equals kernel on off-diagonal blocks",
               np.allclose(emb.values[0, 1], K.values[0, 1]) and np.allclose(emb.values[1, 0], K.values[1, 0])),
        _check("matrix file round trip", np.array_equal(W.dense(), W2.dense())),
        _check("row-regular sparse generator row norm = strength", abs(S.row_norm - 1.0) < 1e-12),
        _check("zero diagonal", np.all(np.diag(S.dense()) == 0)),
    ]


def suite_weakmetric():
    out = []
    for x in (0.1, 1.0):
        val = kernel_self_convolution(x)
        out.append(_check(f"K*K = Lambda at {x}", abs(val / lambda_kernel(x) - 1) < 1e-5, f"{val:.10g}"))
    out.append(_check("int K^2 = 1/2", abs(kernel_l2_sq() - KERNEL_L2_SQ) < 1e-6))
    grid = Grid1D(10.0, 257)
    gen = rngmod.stream(0, rngmod.TEST, 1)
    f = GridMeasure1D(grid, gen.normal(size=grid.G) * np.exp(-grid.centers ** 2))
    eta = WeightEta(0.25)
    a = norm_grid(tensor_power(f, 2), eta, check_truncation=False)
    b = norm_grid(f, eta, check_truncation=False) ** 2
    out.append(_check("tensorization", abs(a / b - 1) < 1e-6, f"{a:.10g} vs {b:.10g}"))
    d = norm_grid_sq(GridMeasure1D.dirac(grid, 0.0))
    out.append(_check("norm of delta_0 is 1/2 without weight", abs(d - 0.5) < 1e-12))
    return out


def _small_coef():
    return CoefficientSet(saturated_leak(1.0, 2.0), sigmoid(2.0, 1.0, 0.3), 0.5)


def suite_particle_sim():
    W = gen_sparse(30, 3, 0.5, 0.5, seed=2)
    law = InitialLaw("normal", (0.0, 0.5))
    coef = _small_coef()
    runs = []
    for _ in range(2):
        ens = particle_sim.init_ensemble(3, 30, law, 9)
        _, spikes = particle_sim.run(ens, W, coef, 1e-2, 0.5)
        runs.append((ens.potentials.copy(), spikes))
    ens = particle_sim.init_ensemble(2, 30, law, 1)
    _, info = particle_sim.step(ens, W, coef, 1e-2, return_info=True)
    return [
        _check("same seed gives identical trajectories",
               np.array_equal(runs[0][0], runs[1][0]) and np.array_equal(runs[0][1], runs[1][1])),
        _check("firing neurons reset to 0", np.all(ens.potentials[info["fired"]] == 0.0)),
        _check("spikes recorded", runs[0][1].shape[1] == 3),
    ]


def suite_vlasov():
    grid = Grid1D(10.0, 201)
    coef = _small_coef()
    K = StepKernel([[0.5, -0.5], [0.2, 0.3]])
    f0 = ExtendedDensity.from_laws(grid, [InitialLaw("normal", (0.0, 0.5)), InitialLaw("normal", (1.0, 0.3))])
    f1 = vlasov.solve(f0, K, coef, 2e-3, 0.5)[0]
    sym0 = ExtendedDensity.from_laws(grid, [InitialLaw("normal", (0.0, 0.5))], M=4)
    sym1 = vlasov.solve(sym0, StepKernel.constant(0.7, 4), coef, 2e-3, 0.5)[0]
    return [
        _check("fiber masses conserved", np.max(np.abs(f1.fiber_mass() - 1.0)) < 1e-10),
        _check("nonnegative masses", f1.masses.min() >= 0),
        _check("fiber symmetry preserved", np.max(np.abs(sym1.masses - sym1.masses[0])) < 1e-12),
    ]


def suite_observables():
    W = gen_sparse(5, 2, 1.0, 0.5, seed=4)
    gen = rngmod.stream(0, rngmod.TEST, 2)
    snap = particle_sim.Snapshot(0.0, gen.normal(size=(2, 5)))
    eta = WeightEta(0.25)
    out = []
    for tree in (singleton(), path(2), path(3), star(3)):
        obs = EmpiricalObservable(tree, W, snap)
        fast = weak_norm_sq(tree, obs, obs, eta)
        _, _, pos, wts = tuple_atoms(tree, W, snap)
        wts = wts / (snap.R * snap.N)
        brute = pair_tuple_atoms(pos, wts, pos, wts, eta)
        out.append(_check(f"contraction = brute force for {tree}", abs(fast - brute) <= 1e-12 * max(1.0, brute),
                          f"{fast:.12g} vs {brute:.12g}"))
    mass = absolute_weighted_mass(path(3), W, snap)
    out.append(_check("total variation bounded by row norm^(|T|-1)", mass <= W.abs().row_norm ** 2 + 1e-12))
    return out


def suite_hierarchy():
    gen = rngmod.stream(0, rngmod.TEST, 3)
    ok = True
    for _ in range(10):
        p = 1.0 + gen.uniform(0.2, 3.0)
        q = p / (p - 1)
        theta = gen.uniform(0.05, 0.95) * 2.0 ** (-q)
        n = int(gen.integers(2, 6))
        C, L = gen.uniform(0.1, 3.0), gen.uniform(0.5, 2.0)
        eps = gen.uniform(0, 0.5) * C * L * max(0.0, 1 - (2 * theta) ** n)
        P = GronwallParams(C, eps, L, theta, p, n)
        M0 = gen.uniform(0, L, size=n - 1)
        t = gen.uniform(0.0, 2.0)
        ok &= closure_ode_max(P, M0, t) <= gronwall_bound(P, M0, t) * (1 + 1e-9)
    s = stability_constants(_small_coef(), WeightEta(0.25), 0.1, 3, 0.0)
    s0 = stability_constants(CoefficientSet(saturated_leak(1.0, 2.0), constant(0.0), 0.5), WeightEta(0.25), 0.1, 3, 0.1)
    return [
        _check("bound dominates closure ODE on 10 draws", ok),
        _check("no coupling gives zero epsilons", s.eps0 == 0 and s.eps1 == 0),
        _check("no firing gives zero C1 and epsilons", s0.C1 == 0 and s0.eps0 == 0 and s0.eps1 == 0),
    ]


SUITES = {
    "trees": suite_trees,
    "connectivity": suite_connectivity,
    "weakmetric": suite_weakmetric,
    "particle_sim": suite_particle_sim,
    "vlasov": suite_vlasov,
    "observables": suite_observables,
    "hierarchy": suite_hierarchy,
}


def run_suites(names=None, stream: io.TextIOBase | None = None) -> bool:
    """Run the named suites (all by default), print one line per check, return overall success."""
    names = list(SUITES) if not names or names == ["all"] else names
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite(s) {unknown}; available: {', '.join(SUITES)}")
    all_ok = True
    for name in names:
        try:
            results = SUITES[name]()
        except Exception as exc:  # noqa: BLE001 - a crashing suite is a failure
            results = [("suite raised", False, f"{type(exc).__name__}: {exc}")]
        for check, ok, detail in results:
            all_ok &= ok
            if stream is not None:
                line = f"{'PASS' if ok else 'FAIL'} {name}: {check}"
                stream.write(line + (f" ({detail})" if detail and not ok else "") + "\n")
    return all_ok
