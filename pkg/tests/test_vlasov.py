import numpy as np
import pytest

from sparseif import vlasov
from sparseif.coefficients import CoefficientSet, InitialLaw, constant, saturated_leak, sigmoid
from sparseif.connectivity import StepKernel
from sparseif.grids import ExtendedDensity, Grid1D
from sparseif.hierarchy import apriori_constants
from sparseif.weakmetric import WeightEta, norm_grid

GRID = Grid1D(10.0, 401)
NORMAL = InitialLaw("normal", (0.0, 0.5))
COEF = CoefficientSet(saturated_leak(1.0, 2.0), sigmoid(2.0, 1.0, 0.3), 0.5)


def density(laws=(NORMAL,), M=None, grid=GRID):
    return ExtendedDensity.from_laws(grid, laws, M)


def variance(g):
    x = g.grid.centers
    m = g.masses / g.masses.sum()
    mean = m @ x
    return m @ (x - mean) ** 2


def test_firing_rate_examples():
    f = density(M=3)
    assert np.all(vlasov.firing_rate(f, constant(0.0)) == 0)
    assert np.allclose(vlasov.firing_rate(f, constant(1.7)), 1.7)
    d = density((InitialLaw("delta", (0.0,)),), M=2)
    nu = sigmoid(2.0, 1.0, 0.3)
    assert np.allclose(vlasov.firing_rate(d, nu), nu(0.0))


def test_drift_examples():
    f = density(M=2)
    mu = saturated_leak(1.0, 2.0)
    x = GRID.centers
    assert np.allclose(vlasov.mean_field_drift(f, StepKernel.constant(0.0, 2), mu, sigmoid(2, 1, 0.3)), mu(x))
    table = vlasov.mean_field_drift(f, StepKernel.constant(0.4, 2), mu, constant(1.5))
    assert np.allclose(table, mu(x)[None, :] + 0.4 * 1.5)
    # one-way coupling: block 1 listens to block 0, block 0 to nobody
    shift = vlasov.drift_shift(f, StepKernel([[0.0, 0.0], [1.0, 0.0]]), constant(2.0))
    assert shift[0] == 0.0 and shift[1] == pytest.approx(1.0)


def test_incompatible_resolution():
    with pytest.raises(ValueError):
        vlasov.drift_shift(density(M=2), StepKernel.constant(1.0, 3), constant(1.0))
    with pytest.raises(ValueError):
        vlasov.drift_shift(density(M=2), StepKernel.constant(1.0, 4), constant(1.0))


def test_cfl_violation_suggests_dt():
    with pytest.raises(ValueError, match="use dt <="):
        vlasov.step(density(), StepKernel.constant(1.0), COEF, 0.1)


@pytest.mark.parametrize("scheme", vlasov.SCHEMES)
def test_free_diffusion_variance(scheme):
    free = CoefficientSet(constant(0.0), constant(0.0), 0.5)
    f0 = density(grid=Grid1D(10.0, 1025))
    dt = 1e-3
    f1 = vlasov.solve(f0, StepKernel.constant(0.0), free, dt, 1.0, scheme=scheme)[0]
    gain = variance(f1.fiber(0)) - variance(f0.fiber(0))
    assert gain == pytest.approx(0.25, rel=1e-3)
    one = vlasov.step(f0, StepKernel.constant(0.0), free, dt, scheme)
    assert variance(one.fiber(0)) - variance(f0.fiber(0)) == pytest.approx(0.25 * dt, rel=1e-6)


@pytest.mark.parametrize("scheme", vlasov.SCHEMES)
def test_mass_conservation_and_positivity(scheme):
    f0 = density((NORMAL, InitialLaw("normal", (1.0, 0.3))), M=2)
    K = StepKernel([[0.5, -0.8], [0.6, -0.2]])
    traj = vlasov.solve(f0, K, COEF, 1e-3, 1.0, snapshot_times=[0.5, 1.0], scheme=scheme)
    for f in traj:
        assert np.max(np.abs(f.fiber_mass() - 1.0)) <= 1e-10
        assert f.masses.min() >= 0
    assert vlasov.boundary_mass(traj[-1]) < 1e-10


def test_reset_piles_mass_at_zero():
    lam = 2.0
    coef = CoefficientSet(constant(0.0), constant(lam), 0.01)
    f0 = density((InitialLaw("normal", (3.0, 0.5)),))
    f = vlasov.solve(f0, StepKernel.constant(0.0), coef, 1e-3, 3.0)[0]
    near = np.abs(GRID.centers) <= 0.1
    assert f.masses[0, near].sum() > 0.99
    assert vlasov.firing_rate(f, coef.nu)[0] == pytest.approx(lam * f.fiber_mass()[0], rel=1e-12)


def test_solve_t_end_zero():
    f0 = density()
    out = vlasov.solve(f0, StepKernel.constant(1.0), COEF, 1e-3, 0.0)
    assert len(out) == 1 and np.array_equal(out[0].masses, f0.masses)
    with pytest.raises(ValueError):
        vlasov.solve(f0, StepKernel.constant(1.0), COEF, 1e-3, 1.0, snapshot_times=[2.0])


def test_fiber_symmetry():
    f = vlasov.solve(density(M=8), StepKernel.constant(0.7, 8), COEF, 1e-3, 1.0)[0]
    diffs = np.abs(f.masses[:, None, :] - f.masses[None, :, :]).sum(axis=2)
    assert diffs.max() <= 1e-10


def test_exchangeable_matches_single_fiber():
    one = vlasov.solve(density(), StepKernel.constant(0.7), COEF, 1e-3, 1.0)[0]
    many = vlasov.solve(density(M=16), StepKernel.constant(0.7, 16), COEF, 1e-3, 1.0)[0]
    assert np.max(np.abs(many.marginal().masses - one.masses[0])) <= 1e-12


def test_weighted_mass_growth_within_apriori_rate():
    K = StepKernel([[1.0, -0.6], [0.8, -0.4]])
    eta = WeightEta(0.25)
    f0 = density((InitialLaw("normal", (-0.5, 0.4)), InitialLaw("normal", (0.5, 0.4))), M=2)
    A = apriori_constants(COEF, K, eta).A_eta
    times = [0.25, 0.5, 1.0]
    traj = vlasov.solve(f0, K, COEF, 1e-3, 1.0, snapshot_times=times)
    w = eta(GRID.centers)
    m0 = f0.masses @ w
    for t, f in zip(times, traj):
        assert np.all(f.masses @ w <= np.exp(A * t) * m0 * 1.05)


def test_refinement_changes_observable_little():
    eta = WeightEta(0.25)
    K = StepKernel([[0.5, -0.5], [0.2, 0.3]])
    laws = (NORMAL, InitialLaw("normal", (1.0, 0.3)))
    norms = []
    for G, dt in ((201, 4e-3), (401, 2e-3), (801, 1e-3)):
        f = vlasov.solve(density(laws, M=2, grid=Grid1D(10.0, G)), K, COEF, dt, 1.0)[0]
        norms.append(norm_grid(f.marginal(), eta))
    d1, d2 = abs(norms[1] - norms[0]), abs(norms[2] - norms[1])
    print(f"refinement changes: {d1:.3e} then {d2:.3e}")
    assert d2 < d1 and d2 < 1e-2 * norms[2]


def test_density_csv(tmp_path):
    f = density((InitialLaw("delta", (0.0,)),), M=2)
    vlasov.write_density_csv([f], tmp_path / "d.csv", "seed=0")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[:2] == ["# seed=0", "t,xi_cell,x_cell,mass"]
    assert lines[2:] == [f"0.0,0,{GRID.zero_index},1.0", f"0.0,1,{GRID.zero_index},1.0"]
