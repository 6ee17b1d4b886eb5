import numpy as np
import pytest
from scipy import stats

from sparseif import rng as rngmod
from sparseif.coefficients import CoefficientSet, InitialLaw, constant, saturated_leak, sigmoid
from sparseif.connectivity import ConnMatrix, gen_sparse
from sparseif.grids import Grid1D, GridMeasure1D
from sparseif.particle_sim import (ParticleEnsemble, Snapshot, apply_firings, empirical_exponential_moment,
                                   init_ensemble, read_snapshot, run, step, write_snapshot, write_spikes_csv)


def free(sigma=0.0, rate=0.0):
    return CoefficientSet(constant(0.0), constant(rate), sigma)


def test_delta_init():
    ens = init_ensemble(3, 7, InitialLaw("delta", (0.0,)), seed=1)
    assert np.all(ens.potentials == 0)
    g = GridMeasure1D.dirac(Grid1D(5.0, 11), 0.0)
    assert np.all(init_ensemble(2, 4, g, seed=1).potentials == 0)


def test_uniform_init_mean():
    R, N = 20, 500
    ens = init_ensemble(R, N, InitialLaw("uniform", (-1.0, 1.0)), seed=3)
    assert abs(ens.potentials.mean()) < 3 / np.sqrt(R * N)
    assert ens.potentials.min() >= -1 and ens.potentials.max() <= 1


def test_init_deterministic_and_block_laws():
    law = InitialLaw("normal", (0.0, 1.0))
    a, b = init_ensemble(4, 10, law, 5), init_ensemble(4, 10, law, 5)
    assert np.array_equal(a.potentials, b.potentials)
    blocks = init_ensemble(2, 10, [InitialLaw("delta", (-1.0,)), InitialLaw("delta", (2.0,))], 0)
    assert np.all(blocks.potentials[:, :5] == -1) and np.all(blocks.potentials[:, 5:] == 2)


def test_init_rejects_non_probability():
    grid = Grid1D(5.0, 11)
    with pytest.raises(ValueError):
        init_ensemble(1, 3, GridMeasure1D(grid, np.full(11, 0.5)), 0)
    with pytest.raises(ValueError):
        init_ensemble(0, 3, InitialLaw("delta", (0.0,)), 0)
    with pytest.raises(ValueError):
        init_ensemble(1, 3, "normal", 0)


def test_no_noise_no_firing_is_static():
    ens = init_ensemble(3, 20, InitialLaw("normal", (0.0, 1.0)), 2)
    x0 = ens.potentials.copy()
    run(ens, gen_sparse(20, 3, 1.0, 0.5, 0), free(sigma=1e-12), 1e-2, 1.0)
    assert np.max(np.abs(ens.potentials - x0)) < 1e-10


def test_step_preconditions():
    ens = init_ensemble(1, 4, InitialLaw("delta", (0.0,)), 0)
    W = ConnMatrix.zeros(4)
    with pytest.raises(ValueError):
        step(ens, W, free(), 0.0)
    with pytest.raises(ValueError):
        step(ens, W, free(rate=20.0), 0.01)
    with pytest.raises(ValueError):
        step(ens, ConnMatrix.zeros(5), free(), 0.01)


def test_poisson_spike_count():
    R, N, lam, T, dt = 10, 1000, 2.0, 1.0, 1e-3
    ens = init_ensemble(R, N, InitialLaw("delta", (0.0,)), 4)
    _, spikes = run(ens, ConnMatrix.zeros(N), free(sigma=0.5, rate=lam), dt, T)
    mean = R * N * lam * T
    assert abs(len(spikes) - mean) <= 4 * np.sqrt(mean)
    # per-neuron counts against Poisson(lam T)
    counts = np.bincount((spikes[:, 0] * N + spikes[:, 2]).astype(int), minlength=R * N)
    kmax = 7
    obs = np.bincount(np.minimum(counts, kmax), minlength=kmax + 1)
    p = stats.poisson.pmf(np.arange(kmax), lam * T)
    p = np.append(p, 1 - p.sum())
    chi2 = ((obs - R * N * p) ** 2 / (R * N * p)).sum()
    assert stats.chi2.sf(chi2, kmax) > 1e-3


def test_forced_single_firing():
    W = ConnMatrix(2, [0], [1], [0.3])
    x = np.array([[0.5, 2.0]])
    out, received = apply_firings(x, np.array([[False, True]]), W)
    assert out[0, 0] == pytest.approx(0.8) and out[0, 1] == 0.0
    assert np.allclose(received, [[0.3, 0.0]])


def test_handcrafted_trace_in_step():
    # rate is essentially zero at 0 and maximal at 5, where only neuron 2 sits
    coef = CoefficientSet(constant(0.0), sigmoid(100.0, 2.5, 0.05), 0.0)
    W = ConnMatrix(2, [0], [1], [0.3])
    ens = ParticleEnsemble(np.array([[0.0, 5.0]]), seed=0)
    for _ in range(200):
        _, info = step(ens, W, coef, 1e-3, return_info=True)
        if info["fired"].any():
            break
    assert info["fired"].tolist() == [[False, True]]
    assert ens.potentials[0, 0] == pytest.approx(0.3) and ens.potentials[0, 1] == 0.0


def test_jump_bookkeeping_and_left_limit():
    W = gen_sparse(40, 6, 2.0, 0.5, 3)
    coef = CoefficientSet(saturated_leak(1.0, 2.0), sigmoid(20.0, 0.0, 0.5), 0.5)
    ens = init_ensemble(5, 40, InitialLaw("normal", (0.0, 1.0)), 6)
    D = W.dense()
    for _ in range(20):
        _, info = step(ens, W, coef, 5e-3, return_info=True)
        fired = info["fired"]
        for r in range(5):
            total = info["received"][r][~fired[r]].sum()
            expect = D[np.ix_(~fired[r], fired[r])].sum()
            assert total == pytest.approx(expect, abs=1e-12)
            assert np.allclose(info["rate"][r], coef.nu(info["x_pre"][r]))
        assert np.all(ens.potentials[fired] == 0)
        assert np.allclose(ens.potentials[~fired], (info["moved"] + info["received"])[~fired])


def test_determinism_of_spike_logs():
    W = gen_sparse(30, 4, 1.0, 0.5, 1)
    coef = CoefficientSet(saturated_leak(1.0, 2.0), sigmoid(2.0, 0.0, 0.3), 0.5)
    logs = []
    for _ in range(2):
        ens = init_ensemble(4, 30, InitialLaw("normal", (0.0, 0.5)), 11)
        logs.append(run(ens, W, coef, 1e-2, 1.0)[1])
    assert np.array_equal(logs[0], logs[1])


def test_replicas_do_not_depend_on_batching():
    coef = CoefficientSet(saturated_leak(1.0, 2.0), sigmoid(2.0, 0.0, 0.3), 0.5)
    W = gen_sparse(10, 2, 1.0, 0.0, 1)
    big = init_ensemble(3, 10, InitialLaw("normal", (0.0, 0.5)), 8)
    small = init_ensemble(1, 10, InitialLaw("normal", (0.0, 0.5)), 8)
    run(big, W, coef, 1e-2, 0.5)
    run(small, W, coef, 1e-2, 0.5)
    assert np.array_equal(big.potentials[0], small.potentials[0])


def test_run_snapshots():
    ens = init_ensemble(2, 5, InitialLaw("normal", (0.0, 1.0)), 0)
    x0 = ens.potentials.copy()
    snaps, _ = run(ens, ConnMatrix.zeros(5), free(0.5), 1e-2, 0.0)
    assert len(snaps) == 1 and np.array_equal(snaps[0].potentials, x0)
    snaps, _ = run(ens, ConnMatrix.zeros(5), free(0.5), 1e-2, 0.5, [0.2, 0.2, 0.5])
    assert np.array_equal(snaps[0].potentials, snaps[1].potentials)
    assert snaps[0].potentials is not snaps[1].potentials
    assert [s.time for s in snaps] == pytest.approx([0.2, 0.2, 0.5])
    with pytest.raises(ValueError):
        run(ens, ConnMatrix.zeros(5), free(0.5), 1e-2, 0.5, [0.6])


def test_brownian_variance_law():
    R, N, sigma, T = 10, 1000, 0.5, 1.0
    ens = init_ensemble(R, N, InitialLaw("delta", (0.0,)), 9)
    run(ens, ConnMatrix.zeros(N), free(sigma), 1e-2, T)
    n = R * N
    var = ens.potentials.var()
    assert abs(var - sigma ** 2 * T) < 4 * sigma ** 2 * T * np.sqrt(2 / n)


def test_exponential_moment():
    assert empirical_exponential_moment(np.zeros((2, 3)), 1.0) == 1.0
    assert empirical_exponential_moment(np.array([[1.0]]), 1.0) == pytest.approx(np.e)
    x = rngmod.stream(0, rngmod.TEST, 30).uniform(-1, 1, size=100_000)
    # E exp(|x|) = e - 1 for x uniform on [-1, 1]
    target = np.e - 1.0
    sd = np.sqrt(((np.e ** 2 - 1) / 2 - target ** 2) / x.size)
    assert abs(empirical_exponential_moment(x, 1.0) - target) < 4 * sd
    with pytest.warns(RuntimeWarning):
        assert empirical_exponential_moment(np.array([1e6]), 1.0) == float("inf")
    with pytest.raises(ValueError):
        empirical_exponential_moment(x, 0.0)


def test_file_formats(tmp_path):
    snap = Snapshot(0.25, rngmod.stream(0, rngmod.TEST, 31).normal(size=(3, 4)))
    write_snapshot(snap, tmp_path / "s.bin")
    back = read_snapshot(tmp_path / "s.bin")
    assert back.time == 0.25 and np.array_equal(back.potentials, snap.potentials)
    assert (tmp_path / "s.bin").stat().st_size == 24 + 8 * 12
    write_spikes_csv(np.array([[0, 0.01, 3], [2, 0.02, 1]]), tmp_path / "sp.csv", "seed=1")
    assert (tmp_path / "sp.csv").read_text().splitlines() == ["# seed=1", "replica,time,neuron", "0,0.01,3", "2,0.02,1"]
