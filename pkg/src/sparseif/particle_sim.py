"""Monte Carlo simulation of the integrate-and-fire network.

Each of ``R`` independent replicas holds ``N`` membrane potentials. One step of
length ``dt``:

1. Euler-Maruyama move ``x <- x + mu(x) dt + sigma sqrt(dt) z``;
2. neuron ``j`` fires with probability ``1 - exp(-nu(x_j) dt)``, using the
   potential before the move (left limit);
3. every firing neuron ``j`` adds ``w[i, j]`` to each other neuron ``i``, all
   firings at once; firing neurons are then reset to 0, discarding whatever
   they received in the same step.

Replica ``r`` draws from its own counter-based stream, so results do not depend
on how replicas are batched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import rng as rngmod
from .coefficients import CoefficientSet, InitialLaw
from .connectivity import ConnMatrix, block_sizes
from .grids import GridMeasure1D

MAX_RATE_STEP = 0.1


@dataclass(frozen=True)
class Snapshot:
    time: float
    potentials: np.ndarray  # (R, N)

    @property
    def R(self) -> int:
        return self.potentials.shape[0]

    @property
    def N(self) -> int:
        return self.potentials.shape[1]


class ParticleEnsemble:
    def __init__(self, potentials: np.ndarray, seed: int, time: float = 0.0):
        self.potentials = np.array(potentials, dtype=float, ndmin=2)
        self.seed = int(seed)
        self.time = float(time)
        self.streams = [rngmod.stream(seed, rngmod.PARTICLE, r) for r in range(self.R)]
        self._spikes: list[np.ndarray] = []
        self.steps_taken = 0

    @property
    def R(self) -> int:
        return self.potentials.shape[0]

    @property
    def N(self) -> int:
        return self.potentials.shape[1]

    @property
    def spike_log(self) -> np.ndarray:
        """Rows ``(replica, time, neuron)`` in the order the spikes were generated."""
        if not self._spikes:
            return np.empty((0, 3))
        return np.concatenate(self._spikes)

    def snapshot(self) -> Snapshot:
        return Snapshot(self.time, self.potentials.copy())


def init_ensemble(R: int, N: int, init_law, seed: int) -> ParticleEnsemble:
    """Sample all potentials i.i.d. from ``init_law``.

    ``init_law`` is an :class:`InitialLaw`, a probability :class:`GridMeasure1D`
    (atoms drawn at cell midpoints) or a sequence of laws, one per contiguous
    block of neurons.
    """
    if R < 1 or N < 1:
        raise ValueError("R and N must be >= 1")
    x = np.empty((R, N))
    if isinstance(init_law, GridMeasure1D):
        p = init_law.masses
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("initial grid measure must be a probability measure")
        centers = init_law.grid.centers
        for r in range(R):
            gen = rngmod.stream(seed, rngmod.INITIAL, r)
            x[r] = centers[gen.choice(init_law.grid.G, size=N, p=p / p.sum())]
    elif isinstance(init_law, InitialLaw):
        for r in range(R):
            x[r] = init_law.sample(rngmod.stream(seed, rngmod.INITIAL, r), N)
    elif isinstance(init_law, (list, tuple)) and all(isinstance(l, InitialLaw) for l in init_law):
        sizes = block_sizes(N, len(init_law))
        starts = np.concatenate([[0], np.cumsum(sizes)])
        for r in range(R):
            gen = rngmod.stream(seed, rngmod.INITIAL, r)
            for b, law in enumerate(init_law):
                x[r, starts[b]:starts[b + 1]] = law.sample(gen, sizes[b])
    else:
        raise ValueError("init_law must be an InitialLaw, a probability GridMeasure1D or a list of laws")
    return ParticleEnsemble(x, seed)


def _check_step(ens: ParticleEnsemble, W: ConnMatrix, coef: CoefficientSet, dt: float) -> None:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if W.N != ens.N:
        raise ValueError(f"matrix size {W.N} does not match ensemble size {ens.N}")
    if dt * coef.nu_max > MAX_RATE_STEP + 1e-12:
        raise ValueError(f"dt * nu_max = {dt * coef.nu_max:.3g} exceeds {MAX_RATE_STEP}; "
                         f"use dt <= {MAX_RATE_STEP / coef.nu_max:.3g}")


def received_jumps(W: ConnMatrix, fired: np.ndarray) -> np.ndarray:
    """``sum_j w[i, j] fired[r, j]`` for every replica ``r`` and neuron ``i``."""
    r_idx, j_idx = np.nonzero(fired)
    if r_idx.size == 0 or W.nnz == 0:
        return np.zeros(fired.shape)
    F = sp.csr_matrix((np.ones(r_idx.size), (r_idx, j_idx)), shape=fired.shape)
    return (F @ W.csc.T).toarray()


def apply_firings(x_moved: np.ndarray, fired: np.ndarray, W: ConnMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Add the jumps sent by ``fired`` neurons, then reset the firing ones."""
    received = received_jumps(W, fired)
    out = x_moved + received
    out[fired] = 0.0
    return out, received


def step(ens: ParticleEnsemble, W: ConnMatrix, coef: CoefficientSet, dt: float,
         *, return_info: bool = False):
    """Advance every replica by ``dt`` in place and return the ensemble."""
    _check_step(ens, W, coef, dt)
    x = ens.potentials
    R, N = x.shape
    z = np.empty((R, N))
    u = np.empty((R, N))
    for r, gen in enumerate(ens.streams):
        z[r] = gen.standard_normal(N)
        u[r] = gen.random(N)
    rate = coef.nu(x)
    fired = u < -np.expm1(-rate * dt)
    sig = coef.sigma_fn(x) if coef.sigma_fn is not None else coef.sigma
    moved = x + coef.mu(x) * dt + sig * np.sqrt(dt) * z
    new, received = apply_firings(moved, fired, W)
    t_new = ens.time + dt
    r_idx, j_idx = np.nonzero(fired)
    if r_idx.size:
        ens._spikes.append(np.column_stack([r_idx, np.full(r_idx.size, t_new), j_idx]).astype(float))
    info = {"x_pre": x.copy(), "moved": moved, "fired": fired, "received": received, "rate": rate} if return_info else None
    ens.potentials = new
    ens.time = t_new
    ens.steps_taken += 1
    return (ens, info) if return_info else ens


def run(ens: ParticleEnsemble, W: ConnMatrix, coef: CoefficientSet, dt: float, t_end: float,
        snapshot_times: Sequence[float] = ()):
    """Step to ``t_end``; return ``(snapshots, spike_log)``.

    ``snapshot_times`` must be multiples of ``dt`` within ``[0, t_end]``; an empty
    list records only the final state.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_end = int(round(t_end / dt))
    if abs(n_end * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a multiple of dt")
    times = list(snapshot_times) if len(snapshot_times) else [t_end]
    want = []
    for t in times:
        k = int(round(t / dt))
        if t < -1e-12 or t > t_end + 1e-12 or abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"snapshot time {t} must be a multiple of dt in [0, t_end]")
        want.append(k)
    by_step: dict[int, list[int]] = {}
    for pos, k in enumerate(want):
        by_step.setdefault(k, []).append(pos)
    snaps: list[Snapshot | None] = [None] * len(want)
    t0 = ens.time
    for n in range(n_end + 1):
        if n in by_step:
            for pos in by_step[n]:
                snaps[pos] = Snapshot(t0 + n * dt, ens.potentials.copy())
        if n < n_end:
            step(ens, W, coef, dt)
    ens.time = t0 + n_end * dt
    return snaps, ens.spike_log


def empirical_exponential_moment(x, a: float) -> float:
    """``mean(exp(a |x|))`` over all atoms of an ensemble, snapshot or array."""
    if a <= 0:
        raise ValueError("a must be positive")
    if isinstance(x, (ParticleEnsemble, Snapshot)):
        x = x.potentials
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        val = float(np.mean(np.exp(a * np.abs(x))))
    if not np.isfinite(val):
        warnings.warn("exponential moment overflowed", RuntimeWarning, stacklevel=2)
        return float("inf")
    return val


# --- file formats -------------------------------------------------------------

def write_spikes_csv(spikes: np.ndarray, path, header_comment: str | None = None) -> None:
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("replica,time,neuron\n")
        for r, t, j in spikes:
            fh.write(f"{int(r)},{float(t)!r},{int(j)}\n")


_SNAP_HEADER = np.dtype([("R", "<i8"), ("N", "<i8"), ("time", "<f8")])


def write_snapshot(snap: Snapshot, path) -> None:
    """Little-endian header ``(R: int64, N: int64, time: float64)`` then ``R*N`` float64."""
    header = np.array([(snap.R, snap.N, snap.time)], dtype=_SNAP_HEADER)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(snap.potentials, dtype="<f8").tobytes())


def read_snapshot(path) -> Snapshot:
    raw = open(path, "rb").read()
    head = np.frombuffer(raw[:_SNAP_HEADER.itemsize], dtype=_SNAP_HEADER)[0]
    R, N = int(head["R"]), int(head["N"])
    data = np.frombuffer(raw[_SNAP_HEADER.itemsize:], dtype="<f8")
    if data.size != R * N:
        raise ValueError(f"{path}: expected {R * N} values, found {data.size}")
    return Snapshot(float(head["time"]), data.reshape(R, N).copy())
