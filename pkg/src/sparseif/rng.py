"""Counter-based random streams derived from one root seed.

A stream is identified by ``(root_seed, purpose, *indices)``. The tuple is fed
to :class:`numpy.random.SeedSequence` as ``entropy=root_seed`` and
``spawn_key=(purpose, *indices)``, and the resulting state keys a Philox
counter generator. Streams for different replicas or purposes are therefore
independent and reproducible regardless of the order in which they are used.
"""

from __future__ import annotations

import numpy as np

# purpose identifiers, fixed so that output files are reproducible
NETWORK = 1
INITIAL = 2
PARTICLE = 3
EXPERIMENT = 4
TEST = 99


def stream(root_seed: int, purpose: int, *indices: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=(int(purpose),) + tuple(int(i) for i in indices))
    return np.random.Generator(np.random.Philox(seq))
