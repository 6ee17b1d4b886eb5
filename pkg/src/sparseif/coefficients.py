"""Drift, firing-rate and initial-law descriptors shared by both solvers.

Drift and firing rate are bounded Lipschitz functions given by a small set of
analytic families, so that sup norms and Lipschitz constants are exact:

* ``saturated_leak``: ``mu(x) = -kappa * scale * tanh(x / scale)``
* ``sigmoid``: ``nu(x) = nu_max / (1 + exp(-(x - theta) / beta))``
* ``constant``: ``c``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special, stats


@dataclass(frozen=True)
class BoundedFn:
    kind: str
    params: dict = field(default_factory=dict)

    _KINDS = ("saturated_leak", "sigmoid", "constant")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown function family {self.kind!r}; expected one of {self._KINDS}")
        p = self.params
        if self.kind == "saturated_leak" and p["scale"] <= 0:
            raise ValueError("saturated_leak needs scale > 0")
        if self.kind == "sigmoid" and p["beta"] <= 0:
            raise ValueError("sigmoid needs beta > 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "saturated_leak":
            return -p["kappa"] * p["scale"] * np.tanh(x / p["scale"])
        if self.kind == "sigmoid":
            return p["nu_max"] * special.expit((x - p["theta"]) / p["beta"])
        return np.full_like(x, float(p["c"]))

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "saturated_leak":
            return -p["kappa"] * (1.0 - np.tanh(x / p["scale"]) ** 2)
        if self.kind == "sigmoid":
            s = special.expit((x - p["theta"]) / p["beta"])
            return p["nu_max"] * s * (1.0 - s) / p["beta"]
        return np.zeros_like(x)

    @property
    def sup(self) -> float:
        p = self.params
        if self.kind == "saturated_leak":
            return abs(p["kappa"]) * p["scale"]
        if self.kind == "sigmoid":
            return abs(p["nu_max"])
        return abs(float(p["c"]))

    @property
    def lip(self) -> float:
        p = self.params
        if self.kind == "saturated_leak":
            return abs(p["kappa"])
        if self.kind == "sigmoid":
            return abs(p["nu_max"]) / (4.0 * p["beta"])
        return 0.0

    @property
    def w1inf(self) -> float:
        """W^{1,inf} norm, taken as max(sup |f|, sup |f'|)."""
        return max(self.sup, self.lip)


def saturated_leak(kappa: float, scale: float) -> BoundedFn:
    return BoundedFn("saturated_leak", {"kappa": float(kappa), "scale": float(scale)})


def sigmoid(nu_max: float, theta: float, beta: float) -> BoundedFn:
    return BoundedFn("sigmoid", {"nu_max": float(nu_max), "theta": float(theta), "beta": float(beta)})


def constant(c: float) -> BoundedFn:
    return BoundedFn("constant", {"c": float(c)})


@dataclass(frozen=True)
class CoefficientSet:
    """Drift ``mu``, firing rate ``nu`` (nonnegative) and noise level ``sigma``.

    ``sigma_fn`` enables a state-dependent noise ``sigma(x)`` for the particle
    simulation only; it must be opted into with ``allow_state_sigma``.
    """

    mu: BoundedFn
    nu: BoundedFn
    sigma: float
    sigma_fn: Callable | None = None
    allow_state_sigma: bool = False

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.sigma_fn is not None and not self.allow_state_sigma:
            raise ValueError("state-dependent sigma requires allow_state_sigma=True")
        if self.nu.kind == "constant" and self.nu.params["c"] < 0:
            raise ValueError("firing rate must be nonnegative")
        if self.nu.kind == "sigmoid" and self.nu.params["nu_max"] < 0:
            raise ValueError("firing rate must be nonnegative")

    @property
    def nu_max(self) -> float:
        return self.nu.sup


@dataclass(frozen=True)
class InitialLaw:
    """I.i.d. initial law: ``normal(mean, std)``, ``uniform(low, high)`` or ``delta(x0)``."""

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("normal", "uniform", "delta"):
            raise ValueError(f"unknown initial law {self.kind!r}")
        n_expected = {"normal": 2, "uniform": 2, "delta": 1}[self.kind]
        if len(self.params) != n_expected:
            raise ValueError(f"{self.kind} law takes {n_expected} parameters")
        if self.kind == "normal" and self.params[1] <= 0:
            raise ValueError("normal law needs std > 0")
        if self.kind == "uniform" and self.params[1] <= self.params[0]:
            raise ValueError("uniform law needs low < high")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "normal":
            return rng.normal(self.params[0], self.params[1], size=size)
        if self.kind == "uniform":
            return rng.uniform(self.params[0], self.params[1], size=size)
        return np.full(size, float(self.params[0]))

    def cell_masses(self, edges: np.ndarray) -> np.ndarray:
        """Probability of each cell ``[edges[c], edges[c+1])``; the tails beyond the
        outer edges are folded into the boundary cells so the masses sum to one."""
        if self.kind == "normal":
            cdf = stats.norm.cdf(edges, loc=self.params[0], scale=self.params[1])
        elif self.kind == "uniform":
            lo, hi = self.params
            cdf = np.clip((edges - lo) / (hi - lo), 0.0, 1.0)
        else:
            cdf = (edges > self.params[0]).astype(float)
        cdf = np.array(cdf, dtype=float)
        cdf[0], cdf[-1] = 0.0, 1.0
        return np.diff(cdf)

    def __str__(self) -> str:
        return f"{self.kind}:" + ",".join(repr(float(p)) for p in self.params)


def parse_law(text: str) -> InitialLaw:
    """Parse ``kind:p1,p2`` such as ``normal:0,0.5`` or ``delta:0``."""
    try:
        kind, rest = text.strip().split(":", 1)
        params = tuple(float(v) for v in rest.split(","))
    except ValueError:
        raise ValueError(f"invalid initial law {text!r}; expected kind:p1[,p2]") from None
    return InitialLaw(kind.strip(), params)
