"""Sparse integrate-and-fire networks and their mean-field limit.

Particle simulation of the jump-diffusion network, a finite-volume solver for
the extended Vlasov equation, tree-indexed observables on both sides and their
distance in tensorized weighted negative Sobolev norms.
"""

__version__ = "0.1.0"
