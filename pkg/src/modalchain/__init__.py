"""Dense simulation of coarse-grained quantum state dynamics.

Subpackages and modules:

- ``qcore``      dense linear algebra on finite tensor-product spaces
- ``ontic``      spectral decomposition of reduced states, label matching
- ``chain``      coarse-grained flow matrices, jump chains, trajectories
- ``continuum``  rate-matrix foil and the coarse/continuum crossover
- ``scenarios``  end-to-end model runs (measurement models, EPR, typicality)
- ``cli``        config-driven experiment runner
"""

__version__ = "0.1.0"

__all__ = ["qcore", "ontic", "chain", "continuum", "scenarios", "cli"]
