"""Mean-field dynamics of many bosons with complex-germ corrections.

Modules
-------
lattice      lattices, one-particle states, kernels and Hamiltonian specs
meanfield    Hartree flow, variation pair, pairing kernel, action and phase
fock         truncated Fock vectors, germ vacua and the canonical embedding
exact        exact ``N``-particle dynamics and correlators
corrections  fluctuation expansion and the first correction
branches     operator-valued symbols and eigen-branch asymptotics
packet       semiclassical Gaussian packets
experiment   scenario runners and reports
"""

__version__ = "0.1.0"
