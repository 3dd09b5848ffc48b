"""fermigas: a numerical laboratory for semiclassical free fermions.

Discretizes Schrodinger operators -hbar^2 Laplace + V on a box, builds
spectral projectors below a Fermi level, samples the associated
determinantal point processes exactly, and checks the universal bulk and
edge kernels, the Weyl law, and variance asymptotics at desk scale.
"""

__version__ = "0.1.0"
