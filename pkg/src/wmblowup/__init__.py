"""Numerical laboratory for self-similar blowup of noisy corotational wave maps.

The reduced radial equation ``u_tt = Delta u + n0(u) + noise`` in ``n = d + 2``
dimensions is simulated in physical and similarity variables. Modules:

core        grids, discrete Laplacian, modal basis, norms
profiles    closed-form blowup profiles and the gauge mode
physics     the nonlinearity and its linearization
noise       trace-class noise and the exact stochastic convolution
solver      leapfrog solvers, blowup detection, Picard mild solver
similarity  similarity variables, operator and evolution
lp          blowup-time selection by a stabilized fixed-point problem
control     steering between states with a synthesized forcing
ensemble    Monte Carlo driver
cli         command-line entry point
"""
__version__ = "0.1.0"
