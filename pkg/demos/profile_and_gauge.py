"""Check the exact blowup profile on two grids and locate the growing mode.

Run: python3 demos/profile_and_gauge.py
"""
import numpy as np

from wmblowup.lp import linearized_operator
from wmblowup.profiles import profile_residual, residual_grid
from wmblowup.similarity import xi_grid

# The self-similar solution should satisfy the discrete equation up to O(h^2).
for h in (1 / 128, 1 / 256):
    res = profile_residual(residual_grid(h))
    print(f"h = {h:.5f}: max residual {res['max']:.3e}")

# Time translation of the blowup time gives an eigenvalue 1 of the linearized flow.
op = linearized_operator(xi_grid(2.5, 1 / 128), 5, None)
print(f"eigenvalue near 1: {op.eigenvalue:.8f}, gauge residual {op.gauge_residual():.2e}")
x = op.grid.nodes
print("gauge vector vs 1/(xi^2 + 1) at xi = 0, 1, 2:",
      [f"{op.gauge[np.argmin(abs(x - v))]:.5f} / {1 / (v * v + 1):.5f}" for v in (0, 1, 2)])
