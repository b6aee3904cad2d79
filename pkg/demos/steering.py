"""Steer a Gaussian bump into a ring and check the endpoint by re-solving.

Run: python3 demos/steering.py
"""
import numpy as np

from wmblowup.control import SteeringProblem, verify_steering
from wmblowup.core import RadialGrid, StatePair, modal_decompose
from wmblowup.solver import SolverConfig

grid = RadialGrid.from_spacing(4.0, 1 / 128)
r = grid.nodes
start = StatePair(0.1 * np.exp(-r**2), 0 * r)
target = StatePair(0.1 * np.exp(-(r**2 - 1) ** 2), 0 * r)

rep = verify_steering(SteeringProblem(start, target, T1=1.0), modal_decompose(grid, 5),
                      SolverConfig(grid))
print(f"endpoint error {rep['endpoint_sup']:.2e} in u, {rep['endpoint_sup_hat']:.2e} in u_t")
for row in rep["continuity"]:
    print(f"  shift {row['size']:.0e}: data response {row['u0_shift']:.2e} "
          f"(halving ratio {row['u0_halving_ratio']:.2f}), forcing response {row['z_shift']:.2e}")
