"""Follow one deterministic and one noisy run into blowup.

Run: python3 demos/blowup_run.py
"""
from wmblowup.core import RadialGrid, StatePair, modal_decompose
from wmblowup.noise import NoiseModel
from wmblowup.profiles import u_T
from wmblowup.solver import SolverConfig, solve

grid = RadialGrid.from_spacing(4.0, 1 / 256)
cfg = SolverConfig(grid)
data = StatePair(*u_T(0.0, grid.nodes))

_, rep = solve(cfg, data)
print(f"noise off: exit at t = {rep.t_exit:.4f}, fitted blowup time {rep.T_hat:.6f}")
for t, err in rep.profile_err_history:
    print(f"  t = {t:.4f}  distance to the rescaled profile {err:.2e}")

model = NoiseModel(modal_decompose(grid, 5), amplitude=0.05)
_, rep = solve(cfg, data, seed=2024, model=model)
print(f"noise c = 0.05: exit at t = {rep.t_exit:.4f}, fitted blowup time {rep.T_hat:.6f}")
