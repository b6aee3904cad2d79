"""Blowup fractions: perturbed profile data, then zero data under strong noise.

Run: python3 demos/ensemble_and_sweep.py   (about a minute on one core)
The fractions measure this discretization; they are not predictions.
"""
from wmblowup.core import RadialGrid
from wmblowup.ensemble import EnsembleConfig, InitialData, amplitude_sweep, run_ensemble
from wmblowup.solver import SolverConfig

grid = RadialGrid.from_spacing(4.0, 1 / 128)
cfg = EnsembleConfig(SolverConfig(grid), paths=40, run_seed=1, amplitude=0.01,
                     initial=InitialData("self_similar_perturbed", eps=1e-3))
res = run_ensemble(cfg)
lo, hi = res.interval
print(f"perturbed profile: {res.blowups}/{len(res.records)} blow up, 95% interval [{lo:.3f}, {hi:.3f}]")
print(f"  fitted blowup times in [{res.T_hat_hist['min']:.4f}, {res.T_hat_hist['max']:.4f}]")

zero = EnsembleConfig(SolverConfig(grid), paths=20, run_seed=2, initial=InitialData("zero"))
for row in amplitude_sweep(zero, [0.0, 800.0, 1600.0, 3200.0]):
    print(f"zero data, c = {row['amplitude']:6.0f}: fraction {row['fraction']:.2f}")
