"""
The collision operator in three dimensions
==========================================

In three dimensions the energy shell is smeared by a Gaussian of width
``epsilon`` and the momentum sums become circular convolutions evaluated
with FFTs.  At the thermal spectrum the operator vanishes only as
``epsilon`` goes to zero, so the residual shrinks under joint refinement
of the grid and the width.
"""

import time

import numpy as np

from phonon_boltzmann import (MomentumGrid, default_epsilon, evaluate_collision_3d_mollified,
                              optical_nearest_neighbor, scan_merger_kinematics)

spec = optical_nearest_neighbor(1.0, 3)

rep = scan_merger_kinematics(spec, 1_000_000, seed=0)
print(f"min of omega1+omega2+omega3-omega(k1+k2+k3) over 1e6 triples: {rep.min_residual:.4f}")

for N in (6, 12, 24):
    grid = MomentumGrid(3, N)
    W = 1 / spec.omega(grid.points())
    t0 = time.perf_counter()
    C = evaluate_collision_3d_mollified(grid, spec, W)
    tail = evaluate_collision_3d_mollified(grid, spec, W, channels="merger")
    print(f"N={N:2d} eps={default_epsilon(spec, N):.3f}  max|C(W_beta)|={np.max(np.abs(C)):.3e}"
          f"  merger part={np.max(np.abs(tail)):.1e}  ({time.perf_counter() - t0:.2f}s)")
