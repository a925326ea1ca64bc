"""
Relaxation of a phonon spectrum
===============================

A non-equilibrium spectrum on the optical chain relaxes under the
four-phonon collision operator.  Energy and phonon number stay fixed,
entropy grows, and the limit is ``1/(a + c omega)`` with ``(a, c)`` fixed
by the two conserved quantities.
"""

import numpy as np

from phonon_boltzmann import (MomentumGrid, WignerState, build_kernel_1d, entropy_production,
                              equilibrium_wigner, fit_invariant, optical_nearest_neighbor,
                              solve_homogeneous, solve_stationary_parameters)

spec = optical_nearest_neighbor(omega0=1.0, dim=1)
grid = MomentumGrid(1, 64)
kernel = build_kernel_1d(grid, spec)
print("collision entries:", kernel.diagnostics["entries"])

###############################################################################
# Start from the thermal spectrum with a bump in the middle of the zone.

k = grid.axis
W0 = WignerState(grid, equilibrium_wigner(1.0, grid, spec).values * (1 + 0.5 * np.cos(4 * np.pi * k)))
print("initial entropy production: %.4g" % entropy_production(kernel, W0))

traj = solve_homogeneous(kernel, W0, T=400.0, dt=0.1, record_every=200)
for t, S, E, N in zip(traj.times, traj.entropy, traj.energy, traj.number):
    print(f"t={t:6.1f}  S={S:+.8f}  E={E:.12f}  N={N:.12f}")

###############################################################################
# The relaxed spectrum against the moment-matched stationary state.

a, c = solve_stationary_parameters(grid, spec, traj.number[0], traj.energy[0])
target = 1 / (a + c * spec.omega(k))
Wf = traj.final.values
print(f"a={a:.6f}  c={c:.6f}")
print("relative L2 distance:", np.linalg.norm(Wf - target) / np.linalg.norm(target))
print("1/W fit onto span{1, omega}:", fit_invariant(1 / Wf, grid, spec))

try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.5))
    for t, s in zip(traj.times, traj.states):
        ax[0].plot(k, s.values, lw=0.8, label=f"t={t:g}")
    ax[0].plot(k, target, "k--", label="1/(a+c omega)")
    ax[0].set_xlabel("k")
    ax[0].legend(fontsize=7)
    ax[1].plot(traj.times, traj.entropy, "o-")
    ax[1].set_xlabel("t")
    ax[1].set_ylabel("S")
    fig.tight_layout()
    fig.savefig("relaxation.png", dpi=120)
