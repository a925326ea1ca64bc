"""
Which functions are collisional invariants?
===========================================

On the discrete collision manifold of a chain only ``1`` and ``omega`` are
conserved in every pair collision.  We check a few candidates, look at the
null space of the invariance map directly, and see what changes when the
dispersion admits three-into-one mergers.
"""

import numpy as np

from phonon_boltzmann import (InvariantCandidate, MomentumGrid, build_custom_dispersion,
                              build_kernel_1d, fit_invariant, fpu_chain,
                              merger_invariant_residual, pair_invariant_residual,
                              sample_merger_manifold)

spec = fpu_chain()
grid = MomentumGrid(1, 64)
kernel = build_kernel_1d(grid, spec)

candidates = {
    "1": lambda k: np.ones_like(k),
    "omega": spec.omega,
    "omega^2": lambda k: spec.omega(k) ** 2,
    "sin(2 pi k)": lambda k: np.sin(2 * np.pi * k),
}
for name, f in candidates.items():
    psi = InvariantCandidate(name, func=f)
    fit = fit_invariant(psi, grid, spec)
    print(f"{name:12s} pair residual {pair_invariant_residual(psi, kernel):.3e}   "
          f"fit a={fit.a:+.4f} c={fit.c:+.4f} residual={fit.residual:.3e}")

###############################################################################
# The same statement as linear algebra: the map psi -> psi1+psi2-psi3-psi4 over
# all kernel entries has a two-dimensional null space once the grid is fine
# enough.  Very coarse grids have too few resonant quadruples and pick up
# spurious invariants.


def null_dimension(kern):
    n, N = kern.size, kern.grid.N
    A = np.zeros((n, N))
    e = np.arange(n)
    np.add.at(A, (e, kern.i1), 1.0)
    np.add.at(A, (e, kern.i2), 1.0)
    for name in "34":
        (left, right), (wl, wr) = kern._idx[name], kern._w[name]
        np.add.at(A, (e, left), -wl)
        np.add.at(A, (e, right), -wr)
    sv = np.linalg.svd(A, compute_uv=False)
    return int(np.sum(sv < 1e-10 * sv[0]))


optical = build_custom_dispersion({0: 3.0, 1: -1.0, -1: -1.0})
for N in (16, 32, 64):
    print(f"N={N:3d}  invariants on the discrete manifold:",
          null_dimension(build_kernel_1d(MomentumGrid(1, N), optical)))

###############################################################################
# A dispersion that is flat near k=0 and steep near k=1/4 lets three phonons
# merge into one.  Constants then fail the merger equation, so only omega
# survives.

merging = build_custom_dispersion({0: 1.51, 1: -1.0, -1: -1.0, 2: 0.25, -2: 0.25})
samples = sample_merger_manifold(merging, 200_000, seed=1, tol=1e-3)
print("merger samples:", len(samples))
for name, f in (("1", np.ones_like), ("omega", merging.omega)):
    r = merger_invariant_residual(InvariantCandidate(name, func=f), merging, samples)
    print(f"{name:6s} merger residual {r:.3e}")
