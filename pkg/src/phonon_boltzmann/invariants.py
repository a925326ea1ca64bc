"""Collisional invariants and the two-parameter family of stationary states."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.optimize import fsolve

from .collision import CollisionKernel, MomentumGrid, WignerState, _adapted_weights
from .dispersion import DispersionError, DispersionSpec, wrap


class UndefinedResidualError(ValueError):
    """A residual was requested over an empty set of collisions."""


class CollinearBasisError(DispersionError):
    """``1`` and ``omega`` are linearly dependent on the grid."""


@dataclass
class InvariantCandidate:
    """A function psi(k), either closed form or tabulated on a 1D grid.

    Tabulated values are interpolated with the same omega-adapted two-point
    weights that the collision kernel uses at off-grid momenta, so that any
    tabulated ``a + c omega`` is reproduced exactly between nodes.  Without a
    dispersion the interpolation is periodic linear.
    """

    name: str
    func: Callable | None = None
    table: np.ndarray | None = None
    grid: MomentumGrid | None = None
    dispersion: DispersionSpec | None = None

    def __post_init__(self):
        if (self.func is None) == (self.table is None):
            raise ValueError("give exactly one of func or table")
        if self.table is not None:
            if self.grid is None or self.grid.d != 1:
                raise ValueError("a tabulated candidate needs a 1D grid")
            self.table = np.asarray(self.table, dtype=float)
            if self.table.shape != self.grid.shape:
                raise ValueError("table shape does not match the grid")
            if not np.all(np.isfinite(self.table)):
                raise ValueError("candidate must be finite on the grid")

    @classmethod
    def tabulated(cls, name, values, grid, dispersion=None):
        return cls(name, table=values, grid=grid, dispersion=dispersion)

    def __call__(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        if self.func is not None:
            return np.asarray(self.func(k), dtype=float) * np.ones_like(k)
        g = self.grid
        if self.dispersion is not None:
            left, right, wl, wr = _adapted_weights(g, self.dispersion, k)
        else:
            left, frac = g.locate(k)
            right = (left + 1) % g.N if g.domain == "torus" else np.minimum(left + 1, g.N - 1)
            wl, wr = 1.0 - frac, frac
        return wl * self.table[left] + wr * self.table[right]

    def scale(self, k_grid) -> float:
        m = float(np.max(np.abs(self(k_grid))))
        return m if m > 0 else 1.0


def pair_invariant_residual(psi: InvariantCandidate, kernel: CollisionKernel) -> float:
    """max over pair entries of |psi1 + psi2 - psi3 - psi4| / max|psi|."""
    if kernel.is_empty:
        raise UndefinedResidualError("kernel has no collision entries")
    sel = kernel.channel == 0
    if not np.any(sel):
        raise UndefinedResidualError("kernel has no pair entries")
    ax = kernel.grid.axis
    k1, k2 = ax[kernel.i1[sel]], ax[kernel.i2[sel]]
    r = psi(k1) + psi(k2) - psi(kernel.k3[sel]) - psi(kernel.k4[sel])
    return float(np.max(np.abs(r)) / psi.scale(ax))


def merger_invariant_residual(psi: InvariantCandidate, spec: DispersionSpec, manifold_samples
                              ) -> float | str:
    """max over merger samples of |psi1 + psi2 + psi3 - psi(k1+k2+k3)| / max|psi|.

    Returns the string ``"manifold empty"`` when there are no samples.
    """
    ks = np.asarray(manifold_samples, dtype=float)
    if ks.size == 0:
        return "manifold empty"
    k1, k2, k3 = ks[:, 0], ks[:, 1], ks[:, 2]
    total = k1 + k2 + k3
    if spec.domain == "torus":
        total = wrap(total)
    r = psi(k1) + psi(k2) + psi(k3) - psi(total)
    if r.ndim > 1:
        r = r.reshape(r.shape[0], -1).max(axis=1)
    scale = max(float(np.max(np.abs(psi(ks.reshape(-1, *ks.shape[2:]))))), 1e-300)
    return float(np.max(np.abs(r)) / scale)


@dataclass
class InvariantFit:
    a: float
    c: float
    residual: float


def fit_invariant(psi, grid: MomentumGrid, spec: DispersionSpec) -> InvariantFit:
    """Least-squares projection of psi onto span{1, omega} over the grid points.

    ``psi`` may be an :class:`InvariantCandidate`, a callable or an array of
    grid values.  ``residual`` is the relative L2 misfit.
    """
    k = grid.points()
    values = psi(k) if callable(psi) else np.asarray(psi, dtype=float)
    values = values.reshape(-1)
    w = spec.omega(k).reshape(-1)
    A = np.stack([np.ones_like(w), w], axis=1)
    # columns are collinear when omega has no spread
    if np.ptp(w) <= 1e-12 * max(1.0, float(np.max(np.abs(w)))):
        raise CollinearBasisError("omega is constant on the grid; {1, omega} is degenerate")
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    norm = np.linalg.norm(values)
    res = np.linalg.norm(A @ coef - values) / (norm if norm > 0 else 1.0)
    return InvariantFit(float(coef[0]), float(coef[1]), float(res))


def stationary_from_invariant(a: float, c: float, grid: MomentumGrid, spec: DispersionSpec
                              ) -> WignerState:
    """W(k) = 1 / (a + c omega(k)); the invariant must be positive everywhere."""
    psi = a + c * spec.omega(grid.points())
    if np.any(psi <= 0):
        raise ValueError(f"a + c*omega is not positive on the grid (min {float(psi.min()):.3g})")
    return WignerState(grid, 1.0 / psi)


def admissible_range(c: float, grid: MomentumGrid, spec: DispersionSpec) -> float:
    """Smallest ``a`` with ``a + c omega > 0`` on the grid (exclusive bound)."""
    return float(-np.min(c * spec.omega(grid.points())))


def solve_stationary_parameters(grid: MomentumGrid, spec: DispersionSpec, number: float,
                                energy: float, guess=None) -> tuple[float, float]:
    """Find (a, c) such that W = 1/(a + c omega) has the given number and energy.

    A linear psi is positive on the grid iff it is positive at the extreme
    frequencies, so the unknowns are ``log psi(omega_min)`` and
    ``log psi(omega_max)``; every iterate is admissible and ``c`` may take
    either sign.  Solved with ``scipy.optimize.fsolve``.
    """
    w = spec.omega(grid.points()).reshape(-1)
    h = grid.weight
    lo, hi = float(w.min()), float(w.max())
    if hi - lo <= 1e-12 * max(1.0, hi):
        raise CollinearBasisError("omega is constant on the grid; (a, c) is not identifiable")

    def unpack(x):
        p, q = np.exp(x)
        c = (q - p) / (hi - lo)
        return p - c * lo, c

    def eqs(x):
        a, c = unpack(x)
        W = 1.0 / (a + c * w)
        return [np.sum(W) * h / number - 1.0, np.sum(w * W) * h / energy - 1.0]

    if guess is None:
        x0 = np.log([1.0 / number] * 2)
    else:
        a0, c0 = guess
        x0 = np.log([a0 + c0 * lo, a0 + c0 * hi])
    sol, info, ier, msg = fsolve(eqs, x0, full_output=True, xtol=1e-14)
    if np.max(np.abs(eqs(sol))) > 1e-10:
        raise RuntimeError(f"moment solve failed: {msg}")
    return unpack(sol)


def audit_record(candidate: str, fit: InvariantFit | None = None,
                 max_pair_residual: float | None = None, merger_manifold="empty") -> dict:
    """Record in the serialized layout ``{candidate, a, c, residual, max_pair_residual,
    merger_manifold}``."""
    return {"candidate": candidate,
            "a": None if fit is None else fit.a,
            "c": None if fit is None else fit.c,
            "residual": None if fit is None else fit.residual,
            "max_pair_residual": max_pair_residual,
            "merger_manifold": merger_manifold}


def to_json(records) -> str:
    return json.dumps(records, indent=2, sort_keys=True,
                      default=lambda o: asdict(o) if isinstance(o, InvariantFit) else float(o))
