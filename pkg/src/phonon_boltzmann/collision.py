"""Four-phonon collision operator on a uniform momentum grid.

In one dimension the energy delta is resolved exactly: each pair of grid
momenta ``(k1, k2)`` is combined with every root ``k3`` of the energy
constraint, ``k4`` follows from momentum conservation, and the resulting
quadruple is stored once.  Its rate is scattered to all four participants,
so that the discrete number and energy balances hold to round-off.

Off-grid momenta are handled with omega-adapted two-point weights: the
unit mass at ``k3`` is split between the neighbouring nodes with weights
that reproduce both ``1`` and ``omega(k3)``.  The same weights interpolate
``1/W``, which makes every ``W = 1/(a + c omega)`` an exact discrete
equilibrium.

In three dimensions the energy delta is replaced by a Gaussian of width
``epsilon`` and the momentum delta is handled exactly on the grid by FFT
convolution.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .dispersion import (DEFAULT_SCAN_POINTS, DEGENERACY_FLOOR, NLS_QUADRATIC,
                         DispersionError, DispersionSpec, _SCAN_OFFSET, level_crossings,
                         wrap)

KERNEL_CACHE_VERSION = 1

PAIR = "pair"
MERGER = "merger"
FORBIDDEN = "forbidden"
# sign vectors of (k1, k2, k3) relative to the output mode, per channel
CHANNEL_SIGMAS = {
    PAIR: [(1, -1, -1), (-1, 1, -1), (-1, -1, 1)],
    MERGER: [(1, 1, -1), (1, -1, 1), (-1, 1, 1), (-1, -1, -1)],
    FORBIDDEN: [(1, 1, 1)],
}
# participant signs: +1 for the two/three "incoming" modes
_PARTICIPANT_SIGNS = {PAIR: (1, 1, -1, -1), MERGER: (1, 1, 1, -1)}
# 12 pi times the number of sign vectors sharing one physical process,
# divided by the size of its participant symmetry group
_CHANNEL_PREFACTOR = {PAIR: 12 * np.pi * 3 / 4, MERGER: 12 * np.pi}

ONSITE_QUARTIC = "onsite_quartic"
FPU_ALPHA = "fpu_alpha"
FPU_BETA = "fpu_beta"
POTENTIALS = (ONSITE_QUARTIC, FPU_ALPHA, FPU_BETA)


class CostGuardError(RuntimeError):
    """Requested evaluation exceeds the operation budget."""


# ---------------------------------------------------------------------------
# grids and states

@dataclass(frozen=True)
class MomentumGrid:
    """Uniform grid of ``N`` points per axis.

    Torus grids hold ``k_i = -1/2 + i/N``; continuum grids hold
    ``k_i = (i - N/2) * 2 cutoff / N``.  Both are closed under addition of
    momenta (modulo 1 on the torus), which is what lets the momentum delta be
    resolved exactly.
    """

    d: int
    N: int
    domain: str = "torus"
    cutoff: float = 0.5

    def __post_init__(self):
        if self.N < 4 or self.N % 2:
            raise ValueError("grid size N must be even and >= 4")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if self.domain not in ("torus", "continuum"):
            raise ValueError(f"unknown grid domain {self.domain!r}")

    @classmethod
    def for_spec(cls, spec: DispersionSpec, N: int) -> "MomentumGrid":
        if spec.is_torus:
            return cls(spec.dim, N)
        return cls(spec.dim, N, "continuum", float(spec.cutoff))

    @property
    def spacing(self) -> float:
        return 1.0 / self.N if self.domain == "torus" else 2.0 * self.cutoff / self.N

    @property
    def weight(self) -> float:
        return self.spacing ** self.d

    @property
    def axis(self) -> np.ndarray:
        if self.domain == "torus":
            return -0.5 + np.arange(self.N) / self.N
        return (np.arange(self.N) - self.N // 2) * self.spacing

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    def points(self) -> np.ndarray:
        """Grid momenta, shape ``(N,)`` in 1D and ``(N,)*d + (d,)`` otherwise."""
        ax = self.axis
        if self.d == 1:
            return ax
        return np.stack(np.meshgrid(*([ax] * self.d), indexing="ij"), axis=-1)

    def locate(self, k: np.ndarray):
        """Left neighbour index and fractional offset of 1D momenta ``k``."""
        if self.domain == "torus":
            u = (wrap(k) + 0.5) * self.N
        else:
            u = k / self.spacing + self.N // 2
        left = np.floor(u).astype(np.int64)
        frac = u - left
        if self.domain == "torus":
            left %= self.N
        return left, frac


@dataclass
class WignerState:
    """Occupation W(k) sampled on a :class:`MomentumGrid`."""

    grid: MomentumGrid
    values: np.ndarray
    stderr: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Wigner function must be finite")
        if np.any(self.values < 0):
            raise ValueError("Wigner function must be nonnegative")

    def integrate(self, f=None) -> float:
        v = self.values if f is None else self.values * f
        return float(np.sum(v) * self.grid.weight)


# ---------------------------------------------------------------------------
# 1D kernel

@dataclass
class CollisionKernel:
    """Root-resolved collision quadruples for a 1D dispersion.

    Each entry ``e`` is a quadruple ``(k1, k2, k3, k4)`` with ``k1, k2`` on
    the grid (indices ``i1, i2``) and ``k3, k4`` off grid.  ``weight`` holds
    ``h^2 / (16 omega1 omega2 omega3 omega4 |F'(k3)|)`` times the vertex
    factor of the potential.
    """

    grid: MomentumGrid
    dispersion: DispersionSpec
    tol: float
    i1: np.ndarray
    i2: np.ndarray
    k3: np.ndarray
    k4: np.ndarray
    weight: np.ndarray
    channel: np.ndarray  # 0 = pair, 1 = merger
    residual: np.ndarray
    potential: str = ONSITE_QUARTIC
    rate_scale: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self._prepare()

    @property
    def size(self) -> int:
        return int(self.weight.size)

    @property
    def is_empty(self) -> bool:
        return self.size == 0

    @property
    def pair_only(self) -> bool:
        return not np.any(self.channel == 1)

    @property
    def sigma(self) -> np.ndarray:
        """Representative sign vector per entry (output mode = k1)."""
        table = np.array([CHANNEL_SIGMAS[PAIR][0], CHANNEL_SIGMAS[MERGER][0]])
        return table[self.channel]

    def _prepare(self):
        grid, spec = self.grid, self.dispersion
        n = self.size
        self._idx = {}
        self._w = {}
        for name, k in (("3", self.k3), ("4", self.k4)):
            left, right, wl, wr = _adapted_weights(grid, spec, k)
            self._idx[name] = (left, right)
            self._w[name] = (wl, wr)
        signs = np.array([_PARTICIPANT_SIGNS[PAIR], _PARTICIPANT_SIGNS[MERGER]])[self.channel] \
            if n else np.zeros((0, 4))
        pref = np.where(self.channel == 1, _CHANNEL_PREFACTOR[MERGER], _CHANNEL_PREFACTOR[PAIR])
        self._coef = self.rate_scale * pref * self.weight / grid.spacing
        rows, cols, vals = [], [], []
        e = np.arange(n)
        (l3, r3), (l4, r4) = self._idx["3"], self._idx["4"]
        (wl3, wr3), (wl4, wr4) = self._w["3"], self._w["4"]
        for node, frac, s in ((self.i1, 1.0, signs[:, 0]), (self.i2, 1.0, signs[:, 1]),
                              (l3, wl3, signs[:, 2]), (r3, wr3, signs[:, 2]),
                              (l4, wl4, signs[:, 3]), (r4, wr4, signs[:, 3])):
            rows.append(e)
            cols.append(node)
            vals.append(self._coef * s * frac)
        if n:
            self._scatter = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(n, grid.N))
        else:
            self._scatter = sp.csr_matrix((0, grid.N))
        self._signs = signs

    def interpolate(self, W: np.ndarray):
        """Values of W at k3 and k4 by omega-adapted harmonic interpolation."""
        out = []
        for name in ("3", "4"):
            (left, right), (wl, wr) = self._idx[name], self._w[name]
            Wl, Wr = W[..., left], W[..., right]
            den = wl * Wr + wr * Wl
            num = Wl * Wr
            out.append(np.divide(num, den, out=np.zeros_like(num), where=den > 0))
        return out

    def bracket(self, W: np.ndarray) -> np.ndarray:
        """Per-entry ``W1 W2 W3 W4 (1/W1 + 1/W2 +- 1/W3 - 1/W4)``, written division-free.

        The sign of the ``1/W3`` term is ``-`` for pair collisions and ``+``
        for mergers.
        """
        W1, W2 = W[..., self.i1], W[..., self.i2]
        W3, W4 = self.interpolate(W)
        s3 = self._signs[:, 2] if self.size else np.zeros(0)
        return W3 * W4 * (W1 + W2) + W1 * W2 * (s3 * W4 - W3)

    def to_cache(self, path: str | os.PathLike):
        np.savez(path, version=KERNEL_CACHE_VERSION, key=self.cache_key(),
                 i1=self.i1, i2=self.i2, k3=self.k3, k4=self.k4, weight=self.weight,
                 channel=self.channel, residual=self.residual,
                 meta=json.dumps({"potential": self.potential, "tol": self.tol,
                                  "N": self.grid.N, "diagnostics": self.diagnostics}))

    def cache_key(self) -> str:
        return kernel_cache_key(self.dispersion, self.grid.N, self.tol, self.potential)

    def report(self) -> dict:
        return dict(self.diagnostics)


def kernel_cache_key(spec: DispersionSpec, N: int, tol: float, potential: str) -> str:
    raw = json.dumps({"dispersion": spec.to_config(), "N": N, "tol": tol,
                      "potential": potential, "version": KERNEL_CACHE_VERSION},
                     sort_keys=True)
    return hashlib.sha256(raw.encode()).hexdigest()[:16]


def _adapted_weights(grid: MomentumGrid, spec: DispersionSpec, k: np.ndarray,
                     return_fallback: bool = False):
    """Two-point weights at off-grid ``k`` reproducing 1 and omega exactly.

    Inside a cell where omega is not monotone (an interior extremum) no
    positive two-point rule reproduces omega; such points fall back to
    linear weights and lose exact energy bookkeeping.  With
    ``return_fallback`` the boolean mask of those points is also returned.
    """
    left, frac = grid.locate(k)
    if grid.domain == "torus":
        right = (left + 1) % grid.N
    else:
        right = left + 1
    ax = grid.axis
    wgrid = spec.omega(ax)
    wl_, wr_ = wgrid[left], wgrid[np.minimum(right, grid.N - 1)]
    wk = spec.omega(k)
    span = wr_ - wl_
    ok = np.abs(span) > 1e-13 * np.maximum(1.0, np.abs(wk))
    wr = np.divide(wk - wl_, span, out=frac.copy(), where=ok)
    bad = (wr < -1e-12) | (wr > 1 + 1e-12) | ~ok
    # non-monotone omega between nodes: fall back to linear weights
    wr = np.where(bad, frac, np.clip(wr, 0.0, 1.0))
    if return_fallback:
        return left, right, 1.0 - wr, wr, bad
    return left, right, 1.0 - wr, wr


def _vertex_factor(potential: str, *ks) -> np.ndarray | float:
    if potential == FPU_BETA:
        out = 1.0
        for k in ks:
            out = out * 4.0 * np.sin(np.pi * k) ** 2
        return out
    return 1.0


def build_kernel_1d(grid: MomentumGrid, spec: DispersionSpec, tol: float = 1e-12,
                    potential: str = ONSITE_QUARTIC, scan_points: int = DEFAULT_SCAN_POINTS,
                    degeneracy_floor: float = DEGENERACY_FLOOR, rate_scale: float = 1.0,
                    channels: tuple = (PAIR, MERGER, FORBIDDEN)) -> CollisionKernel:
    """Enumerate the 1D collision manifold on ``grid``.

    For every ordered pair of grid momenta the remaining momentum ``k3`` is
    found by scanning and bisection along the energy shell of each channel.
    Exchange roots (``k3`` in ``{k1, k2}``) carry a vanishing bracket and
    are dropped; other roots with ``|F'| < degeneracy_floor`` are excised and
    counted in ``kernel.diagnostics``.

    ``potential="fpu_alpha"`` (cubic bonds) has no quartic collision
    channel and yields an empty kernel; ``"fpu_beta"`` multiplies the
    weights by the bond vertex factor ``prod_j 4 sin^2(pi k_j)``.
    """
    if grid.d != 1 or spec.dim != 1:
        raise DispersionError("build_kernel_1d needs a 1D grid and dispersion")
    if potential not in POTENTIALS:
        raise ValueError(f"unknown potential {potential!r}")
    N, h = grid.N, grid.spacing
    ax = grid.axis
    w_grid = spec.omega(ax)
    diag = {"entries": {PAIR: 0, MERGER: 0, FORBIDDEN: 0},
            "exchange_roots": 0, "near_degenerate_excised": 0, "unresolved_excised": 0,
            "zero_frequency_excised": 0, "out_of_domain_excised": 0,
            "potential": potential, "N": N, "tol": tol, "scan_points": scan_points}
    empty = dict(i1=np.zeros(0, np.int64), i2=np.zeros(0, np.int64), k3=np.zeros(0),
                 k4=np.zeros(0), weight=np.zeros(0), channel=np.zeros(0, np.int64),
                 residual=np.zeros(0))
    if potential == FPU_ALPHA:
        diag["note"] = "cubic bond potential: no quartic collision channels"
        return CollisionKernel(grid, spec, tol, potential=potential, rate_scale=rate_scale,
                               diagnostics=diag, **empty)

    if grid.domain == "torus":
        scan = -0.5 + (np.arange(scan_points) + _SCAN_OFFSET) / scan_points
        periodic = True
    else:
        step = 2 * grid.cutoff / scan_points
        scan = -grid.cutoff + (np.arange(scan_points) + _SCAN_OFFSET) * step
        periodic = False
    ex_eps = max(1e-9, 1e-6 / scan_points)

    ii = np.arange(N)
    parts = {k: [] for k in empty}
    if grid.domain == "torus":
        groups = [(m, ii, (m - ii) % N) for m in range(N)]
    else:
        groups = []
        for m in range(2 * N - 1):
            i = ii[(m - ii >= 0) & (m - ii < N)]
            groups.append((m, i, m - i))

    for m, ia, ib in groups:
        s = ax[ia[0]] + ax[ib[0]]
        if grid.domain == "torus":
            s = float(wrap(s))
        E = w_grid[ia] + w_grid[ib]
        for chan in channels:
            if chan == PAIR:
                func = lambda c: spec.omega(c) + spec.omega(s - c)
                lev, c = level_crossings(func, E, scan, periodic)
                d = s - c
                target = E[lev]
            elif chan == MERGER:
                func = lambda c: spec.omega(c) - spec.omega(s + c)
                lev, c = level_crossings(func, -E, scan, periodic)
                d = s + c
                target = -E[lev]
            else:
                func = lambda c: spec.omega(c) + spec.omega(-s - c)
                lev, c = level_crossings(func, -E, scan, periodic)
                if lev.size:
                    raise AssertionError("all-plus channel admitted a root")
                continue
            if lev.size == 0:
                continue
            if periodic:
                d = wrap(d)
            a, b = ax[ia[lev]], ax[ib[lev]]
            res = np.abs(func(c) - target)
            if chan == PAIR:
                exch = (np.abs(wrap(c - a)) <= ex_eps) | (np.abs(wrap(c - b)) <= ex_eps) \
                    if periodic else (np.abs(c - a) <= ex_eps) | (np.abs(c - b) <= ex_eps)
                jac = np.abs(_deriv(spec, c) - _deriv(spec, d))
            else:
                exch = np.zeros(c.shape, bool)
                jac = np.abs(_deriv(spec, c) - _deriv(spec, d))
            diag["exchange_roots"] += int(exch.sum())
            keep = ~exch
            near = keep & (jac < degeneracy_floor)
            diag["near_degenerate_excised"] += int(near.sum())
            keep &= ~near
            unresolved = keep & (res > tol)
            diag["unresolved_excised"] += int(unresolved.sum())
            keep &= ~unresolved
            if not periodic:
                inside = (np.abs(d) < grid.cutoff - grid.spacing) & \
                         (np.abs(c) < grid.cutoff - grid.spacing)
                diag["out_of_domain_excised"] += int((keep & ~inside).sum())
                keep &= inside
            wc, wd = spec.omega(c), spec.omega(d)
            prod = w_grid[ia[lev]] * w_grid[ib[lev]] * wc * wd
            zero = keep & (prod <= 1e-14)
            diag["zero_frequency_excised"] += int(zero.sum())
            keep &= ~zero
            if not np.any(keep):
                continue
            sel = np.nonzero(keep)[0]
            weight = h * h / (16.0 * prod[sel] * jac[sel])
            weight = weight * _vertex_factor(potential, a[sel], b[sel], c[sel], d[sel])
            parts["i1"].append(ia[lev][sel])
            parts["i2"].append(ib[lev][sel])
            parts["k3"].append(c[sel])
            parts["k4"].append(d[sel])
            parts["weight"].append(weight)
            parts["channel"].append(np.full(sel.size, 0 if chan == PAIR else 1))
            parts["residual"].append(res[sel])
            diag["entries"][chan] += int(sel.size)

    arrays = {k: (np.concatenate(v) if v else empty[k]) for k, v in parts.items()}
    fallback = 0
    for k in (arrays["k3"], arrays["k4"]):
        if k.size:
            fallback += int(_adapted_weights(grid, spec, k, return_fallback=True)[4].sum())
    diag["interpolation_fallback"] = fallback
    if fallback:
        warnings.warn(f"{fallback} off-grid momenta sit in cells where omega is not monotone; "
                      "energy is conserved there only to interpolation accuracy")
    return CollisionKernel(grid, spec, tol, potential=potential, rate_scale=rate_scale,
                           diagnostics=diag, **arrays)


def _deriv(spec: DispersionSpec, k: np.ndarray) -> np.ndarray:
    w = spec.omega(k)
    out = np.zeros_like(np.asarray(k, dtype=float))
    ok = w > 1e-12
    if np.any(ok):
        out[ok] = spec.domega(np.asarray(k)[ok])
    return out


def load_or_build_kernel(grid: MomentumGrid, spec: DispersionSpec, cache_dir, tol=1e-12,
                         potential=ONSITE_QUARTIC, **kw) -> CollisionKernel:
    """Return a cached kernel when the cache key and version match, else build and store."""
    cache_dir = Path(cache_dir)
    key = kernel_cache_key(spec, grid.N, tol, potential)
    path = cache_dir / f"kernel_{key}.npz"
    if path.exists():
        with np.load(path) as data:
            if int(data["version"]) == KERNEL_CACHE_VERSION and str(data["key"]) == key:
                meta = json.loads(str(data["meta"]))
                diag = dict(meta["diagnostics"], cache="hit")
                return CollisionKernel(grid, spec, tol, data["i1"], data["i2"], data["k3"],
                                       data["k4"], data["weight"], data["channel"],
                                       data["residual"], potential=potential,
                                       rate_scale=kw.get("rate_scale", 1.0), diagnostics=diag)
    kernel = build_kernel_1d(grid, spec, tol, potential=potential, **kw)
    cache_dir.mkdir(parents=True, exist_ok=True)
    kernel.to_cache(path)
    kernel.diagnostics["cache"] = "miss"
    return kernel


# ---------------------------------------------------------------------------
# evaluation

def evaluate_collision(kernel: CollisionKernel, W) -> np.ndarray:
    """C(W) on the kernel's grid.  ``W`` may carry leading batch axes."""
    values = W.values if isinstance(W, WignerState) else np.asarray(W, dtype=float)
    if values.shape[-1] != kernel.grid.N:
        raise ValueError("W is not sampled on the kernel grid")
    if kernel.is_empty:
        return np.zeros_like(values)
    G = kernel.bracket(values)
    flat = G.reshape(-1, kernel.size)
    out = (kernel._scatter.T @ flat.T).T
    return out.reshape(values.shape)


def collision_parts(kernel: CollisionKernel, W) -> dict:
    """Gain, loss and |loss| accumulations of C(W) at every grid point.

    The gain at a participant is the product of the other three
    occupations; the loss is the remainder of its bracket and has no
    definite sign.  ``gain + loss`` equals :func:`evaluate_collision`.
    """
    values = W.values if isinstance(W, WignerState) else np.asarray(W, dtype=float)
    N = kernel.grid.N
    out = {"gain": np.zeros(N), "loss": np.zeros(N), "loss_abs": np.zeros(N)}
    if kernel.is_empty:
        return out
    W1, W2 = values[kernel.i1], values[kernel.i2]
    W3, W4 = kernel.interpolate(values)
    s = kernel._signs
    G = kernel.bracket(values)
    # participant sign times G, split into product-of-others and remainder
    others = [W2 * W3 * W4, W1 * W3 * W4, W1 * W2 * W4, W1 * W2 * W3]
    (l3, r3), (l4, r4) = kernel._idx["3"], kernel._idx["4"]
    (wl3, wr3), (wl4, wr4) = kernel._w["3"], kernel._w["4"]
    targets = [((kernel.i1, 1.0),), ((kernel.i2, 1.0),), ((l3, wl3), (r3, wr3)),
               ((l4, wl4), (r4, wr4))]
    for p in range(4):
        total = kernel._coef * s[:, p] * G
        gain = kernel._coef * others[p]
        loss = total - gain
        for node, frac in targets[p]:
            out["gain"] += np.bincount(node, gain * frac, minlength=N)
            out["loss"] += np.bincount(node, loss * frac, minlength=N)
            out["loss_abs"] += np.bincount(node, np.abs(loss * frac), minlength=N)
    return out


def entropy_production_form(kernel: CollisionKernel, W) -> float:
    """Quadratic form sum_e c_e W1W2W3W4 (1/W1 + 1/W2 -+ 1/W3 - 1/W4)^2 >= 0.

    Equals ``sum_k h C(W)(k) / W(k)`` exactly for the discrete operator.
    """
    values = W.values if isinstance(W, WignerState) else np.asarray(W, dtype=float)
    if kernel.is_empty:
        return 0.0
    W1, W2 = values[kernel.i1], values[kernel.i2]
    W3, W4 = kernel.interpolate(values)
    psi = 1.0 / values
    (l3, r3), (l4, r4) = kernel._idx["3"], kernel._idx["4"]
    (wl3, wr3), (wl4, wr4) = kernel._w["3"], kernel._w["4"]
    psi3 = wl3 * psi[l3] + wr3 * psi[r3]
    psi4 = wl4 * psi[l4] + wr4 * psi[r4]
    s3 = kernel._signs[:, 2]
    comb = psi[kernel.i1] + psi[kernel.i2] + s3 * psi3 - psi4
    # factor h: the scatter coefficients carry 1/h
    terms = kernel._coef * kernel.grid.spacing * W1 * W2 * W3 * W4 * comb ** 2
    return float(np.sum(terms))


# ---------------------------------------------------------------------------
# 3D mollified evaluation

DEFAULT_MAX_OPS = 5e9


def default_epsilon(spec: DispersionSpec, N: int) -> float:
    """Mollifier width matched to the grid: 2 max|grad omega| / N."""
    return 2.0 * spec.max_speed() / N


def gaussian_mollifier(x, epsilon: float):
    return np.exp(-0.5 * (x / epsilon) ** 2) / (epsilon * math.sqrt(2 * math.pi))


def _fft_index_order(grid: MomentumGrid) -> np.ndarray:
    # grid index i holds k = -1/2 + i/N = (i - N/2)/N; FFT slot m holds k = m/N mod 1
    return (np.arange(grid.N) + grid.N // 2) % grid.N


def _to_fft(a: np.ndarray, grid: MomentumGrid) -> np.ndarray:
    order = _fft_index_order(grid)
    out = np.empty_like(a)
    idx = np.ix_(*([order] * grid.d))
    out[idx] = a
    return out


def _from_fft(a: np.ndarray, grid: MomentumGrid) -> np.ndarray:
    order = _fft_index_order(grid)
    return a[np.ix_(*([order] * grid.d))]


def _reflect(a: np.ndarray) -> np.ndarray:
    # f(-k) in FFT ordering
    out = a
    for ax in range(a.ndim):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def evaluate_collision_3d_mollified(grid: MomentumGrid, spec: DispersionSpec, W,
                                    epsilon: float | None = None,
                                    channels: str = "all", max_ops: float = DEFAULT_MAX_OPS,
                                    rate_scale: float = 1.0) -> np.ndarray:
    """C(W) with the energy delta replaced by a Gaussian of width ``epsilon``.

    The Gaussian is written as ``(2 pi)^-1 int dtau exp(i tau E - eps^2 tau^2/2)``
    so that every term factorises over the three momenta; the momentum delta
    is then an exact cyclic convolution on the grid, done by FFT.  The
    tau-integral uses the trapezoid rule with a step small enough that the
    periodic images of the Gaussian lie beyond the reachable energy range.
    Results carry an O(epsilon) + O(1/(N epsilon)) smoothing bias.

    ``channels`` selects ``"all"`` sign vectors, ``"pair"`` (two minus),
    ``"merger"`` (one or three minus) or ``"forbidden"`` (all plus).
    """
    if grid.domain != "torus" or spec.dim != grid.d:
        raise DispersionError("mollified evaluation needs a torus grid matching the dispersion")
    values = W.values if isinstance(W, WignerState) else np.asarray(W, dtype=float)
    if epsilon is None:
        epsilon = default_epsilon(spec, grid.N)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    pts = grid.points()
    om = spec.omega(pts)
    if np.min(om) <= 0:
        raise DispersionError("mollified evaluation requires omega > 0 on the grid")
    span = 4.0 * float(np.max(om))
    dtau = 2 * np.pi / (2 * span + 40 * epsilon)
    tau_max = 9.0 / epsilon
    n_tau = int(np.ceil(tau_max / dtau))
    n_pts = grid.N ** grid.d
    ops = n_tau * 8 * 6 * n_pts * max(1.0, math.log2(n_pts))
    if ops > max_ops:
        raise CostGuardError(f"estimated {ops:.3g} operations exceeds budget {max_ops:.3g}")

    sigmas = [s for name in _channel_names(channels) for s in CHANNEL_SIGMAS[name]]
    h3 = grid.weight
    Wf = _to_fft(values, grid)
    omf = _to_fft(om, grid)
    inv = 1.0 / omf
    base = {0: inv, 1: Wf * inv}  # W^m / omega for m = 0, 1
    out = np.zeros(grid.shape)
    taus = dtau * np.arange(0, n_tau + 1)
    tw = np.full(taus.size, dtau)
    tw[0] = 0.5 * dtau  # half weight at 0; negative taus via complex conjugate
    for tau, wt in zip(taus, tw):
        damp = wt * math.exp(-0.5 * (epsilon * tau) ** 2) / (2 * np.pi)
        phase = {+1: np.exp(1j * tau * omf), -1: np.exp(-1j * tau * omf)}
        spectra = {}
        for sgn in (1, -1):
            for m in (0, 1):
                f = base[m] * phase[sgn]
                if sgn < 0:
                    f = _reflect(f)  # p = sigma k  =>  f(sigma p)
                spectra[(sgn, m)] = np.fft.fftn(f)
        acc = np.zeros(grid.shape, complex)
        for s1, s2, s3 in sigmas:
            # gain: W1 W2 W3 ; loss: W (s1 W2 W3 + W1 s2 W3 + W1 W2 s3)
            gain = spectra[(s1, 1)] * spectra[(s2, 1)] * spectra[(s3, 1)]
            loss = (s1 * spectra[(s1, 0)] * spectra[(s2, 1)] * spectra[(s3, 1)]
                    + s2 * spectra[(s1, 1)] * spectra[(s2, 0)] * spectra[(s3, 1)]
                    + s3 * spectra[(s1, 1)] * spectra[(s2, 1)] * spectra[(s3, 0)])
            conv_g = np.fft.ifftn(gain)
            conv_l = np.fft.ifftn(loss)
            # convolution at p1+p2+p3 = -k
            acc += _reflect(conv_g) + Wf * _reflect(conv_l)
        term = acc * np.exp(1j * tau * omf) * inv
        out += 2.0 * damp * term.real
    scale = rate_scale * 12 * np.pi / 16.0 * h3 * h3
    return _from_fft(out, grid) * scale


def _channel_names(channels: str):
    if channels == "all":
        return (PAIR, MERGER, FORBIDDEN)
    if channels in CHANNEL_SIGMAS:
        return (channels,)
    raise ValueError(f"unknown channel selection {channels!r}")


def evaluate_collision_3d_direct(grid: MomentumGrid, spec: DispersionSpec, W,
                                 epsilon: float, channels: str = "all") -> np.ndarray:
    """Brute-force O(N^(3d)) evaluation of the mollified operator (small N only)."""
    values = W.values if isinstance(W, WignerState) else np.asarray(W, dtype=float)
    N, d = grid.N, grid.d
    idx = np.indices(grid.shape).reshape(d, -1).T
    om = spec.omega(grid.points()).reshape(-1)
    Wv = values.reshape(-1)
    n = idx.shape[0]
    strides = N ** np.arange(d - 1, -1, -1)
    half = N // 2
    sigmas = [s for name in _channel_names(channels) for s in CHANNEL_SIGMAS[name]]
    out = np.zeros(n)
    for k in range(n):
        for s1, s2, s3 in sigmas:
            # grid index i <-> momentum (i - N/2)/N; k + s1 k1 + s2 k2 + s3 k3 = 0 mod 1
            m = (idx[k] - half)[None, None, :] + s1 * (idx[:, None, :] - half) \
                + s2 * (idx[None, :, :] - half)
            i3 = ((-s3 * m) + half) % N
            j3 = i3 @ strides
            E = om[k] + s1 * om[:, None] + s2 * om[None, :] + s3 * om[j3]
            W1, W2, W3 = Wv[:, None], Wv[None, :], Wv[j3]
            br = W1 * W2 * W3 + Wv[k] * (s1 * W2 * W3 + W1 * s2 * W3 + W1 * W2 * s3)
            integrand = br * gaussian_mollifier(E, epsilon) / (om[:, None] * om[None, :] * om[j3])
            out[k] += np.sum(integrand) / om[k]
    return out.reshape(grid.shape) * 12 * np.pi / 16.0 * grid.weight ** 2


# ---------------------------------------------------------------------------
# NLS variant

def evaluate_collision_nls(grid: MomentumGrid, W, theta_hat=None, epsilon: float | None = None,
                           method: str | None = None, exclude_exchange: bool = False,
                           max_ops: float = 2e9) -> np.ndarray:
    """Collision operator of the kinetic NLS equation on a continuum grid.

    ``C(W)(k1) = 12 pi int dk2 dk3 dk4 |theta(k1-k2)|^2 2 delta(k1^2+k2^2-k3^2-k4^2)
    delta(k1+k2-k3-k4) (W2W3W4 - W1(W2W3 + W2W4 - W3W4))``.

    ``method="roots"`` (the 1D default) resolves the energy delta exactly;
    in 1D only exchange roots exist, where the bracket vanishes, so the
    result is identically zero.  ``method="mollified"`` replaces the delta
    by a Gaussian of width ``epsilon`` and sums over grid triples; momenta
    ``k4`` leaving the grid are dropped (hard cutoff).  With
    ``exclude_exchange`` the grid points with ``k3 = k1`` or ``k3 = k2`` are
    skipped.
    """
    values = W.values if isinstance(W, WignerState) else np.asarray(W, dtype=float)
    if grid.domain != "continuum":
        raise DispersionError("NLS collisions live on a continuum grid")
    if theta_hat is None:
        theta_hat = lambda q: np.ones(np.shape(q)[:-1] if grid.d > 1 else np.shape(q))
    if method is None:
        method = "roots" if grid.d == 1 else "mollified"
    if method == "roots":
        if grid.d != 1:
            raise ValueError("exact root resolution is only available in 1D")
        from .dispersion import nls_quadratic
        spec = nls_quadratic(1, grid.cutoff)
        kern = build_kernel_1d(grid, spec, channels=(PAIR,))
        if kern.is_empty:
            return np.zeros_like(values)
        return evaluate_collision(kern, values)
    if method != "mollified":
        raise ValueError(f"unknown method {method!r}")
    if epsilon is None or epsilon <= 0:
        raise ValueError("mollified NLS evaluation needs epsilon > 0")
    N, d = grid.N, grid.d
    n = N ** d
    ops = float(n) ** 3
    if ops > max_ops:
        raise CostGuardError(f"estimated {ops:.3g} operations exceeds budget {max_ops:.3g}")
    idx = np.indices(grid.shape).reshape(d, -1).T - N // 2  # integer momenta
    Wv = values.reshape(-1)
    k2sq = (idx.astype(float) * grid.spacing) ** 2
    ksq = k2sq.sum(axis=1)
    strides = N ** np.arange(d - 1, -1, -1)
    out = np.zeros(n)
    for a in range(n):
        q = idx[a] - idx  # k1 - k2 for every k2
        th = np.abs(theta_hat(q * grid.spacing if d > 1 else q[:, 0] * grid.spacing)) ** 2
        m4 = idx[a][None, None, :] + idx[:, None, :] - idx[None, :, :]  # k2, k3
        inside = np.all((m4 >= -(N // 2)) & (m4 < N // 2), axis=-1)
        j4 = np.where(inside, (m4 + N // 2) @ strides, 0)
        E = ksq[a] + ksq[:, None] - ksq[None, :] - ksq[j4]
        W2, W3, W4 = Wv[:, None], Wv[None, :], Wv[j4]
        br = W2 * W3 * W4 - Wv[a] * (W2 * W3 + W2 * W4 - W3 * W4)
        val = 2.0 * gaussian_mollifier(E, epsilon) * br * th[:, None] * inside
        if exclude_exchange:
            same = np.all(idx[None, :, :] == idx[a], axis=-1) | \
                np.all(idx[None, :, :] == idx[:, None, :], axis=-1)
            val = np.where(same, 0.0, val)
        out[a] = np.sum(val)
    return out.reshape(grid.shape) * 12 * np.pi * grid.weight ** 2
