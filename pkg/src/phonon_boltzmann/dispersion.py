"""Dispersion relations, group velocities and collision kinematics.

Momenta on the lattice live on the torus ``[-1/2, 1/2)^d`` and are added
modulo 1.  Continuum momenta (the quadratic NLS dispersion) live in a ball
of radius ``cutoff``.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi

OPTICAL_NN = "optical_nn"
FPU_CHAIN = "fpu_chain"
NLS_QUADRATIC = "nls_quadratic"
CUSTOM_ELASTIC = "custom_elastic"
KINDS = (OPTICAL_NN, FPU_CHAIN, NLS_QUADRATIC, CUSTOM_ELASTIC)

DEFAULT_SCAN_POINTS = 4096
DEGENERACY_FLOOR = 1e-8
# scan grid is shifted off the lattice so exact exchange roots never sit on a node
_SCAN_OFFSET = 0.3819660112501051


class DispersionError(ValueError):
    """Invalid dispersion parameters or input outside the declared domain."""


class SingularPointError(ValueError):
    """Gradient requested where the dispersion is not differentiable."""


def wrap(k):
    """Reduce momenta to the Brillouin zone ``[-1/2, 1/2)``."""
    k = np.asarray(k, dtype=float)
    return k - np.floor(k + 0.5)


@dataclass(frozen=True)
class DispersionSpec:
    """A single-band dispersion relation.

    Use the constructors :func:`optical_nearest_neighbor`, :func:`fpu_chain`,
    :func:`nls_quadratic` and :func:`build_custom_dispersion` rather than
    instantiating directly.
    """

    kind: str
    dim: int
    omega0: float = 0.0
    alpha: tuple = ()
    domain: str = "torus"
    cutoff: float | None = None
    flat: bool = field(default=False, compare=False)

    @property
    def is_torus(self) -> bool:
        return self.domain == "torus"

    def _as_points(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        if self.dim == 1:
            if k.ndim >= 1 and k.shape[-1:] == (1,):
                k = k[..., 0]
            pts = k[..., None]
        else:
            if k.shape[-1:] != (self.dim,):
                raise DispersionError(
                    f"momentum shape {k.shape} does not match dimension {self.dim}")
            pts = k
        if not np.all(np.isfinite(pts)):
            raise DispersionError("non-finite momentum")
        if self.is_torus:
            return wrap(pts)
        return pts

    def omega(self, k) -> np.ndarray:
        """Evaluate omega(k); ``k`` has shape ``(..., dim)`` or ``(...)`` in 1D."""
        pts = self._as_points(k)
        if self.kind == OPTICAL_NN:
            w2 = self.omega0 ** 2 + 2.0 * np.sum(1.0 - np.cos(TWO_PI * pts), axis=-1)
            return np.sqrt(w2)
        if self.kind == FPU_CHAIN:
            return np.sqrt(np.maximum(1.0 - np.cos(TWO_PI * pts[..., 0]), 0.0))
        if self.kind == NLS_QUADRATIC:
            return 0.5 * np.sum(pts ** 2, axis=-1)
        return np.sqrt(np.maximum(self._alpha_hat(pts), 0.0))

    def omega_squared_grad(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == OPTICAL_NN:
            return 2.0 * TWO_PI * np.sin(TWO_PI * pts)
        if self.kind == FPU_CHAIN:
            return TWO_PI * np.sin(TWO_PI * pts)
        offsets, values = self._alpha_arrays()
        phase = TWO_PI * pts @ offsets.T
        return -(np.sin(phase) * values) @ (TWO_PI * offsets)

    def grad_omega(self, k) -> np.ndarray:
        """Gradient of omega with respect to k, shape ``(..., dim)``."""
        pts = self._as_points(k)
        if self.kind == NLS_QUADRATIC:
            return pts.copy()
        w = self.omega(pts if self.dim > 1 else pts[..., 0])
        g2 = self.omega_squared_grad(pts)
        if np.any(w <= 1e-12):
            raise SingularPointError(
                "omega vanishes at a requested momentum; gradient undefined there")
        return g2 / (2.0 * w[..., None])

    def domega(self, k) -> np.ndarray:
        """Derivative of a 1D dispersion, same shape as ``k``."""
        if self.dim != 1:
            raise DispersionError("domega is defined for 1D dispersions only")
        return self.grad_omega(k)[..., 0]

    def group_velocity(self, k) -> np.ndarray:
        """Transport velocity: ``grad omega / 2 pi`` on the lattice, ``k`` for NLS."""
        g = self.grad_omega(k)
        if self.kind == NLS_QUADRATIC:
            return g
        return g / TWO_PI

    def _alpha_arrays(self):
        offsets = np.array([o for o, _ in self.alpha], dtype=float).reshape(-1, self.dim)
        values = np.array([v for _, v in self.alpha], dtype=float)
        return offsets, values

    def _alpha_hat(self, pts: np.ndarray) -> np.ndarray:
        offsets, values = self._alpha_arrays()
        return np.cos(TWO_PI * pts @ offsets.T) @ values

    def couplings(self) -> dict:
        """Elastic constants alpha(x) as ``{offset: value}`` (lattice kinds only)."""
        if self.kind == OPTICAL_NN:
            out = {(0,) * self.dim: self.omega0 ** 2 + 2.0 * self.dim}
            for j in range(self.dim):
                for s in (1, -1):
                    e = [0] * self.dim
                    e[j] = s
                    out[tuple(e)] = -1.0
            return out
        if self.kind == FPU_CHAIN:
            return {(0,): 1.0, (1,): -0.5, (-1,): -0.5}
        if self.kind == CUSTOM_ELASTIC:
            return {tuple(o): v for o, v in self.alpha}
        raise DispersionError("the NLS dispersion has no lattice couplings")

    def max_speed(self, n: int = 2048) -> float:
        """max |grad omega| sampled on a dense grid (used for mollifier widths)."""
        if self.kind == NLS_QUADRATIC:
            return float(self.cutoff * np.sqrt(self.dim))
        k = (np.arange(n) + 0.5) / n - 0.5
        if self.dim == 1:
            pts = k
        else:
            pts = np.zeros((n, self.dim))
            pts[:, 0] = k
        try:
            return float(np.max(np.abs(self.grad_omega(pts))))
        except SingularPointError:
            return float(np.max(np.abs(self.grad_omega(pts[1:]))))

    def to_config(self) -> dict:
        cfg = {"kind": self.kind, "dim": self.dim, "omega0": self.omega0,
               "domain": self.domain}
        if self.cutoff is not None:
            cfg["cutoff"] = self.cutoff
        if self.alpha:
            cfg["alpha"] = [[list(o), v] for o, v in self.alpha]
        return cfg

    def key(self) -> str:
        return json.dumps(self.to_config(), sort_keys=True)


def optical_nearest_neighbor(omega0: float = 1.0, dim: int = 3) -> DispersionSpec:
    """omega(k)^2 = omega0^2 + 2 sum_j (1 - cos 2 pi k_j)."""
    if omega0 < 0:
        raise DispersionError("omega0 must be nonnegative")
    return DispersionSpec(OPTICAL_NN, int(dim), omega0=float(omega0))


def fpu_chain() -> DispersionSpec:
    """Acoustic FPU chain, omega(k) = (1 - cos 2 pi k)^(1/2)."""
    return DispersionSpec(FPU_CHAIN, 1)


def nls_quadratic(dim: int = 3, cutoff: float = 1.0) -> DispersionSpec:
    """Continuum omega(k) = |k|^2 / 2 truncated to the ball |k| <= cutoff."""
    if cutoff <= 0:
        raise DispersionError("cutoff must be positive")
    return DispersionSpec(NLS_QUADRATIC, int(dim), domain="continuum", cutoff=float(cutoff))


def build_custom_dispersion(alpha: Mapping, dim: int = 1, check_points: int | None = None
                            ) -> DispersionSpec:
    """Dispersion from finitely supported elastic constants ``{offset: value}``.

    Raises :class:`DispersionError` naming the offending offset if
    ``alpha(x) != alpha(-x)``, or the offending momentum if the Fourier
    transform of alpha is negative somewhere on the check grid.
    """
    items = {}
    for off, val in alpha.items():
        o = (int(off),) if np.isscalar(off) else tuple(int(x) for x in off)
        if len(o) != dim:
            raise DispersionError(f"offset {o} does not have dimension {dim}")
        items[o] = float(val)
    for o, v in items.items():
        mirror = tuple(-x for x in o)
        if abs(items.get(mirror, 0.0) - v) > 1e-14 * max(1.0, abs(v)):
            raise DispersionError(f"alpha is not symmetric at offset x={o}")
    spec = DispersionSpec(CUSTOM_ELASTIC, dim, alpha=tuple(sorted(items.items())))

    if check_points is None:
        check_points = 1024 if dim == 1 else 64
    axis = np.arange(check_points) / check_points - 0.5
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    pts = np.stack(grids, axis=-1).reshape(-1, dim)
    ahat = spec._alpha_hat(pts)
    scale = sum(abs(v) for v in items.values())
    bad = np.argmin(ahat)
    if ahat[bad] < -1e-12 * max(scale, 1.0):
        witness = pts[bad] if dim > 1 else float(pts[bad, 0])
        raise DispersionError(
            f"Fourier transform of alpha is negative ({ahat[bad]:.3g}) at k={witness}")
    flat = bool(np.ptp(ahat) <= 1e-14 * max(scale, 1.0))
    if flat:
        warnings.warn("constant dispersion: group velocity vanishes everywhere", stacklevel=2)
    return DispersionSpec(CUSTOM_ELASTIC, dim, alpha=spec.alpha, flat=flat)


def from_config(cfg: Mapping) -> DispersionSpec:
    """Build a spec from ``dispersion.*`` config values (section prefix stripped)."""
    kind = str(cfg.get("kind", OPTICAL_NN))
    dim = int(cfg.get("dim", 1))
    if kind == OPTICAL_NN:
        return optical_nearest_neighbor(float(cfg.get("omega0", 1.0)), dim)
    if kind == FPU_CHAIN:
        return fpu_chain()
    if kind == NLS_QUADRATIC:
        return nls_quadratic(dim, float(cfg.get("cutoff", 1.0)))
    if kind == CUSTOM_ELASTIC:
        alpha = cfg.get("alpha")
        if isinstance(alpha, str):
            alpha = parse_alpha(alpha)
        if not alpha:
            raise DispersionError("custom_elastic requires dispersion.alpha")
        return build_custom_dispersion(alpha, dim)
    raise DispersionError(f"unknown dispersion kind {kind!r}")


def parse_alpha(text: str) -> dict:
    """Parse ``"0:3, 1:-1, -1:-1"`` (1D) or ``"0/0/0:7, 1/0/0:-1"`` offset pairs."""
    out = {}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        off, val = item.rsplit(":", 1)
        o = tuple(int(x) for x in off.split("/"))
        out[o if len(o) > 1 else o[0]] = float(val)
    return out


# ---------------------------------------------------------------------------
# kinematics

@dataclass(frozen=True)
class KinematicRoot:
    k3: float
    jacobian: float
    degenerate: bool
    residual: float = 0.0


def _scan_axis(spec: DispersionSpec, scan_points: int) -> tuple[np.ndarray, float, bool]:
    if spec.is_torus:
        h = 1.0 / scan_points
        return -0.5 + (np.arange(scan_points) + _SCAN_OFFSET) * h, h, True
    lo, hi = -spec.cutoff, spec.cutoff
    h = (hi - lo) / scan_points
    return lo + (np.arange(scan_points) + _SCAN_OFFSET) * h, h, False


def level_crossings(func, levels: np.ndarray, axis: np.ndarray, periodic: bool,
                    iterations: int = 64):
    """All solutions of ``func(c) = levels[j]`` on a scan axis.

    Sign changes of ``func - level`` between consecutive scan nodes are
    refined by vectorised bisection.  Returns ``(level_index, root)``.
    """
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    vals = func(axis)
    diff = vals[None, :] - levels[:, None]
    pos = diff >= 0.0
    if periodic:
        change = pos != np.roll(pos, -1, axis=1)
    else:
        change = pos[:, :-1] != pos[:, 1:]
    lev, idx = np.nonzero(change)
    if lev.size == 0:
        return lev, np.zeros(0)
    n = axis.size
    lo = axis[idx].copy()
    step = axis[1] - axis[0]
    hi = lo + step
    target = levels[lev]
    flo = pos[lev, idx]
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        fm = func(mid) - target >= 0.0
        same = fm == flo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    roots = 0.5 * (lo + hi)
    if periodic:
        roots = wrap(roots)
    del n
    return lev, roots


def pair_residual(spec: DispersionSpec, k1, k2, k3) -> np.ndarray:
    """omega(k3) + omega(k1+k2-k3) - omega(k1) - omega(k2)."""
    k1, k2, k3 = (np.asarray(x, dtype=float) for x in (k1, k2, k3))
    return spec.omega(k3) + spec.omega(k1 + k2 - k3) - spec.omega(k1) - spec.omega(k2)


def solve_pair_kinematics(spec: DispersionSpec, k1: float, k2: float, tol: float = 1e-12,
                          scan_points: int = DEFAULT_SCAN_POINTS,
                          degeneracy_floor: float = DEGENERACY_FLOOR) -> list[KinematicRoot]:
    """Roots k3 of omega(k3) + omega(k1+k2-k3) = omega(k1) + omega(k2) in 1D.

    The exchange roots k3 = k1 and k3 = k2 are always present and flagged
    degenerate.  Roots with ``|F'(k3)|`` below ``degeneracy_floor`` that are
    not exchange roots are returned flagged with ``jacobian = 0``.
    """
    if spec.dim != 1:
        raise DispersionError("pair kinematics are solved in one dimension only")
    if tol <= 0:
        raise DispersionError("tol must be positive")
    k1, k2 = float(k1), float(k2)
    s = k1 + k2
    energy = float(spec.omega(k1) + spec.omega(k2))
    axis, h, periodic = _scan_axis(spec, scan_points)

    def g(c):
        return spec.omega(c) + spec.omega(s - c)

    _, found = level_crossings(g, np.array([energy]), axis, periodic)
    candidates = list(found) + [k1, k2]
    return _classify_roots(spec, candidates, k1, k2, s, energy, tol, degeneracy_floor, h)


def _same(spec, x, y, eps):
    d = x - y
    if spec.is_torus:
        d = wrap(d)
    return abs(d) <= eps


def _classify_roots(spec, candidates, k1, k2, s, energy, tol, floor, h):
    roots: list[KinematicRoot] = []
    ex_eps = max(1e-9, 1e-6 * h)
    for c in candidates:
        c = float(wrap(c)) if spec.is_torus else float(c)
        if any(_same(spec, c, r.k3, ex_eps) for r in roots):
            continue
        res = float(spec.omega(c) + spec.omega(s - c) - energy)
        if abs(res) > tol:
            # refine with a few Newton steps; scan roots are already bracketed
            for _ in range(4):
                d = float(spec.domega(c) - spec.domega(s - c))
                if d == 0:
                    break
                c -= res / d
                res = float(spec.omega(c) + spec.omega(s - c) - energy)
        jac = abs(float(_dF(spec, c, s)))
        exchange = _same(spec, c, k1, ex_eps) or _same(spec, c, k2, ex_eps)
        degenerate = exchange or jac < floor
        roots.append(KinematicRoot(k3=c, jacobian=0.0 if (degenerate and not exchange) else jac,
                                   degenerate=degenerate, residual=abs(res)))
    roots.sort(key=lambda r: r.k3)
    return roots


def _dF(spec, c, s):
    try:
        return spec.domega(c) - spec.domega(s - c)
    except SingularPointError:
        step = 1e-6
        f = lambda x: spec.omega(x) + spec.omega(s - x)
        return (f(c + step) - f(c - step)) / (2 * step)


@dataclass
class ScanReport:
    min_residual: float
    argmin: tuple
    samples: int
    seed: int

    def to_json(self) -> str:
        return json.dumps({"min_residual": self.min_residual, "argmin": self.argmin,
                           "samples": self.samples, "seed": self.seed})


def _scan_chunk(spec, seed, chunk, size):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chunk])))
    shape = (size, 3) if spec.dim == 1 else (size, 3, spec.dim)
    ks = rng.random(shape) - 0.5
    k1, k2, k3 = ks[:, 0], ks[:, 1], ks[:, 2]
    res = spec.omega(k1) + spec.omega(k2) + spec.omega(k3) - spec.omega(k1 + k2 + k3)
    i = int(np.argmin(res))
    return float(res[i]), ks[i]


def scan_merger_kinematics(spec: DispersionSpec, samples: int, seed: int = 0,
                           chunk_size: int = 200_000, workers: int = 1) -> ScanReport:
    """Minimum of omega(k1)+omega(k2)+omega(k3)-omega(k1+k2+k3) over random triples.

    Samples are drawn in fixed chunks from counter-based streams keyed by
    ``(seed, chunk)``, so the result does not depend on ``workers``.
    """
    if not spec.is_torus:
        raise DispersionError("merger scan requires a torus dispersion")
    if samples < 1:
        raise DispersionError("samples must be >= 1")
    sizes = [min(chunk_size, samples - s) for s in range(0, samples, chunk_size)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _scan_chunk(spec, seed, *a), enumerate(sizes)))
    else:
        results = [_scan_chunk(spec, seed, c, n) for c, n in enumerate(sizes)]
    best = min(range(len(results)), key=lambda j: (results[j][0], j))
    val, where = results[best]
    return ScanReport(min_residual=val, argmin=np.asarray(where).tolist(), samples=samples,
                      seed=seed)


def sample_merger_manifold(spec: DispersionSpec, samples: int, seed: int = 0,
                           tol: float = 1e-3, chunk_size: int = 200_000) -> np.ndarray:
    """Random triples whose merger residual is within ``tol``; shape ``(n, 3[, d])``."""
    keep = []
    for c, s in enumerate(range(0, samples, chunk_size)):
        size = min(chunk_size, samples - s)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, c])))
        shape = (size, 3) if spec.dim == 1 else (size, 3, spec.dim)
        ks = rng.random(shape) - 0.5
        res = (spec.omega(ks[:, 0]) + spec.omega(ks[:, 1]) + spec.omega(ks[:, 2])
               - spec.omega(ks[:, 0] + ks[:, 1] + ks[:, 2]))
        keep.append(ks[np.abs(res) <= tol])
    return np.concatenate(keep, axis=0)


def eval_omega(spec: DispersionSpec, k) -> np.ndarray:
    return spec.omega(k)


def group_velocity(spec: DispersionSpec, k) -> np.ndarray:
    return spec.group_velocity(k)


__all__: Sequence[str] = (
    "DispersionSpec", "DispersionError", "SingularPointError", "KinematicRoot", "ScanReport",
    "optical_nearest_neighbor", "fpu_chain", "nls_quadratic", "build_custom_dispersion",
    "from_config", "parse_alpha", "eval_omega", "group_velocity", "solve_pair_kinematics",
    "scan_merger_kinematics", "sample_merger_manifold", "level_crossings", "pair_residual",
    "wrap",
)
