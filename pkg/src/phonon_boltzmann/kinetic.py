"""Time integration of the phonon Boltzmann equation, entropy and entropy production."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .collision import (CollisionKernel, MomentumGrid, WignerState, entropy_production_form,
                        evaluate_collision)
from .dispersion import DispersionError, DispersionSpec


class StiffnessError(RuntimeError):
    """Time step could not keep W nonnegative after the allowed number of halvings."""


@dataclass
class EntropyValue:
    """Entropy with an explicit flag for the divergent case (some W(k) = 0)."""

    value: float
    finite: bool = True

    def __float__(self):
        return self.value


def equilibrium_wigner(beta: float, grid: MomentumGrid, spec: DispersionSpec) -> WignerState:
    """W_beta(k) = 1 / (beta omega(k))."""
    if not beta > 0:
        raise ValueError("beta must be > 0")
    w = spec.omega(grid.points())
    if np.any(w <= 0):
        raise DispersionError("omega vanishes on the grid; exclude the zero mode or use omega0 > 0")
    return WignerState(grid, 1.0 / (beta * w))


def entropy(W: WignerState) -> EntropyValue:
    """S(W) = sum_k log W(k) * weight; ``-inf`` (flagged) if any W(k) = 0."""
    v = W.values
    if np.any(v <= 0):
        return EntropyValue(-np.inf, finite=False)
    return EntropyValue(float(np.sum(np.log(v)) * W.grid.weight))


def entropy_production(kernel: CollisionKernel, W) -> float:
    """Entropy production sigma_S = int C(W)/W >= 0, as a sum of squares over collisions."""
    values = W.values if isinstance(W, WignerState) else np.asarray(W)
    if np.any(values <= 0):
        raise ValueError("entropy production needs W > 0")
    return entropy_production_form(kernel, values)


def _rk4(kernel: CollisionKernel, W: np.ndarray, dt: float) -> np.ndarray:
    k1 = evaluate_collision(kernel, W)
    k2 = evaluate_collision(kernel, W + 0.5 * dt * k1)
    k3 = evaluate_collision(kernel, W + 0.5 * dt * k2)
    k4 = evaluate_collision(kernel, W + dt * k3)
    return W + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _advance(kernel, W, dt, clamp, max_halvings):
    if clamp:
        return np.maximum(_rk4(kernel, W, dt), 0.0)
    for level in range(max_halvings + 1):
        n = 2 ** level
        sub = dt / n
        X = W
        for _ in range(n):
            X = _rk4(kernel, X, sub)
            if np.any(X < 0):
                break
        else:
            return X
    raise StiffnessError(
        f"negative W persists after {max_halvings} step halvings (dt={dt:g}, "
        f"min W={float(np.min(X)):.3g})")


def step_homogeneous(kernel: CollisionKernel, W, dt: float, clamp: bool = False,
                     max_halvings: int = 20):
    """One classical Runge-Kutta step of dW/dt = C(W).

    If the step produces a negative value it is retried with ``dt`` split
    into 2, 4, ... substeps; with ``clamp`` the result is clipped at zero
    instead.  Returns the same type as ``W``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    values = W.values if isinstance(W, WignerState) else np.asarray(W, dtype=float)
    out = _advance(kernel, values, dt, clamp, max_halvings)
    if isinstance(W, WignerState):
        return WignerState(W.grid, out)
    return out


@dataclass
class KineticTrajectory:
    times: np.ndarray
    states: list
    entropy: np.ndarray
    energy: np.ndarray
    number: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def final(self) -> WignerState:
        return self.states[-1]


def _moments(grid, omega, values):
    h = grid.weight
    return float(np.sum(values) * h), float(np.sum(omega * values) * h)


def solve_homogeneous(kernel: CollisionKernel, W0: WignerState, T: float, dt: float,
                      clamp: bool = False, record_every: int = 1,
                      entropy_slack: float = 1e-9, conservation_tol: float = 1e-6
                      ) -> KineticTrajectory:
    """Integrate the spatially homogeneous equation to time ``T``.

    Entropy, energy and number are recorded with every stored state.
    Violations of the H-theorem (beyond ``entropy_slack`` relative per step)
    or of the conservation laws are collected in ``violations`` rather than
    raised.
    """
    if np.any(W0.values < 0):
        raise ValueError("W0 must be nonnegative")
    grid = W0.grid
    omega = kernel.dispersion.omega(grid.points())
    n_steps = int(round(T / dt))
    W = W0.values.copy()
    times, states, S, E, Nn = [], [], [], [], []
    violations = []

    def record(t, X):
        times.append(t)
        states.append(WignerState(grid, X.copy()))
        S.append(entropy(states[-1]).value)
        n, e = _moments(grid, omega, X)
        Nn.append(n)
        E.append(e)

    record(0.0, W)
    prev_S = S[0]
    for i in range(1, n_steps + 1):
        W = _advance(kernel, W, dt, clamp, 20)
        if i % record_every == 0 or i == n_steps:
            record(i * dt, W)
            if np.isfinite(prev_S) and S[-1] < prev_S - entropy_slack * abs(prev_S) * record_every:
                violations.append(("entropy", times[-1], S[-1] - prev_S))
            prev_S = S[-1]
    E, Nn = np.array(E), np.array(Nn)
    if E[0] != 0 and np.max(np.abs(E - E[0])) > conservation_tol * abs(E[0]):
        violations.append(("energy", float(np.max(np.abs(E - E[0]) / abs(E[0])))))
    if kernel.pair_only and Nn[0] != 0 and \
            np.max(np.abs(Nn - Nn[0])) > conservation_tol * abs(Nn[0]):
        violations.append(("number", float(np.max(np.abs(Nn - Nn[0]) / abs(Nn[0])))))
    if violations:
        warnings.warn(f"trajectory invariant violations: {violations[:3]}", stacklevel=2)
    return KineticTrajectory(np.array(times), states, np.array(S), E, Nn, violations)


def entropy_slope(times: np.ndarray, S: np.ndarray, order: int = 6
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Central finite-difference slope of S(t) on a uniform time grid.

    ``order`` is 2, 4 or 6; the first and last ``order/2`` samples are
    dropped.  Returns ``(interior times, slopes)``.
    """
    stencils = {2: [-1, 0, 1], 4: [1, -8, 0, 8, -1], 6: [-1, 9, -45, 0, 45, -9, 1]}
    denom = {2: 2.0, 4: 12.0, 6: 60.0}
    if order not in stencils:
        raise ValueError("order must be 2, 4 or 6")
    c = np.asarray(stencils[order], dtype=float)
    m = order // 2
    S = np.asarray(S, dtype=float)
    dt = times[1] - times[0]
    n = S.size - 2 * m
    if n <= 0:
        raise ValueError("trajectory too short for the stencil")
    d = sum(c[j] * S[j:j + n] for j in range(c.size)) / (denom[order] * dt)
    return times[m:-m], d


# ---------------------------------------------------------------------------
# spatially inhomogeneous 1D x 1D

@dataclass
class PhaseSpaceState:
    """W(r_i, k_j) on a periodic spatial grid of extent ``R`` times a momentum grid."""

    R: float
    grid: MomentumGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.N:
            raise ValueError("values must have shape (Nr, N)")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("phase-space density must be finite and nonnegative")

    @property
    def Nr(self) -> int:
        return self.values.shape[0]

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.Nr) * self.R / self.Nr

    def with_values(self, values) -> "PhaseSpaceState":
        return PhaseSpaceState(self.R, self.grid, values)


def _shift_linear(values: np.ndarray, shift_cells: np.ndarray) -> np.ndarray:
    # W(r - s) with periodic linear interpolation, column-wise shifts
    Nr = values.shape[0]
    base = np.floor(shift_cells)
    frac = shift_cells - base
    base = base.astype(np.int64)
    rows = np.arange(Nr)[:, None]
    cols = np.arange(values.shape[1])[None, :]
    i0 = (rows - base[None, :]) % Nr
    i1 = (i0 - 1) % Nr
    return (1 - frac)[None, :] * values[i0, cols] + frac[None, :] * values[i1, cols]


def _shift_fourier(values: np.ndarray, shift_cells: np.ndarray) -> np.ndarray:
    Nr = values.shape[0]
    m = np.fft.fftfreq(Nr) * Nr
    spec = np.fft.fft(values, axis=0)
    phase = np.exp(-2j * np.pi * np.outer(m, shift_cells) / Nr)
    if Nr % 2 == 0:
        # the Nyquist mode cannot be shifted by a real phase; keep the real part
        phase[Nr // 2] = np.cos(np.pi * shift_cells)
    return np.fft.ifft(spec * phase, axis=0).real


def free_transport_step(state: PhaseSpaceState, spec: DispersionSpec, dt: float,
                        method: str = "linear") -> PhaseSpaceState:
    """Exact characteristics of the free transport: W(r, k) <- W(r - v(k) dt, k).

    ``v(k)`` is the group velocity.  ``method="linear"`` interpolates
    periodically between spatial nodes (exact for grid-commensurate shifts);
    ``method="fourier"`` applies the shift as a phase, exact for
    trigonometric polynomials on the spatial grid.
    """
    if dt == 0:
        return state.with_values(state.values.copy())
    v = spec.group_velocity(state.grid.points())
    v = v[..., 0] if v.ndim > 1 else v
    shift = v * dt * state.Nr / state.R
    if method == "linear":
        out = _shift_linear(state.values, shift)
    elif method == "fourier":
        out = _shift_fourier(state.values, shift)
    else:
        raise ValueError(f"unknown transport method {method!r}")
    return state.with_values(np.maximum(out, 0.0) if method == "fourier" else out)


def collide_cells(kernel: CollisionKernel, values: np.ndarray, dt: float, clamp: bool = False
                  ) -> np.ndarray:
    """One collision step applied independently in every spatial cell."""
    return _advance(kernel, values, dt, clamp, 20)


def solve_inhomogeneous(kernel: CollisionKernel, state0: PhaseSpaceState, T: float, dt: float,
                        transport: str = "linear", clamp: bool = False,
                        record_every: int = 1) -> tuple[np.ndarray, list]:
    """Strang splitting: half transport, local collisions, half transport."""
    if state0.grid != kernel.grid:
        raise ValueError("momentum grid does not match the kernel")
    spec = kernel.dispersion
    n = int(round(T / dt))
    st = state0
    times, states = [0.0], [state0]
    for i in range(1, n + 1):
        st = free_transport_step(st, spec, 0.5 * dt, transport)
        st = st.with_values(collide_cells(kernel, st.values, dt, clamp))
        st = free_transport_step(st, spec, 0.5 * dt, transport)
        if i % record_every == 0 or i == n:
            times.append(i * dt)
            states.append(st)
    return np.array(times), states


def duhamel_second_order(kernel: CollisionKernel, state0: PhaseSpaceState, t: float,
                         quad_points: int = 16, transport: str = "fourier") -> PhaseSpaceState:
    """First Duhamel iterate e^{Lt} W0 + int_0^t e^{L(t-s)} C(e^{Ls} W0) ds.

    The time integral uses the composite midpoint rule with ``quad_points``
    nodes.  Only meaningful for short times, where it agrees with the
    Boltzmann solution up to O(t^2).
    """
    spec = kernel.dispersion
    free = free_transport_step(state0, spec, t, transport).values
    if t == 0:
        return state0.with_values(free)
    ds = t / quad_points
    acc = np.zeros_like(free)
    for j in range(quad_points):
        s = (j + 0.5) * ds
        Ws = free_transport_step(state0, spec, s, transport)
        Cs = evaluate_collision(kernel, Ws.values)
        # e^{L(t-s)} acts on a signed field; shift without clipping
        moved = _transport_signed(Cs, state0, spec, t - s, transport)
        acc += ds * moved
    return state0.with_values(np.maximum(free + acc, 0.0))


def _transport_signed(values, like: PhaseSpaceState, spec, dt, method):
    v = spec.group_velocity(like.grid.points())
    v = v[..., 0] if v.ndim > 1 else v
    shift = v * dt * like.Nr / like.R
    if method == "linear":
        return _shift_linear(values, shift)
    return _shift_fourier(values, shift)
