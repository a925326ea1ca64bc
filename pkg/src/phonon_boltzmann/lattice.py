"""Microscopic anharmonic chain, normal-mode transforms and Gaussian ensembles.

Normalisation: ``qhat(k) = sum_x exp(-i 2 pi k x) q_x`` over the ``L``
sites (numpy's forward FFT) and the inverse carries ``1/L``.  With
``a(k) = (sqrt(omega) qhat + i phat / sqrt(omega)) / sqrt(2)`` the harmonic
energy is ``sum_k omega |a|^2 / L`` and the power spectrum estimator is
``<|a(k)|^2> / L``, so that the harmonic Gibbs state gives ``1/(beta omega)``.
These two transforms are the only places where factors of ``L`` appear.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .collision import FPU_ALPHA, FPU_BETA, ONSITE_QUARTIC, MomentumGrid, WignerState
from .dispersion import DispersionError, DispersionSpec, optical_nearest_neighbor

POTENTIALS = (ONSITE_QUARTIC, FPU_ALPHA, FPU_BETA)


class RealityError(ValueError):
    """Normal-mode field does not correspond to real displacements and momenta."""


class IntegratorInstabilityError(RuntimeError):
    """Energy drift of a microscopic run exceeded the allowed bound."""


@dataclass
class ChainState:
    """Periodic chain of ``L`` sites; ``q`` and ``p`` may carry a leading ensemble axis."""

    q: np.ndarray
    p: np.ndarray
    lam: float = 0.0
    potential: str = ONSITE_QUARTIC
    dispersion: DispersionSpec = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        if self.dispersion is None:
            self.dispersion = optical_nearest_neighbor(1.0, 1)
        if self.q.shape != self.p.shape or self.q.shape[-1] < 2:
            raise ValueError("q and p must share a shape with at least 2 sites")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.potential not in POTENTIALS:
            raise ValueError(f"unknown potential {self.potential!r}")
        if self.dispersion.dim != 1 or not self.dispersion.is_torus:
            raise DispersionError("the chain needs a 1D lattice dispersion")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("non-finite chain state")

    @property
    def L(self) -> int:
        return self.q.shape[-1]


@dataclass
class ComplexField:
    """Normal-mode amplitudes ``a(k_j)`` in FFT order, ``k_j = fftfreq(L)``."""

    a: np.ndarray
    dispersion: DispersionSpec

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=complex)

    @property
    def L(self) -> int:
        return self.a.shape[-1]

    @property
    def k(self) -> np.ndarray:
        return np.fft.fftfreq(self.L)


@dataclass(frozen=True)
class EnsembleSpec:
    beta: float
    realizations: int
    seed: int = 0
    L: int = 64

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.L < 2:
            raise ValueError("L must be >= 2")


def mode_frequencies(spec: DispersionSpec, L: int) -> np.ndarray:
    w = spec.omega(np.fft.fftfreq(L))
    if np.any(w <= 0):
        raise DispersionError(
            "zero-frequency mode on the lattice grid; use an optical dispersion (omega0 > 0)")
    return w


def coupling_matrix(spec: DispersionSpec, L: int) -> np.ndarray:
    """Dense periodic matrix A_xy = sum of alpha(o) over offsets o = x - y (mod L)."""
    A = np.zeros((L, L))
    for (o,), v in spec.couplings().items():
        for x in range(L):
            A[x, (x - o) % L] += v
    return A


def _harmonic_force(q: np.ndarray, spec: DispersionSpec) -> np.ndarray:
    f = np.zeros_like(q)
    for (o,), v in spec.couplings().items():
        f -= v * np.roll(q, o, axis=-1)
    return f


def _bond(q):
    return np.roll(q, -1, axis=-1) - q


def anharmonic_energy(q: np.ndarray, lam: float, potential: str) -> np.ndarray:
    c = np.sqrt(lam)
    if potential == ONSITE_QUARTIC:
        return c / 4.0 * np.sum(q ** 4, axis=-1)
    r = _bond(q)
    if potential == FPU_ALPHA:
        return c / 3.0 * np.sum(r ** 3, axis=-1)
    return c / 4.0 * np.sum(r ** 4, axis=-1)


def _anharmonic_force(q: np.ndarray, lam: float, potential: str) -> np.ndarray:
    c = np.sqrt(lam)
    if potential == ONSITE_QUARTIC:
        return -c * q ** 3
    r = _bond(q)
    dphi = c * (r ** 2 if potential == FPU_ALPHA else r ** 3)
    # V = sum phi(q_{x+1} - q_x):  dV/dq_x = phi'(r_{x-1}) - phi'(r_x)
    return -(np.roll(dphi, 1, axis=-1) - dphi)


def hamiltonian(state: ChainState) -> dict:
    """Harmonic, anharmonic and total energy (arrays when an ensemble axis is present)."""
    q, p = state.q, state.p
    harm = 0.5 * np.sum(p ** 2, axis=-1) - 0.5 * np.sum(q * _harmonic_force(q, state.dispersion),
                                                          axis=-1)
    anh = anharmonic_energy(q, state.lam, state.potential) if state.lam else np.zeros_like(harm)
    return {"harmonic": harm, "anharmonic": anh, "total": harm + anh}


def forces(state: ChainState) -> np.ndarray:
    f = _harmonic_force(state.q, state.dispersion)
    if state.lam:
        f = f + _anharmonic_force(state.q, state.lam, state.potential)
    return f


def step_symplectic(state: ChainState, dt: float, n_steps: int = 1) -> ChainState:
    """Velocity-Verlet steps of the full hamiltonian flow."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q, p = state.q.copy(), state.p.copy()
    spec, lam, pot = state.dispersion, state.lam, state.potential

    def force(x):
        f = _harmonic_force(x, spec)
        return f + _anharmonic_force(x, lam, pot) if lam else f

    with np.errstate(over="ignore", invalid="ignore"):
        f = force(q)
        for _ in range(n_steps):
            p += 0.5 * dt * f
            q += dt * p
            f = force(q)
            p += 0.5 * dt * f
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise IntegratorInstabilityError(f"chain state diverged within {n_steps} steps of {dt:g}")
    return replace(state, q=q, p=p)


def to_normal_modes(state: ChainState) -> ComplexField:
    w = mode_frequencies(state.dispersion, state.L)
    qh = np.fft.fft(state.q, axis=-1)
    ph = np.fft.fft(state.p, axis=-1)
    a = (np.sqrt(w) * qh + 1j * ph / np.sqrt(w)) / np.sqrt(2.0)
    return ComplexField(a, state.dispersion)


def _minus_k(a: np.ndarray) -> np.ndarray:
    # a(-k) in FFT order
    return np.roll(np.flip(a, axis=-1), 1, axis=-1)


def from_normal_modes(field: ComplexField, lam: float = 0.0, potential: str = ONSITE_QUARTIC,
                      threshold: float = 1e-10) -> ChainState:
    w = mode_frequencies(field.dispersion, field.L)
    a = field.a
    am = np.conj(_minus_k(a))
    qh = (a + am) / np.sqrt(2.0 * w)
    ph = 1j * np.sqrt(w / 2.0) * (am - a)
    q = np.fft.ifft(qh, axis=-1)
    p = np.fft.ifft(ph, axis=-1)
    scale = max(1.0, float(np.max(np.abs(q.real), initial=0)), float(np.max(np.abs(p.real), initial=0)))
    imag = max(float(np.max(np.abs(q.imag), initial=0)), float(np.max(np.abs(p.imag), initial=0)))
    if imag > threshold * scale:
        raise RealityError(f"reconstructed q, p have imaginary part {imag:.3g}")
    return ChainState(q.real, p.real, lam, potential, field.dispersion)


def free_evolve(field: ComplexField, t: float) -> ComplexField:
    w = field.dispersion.omega(field.k)
    return ComplexField(field.a * np.exp(-1j * w * t), field.dispersion)


def _realization_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, r])))


def sample_gaussian_field(spectrum: np.ndarray, dispersion: DispersionSpec, seed: int,
                          realizations: Sequence[int]) -> ComplexField:
    """Independent complex Gaussians with ``<|a(k)|^2> = L * spectrum(k)`` (FFT order)."""
    spectrum = np.asarray(spectrum, dtype=float)
    L = spectrum.size
    out = np.empty((len(realizations), L), complex)
    for row, r in enumerate(realizations):
        z = _realization_rng(seed, r).standard_normal((2, L))
        out[row] = (z[0] + 1j * z[1]) * np.sqrt(L * spectrum / 2.0)
    return ComplexField(out, dispersion)


def sample_harmonic_gibbs(spec: EnsembleSpec, dispersion: DispersionSpec,
                          realizations: Sequence[int] | None = None) -> ComplexField:
    """Draw the harmonic Gibbs ensemble exp(-beta H_ha) in normal-mode form.

    Realization ``r`` uses its own counter-based stream keyed by
    ``(seed, r)``, and modes are drawn in a fixed order within it.
    """
    w = mode_frequencies(dispersion, spec.L)
    if realizations is None:
        realizations = range(spec.realizations)
    return sample_gaussian_field(1.0 / (spec.beta * w), dispersion, spec.seed, list(realizations))


def spectrum_grid(L: int) -> MomentumGrid:
    return MomentumGrid(1, L)


def _fft_to_grid(x: np.ndarray) -> np.ndarray:
    # FFT slot m holds k = m/L mod 1; grid index i holds k = -1/2 + i/L
    return np.fft.fftshift(x, axes=-1)


def grid_to_fft(x: np.ndarray) -> np.ndarray:
    return np.fft.ifftshift(x, axes=-1)


def estimate_power_spectrum(fields) -> WignerState:
    """Ensemble spectrum ``W(k) = mean |a(k)|^2 / L`` on the sorted mode grid.

    ``fields`` is a ComplexField with an ensemble axis, or a list of them.
    The standard error of the mean is attached as ``stderr``.
    """
    if isinstance(fields, ComplexField):
        a = np.atleast_2d(fields.a)
    else:
        if not fields:
            raise ValueError("empty ensemble")
        Ls = {f.L for f in fields}
        if len(Ls) != 1:
            raise ValueError("fields have mismatched lengths")
        a = np.concatenate([np.atleast_2d(f.a) for f in fields], axis=0)
    L = a.shape[-1]
    occ = np.abs(a) ** 2 / L
    M = occ.shape[0]
    mean = occ.mean(axis=0)
    err = occ.std(axis=0, ddof=1) / np.sqrt(M) if M > 1 else np.zeros(L)
    return WignerState(spectrum_grid(L), _fft_to_grid(mean), _fft_to_grid(err))


def anomalous_correlation(fields: ComplexField) -> tuple[np.ndarray, np.ndarray]:
    """Estimate ``<a(k) a(-k)> / L`` with its standard error (FFT order)."""
    a = np.atleast_2d(fields.a)
    L = a.shape[-1]
    prod = a * _minus_k(a) / L
    M = prod.shape[0]
    err = np.sqrt(prod.real.var(axis=0, ddof=1) + prod.imag.var(axis=0, ddof=1)) / np.sqrt(M)
    return prod.mean(axis=0), err


def spectrum_covariance(fields: ComplexField, k1: int, k2: int) -> float:
    """Normalised covariance of ``|a(k1)|^2`` and ``|a(k2)|^2`` over the ensemble.

    ``k1``, ``k2`` are FFT-order mode indices.  Zero within statistical error
    for independent modes.
    """
    if k1 == k2:
        raise ValueError("k1 and k2 must differ")
    a = np.atleast_2d(fields.a)
    if a.shape[0] < 2:
        raise ValueError("need at least two realizations")
    x, y = np.abs(a[:, k1]) ** 2, np.abs(a[:, k2]) ** 2
    mx, my = x.mean(), y.mean()
    if mx == 0 or my == 0:
        return 0.0
    return float(np.mean((x - mx) * (y - my)) / (mx * my))


@dataclass
class MicroscopicResult:
    times: np.ndarray
    spectra: list
    energy_drift: float
    energies: np.ndarray


def run_microscopic_experiment(spec: EnsembleSpec, lam: float, potential: str,
                               t_snapshots: Sequence[float], dt: float,
                               dispersion: DispersionSpec | None = None,
                               initial_spectrum: np.ndarray | None = None,
                               max_drift: float = 0.01) -> MicroscopicResult:
    """Evolve a Gaussian ensemble under the full dynamics and record spectra.

    ``initial_spectrum`` (sorted grid order, length ``L``) replaces the Gibbs
    spectrum ``1/(beta omega)`` when given.  Snapshot times are rounded to
    whole steps.  All realizations are integrated together along an
    ensemble axis.
    """
    dispersion = dispersion or optical_nearest_neighbor(1.0, 1)
    w = mode_frequencies(dispersion, spec.L)
    if initial_spectrum is None:
        target = 1.0 / (spec.beta * w)
    else:
        target = grid_to_fft(np.asarray(initial_spectrum, dtype=float))
    field = sample_gaussian_field(target, dispersion, spec.seed, range(spec.realizations))
    state = from_normal_modes(field, lam, potential)
    e0 = hamiltonian(state)["total"]
    t_snapshots = sorted(float(t) for t in t_snapshots)
    spectra, times, energies = [], [], []
    t_now, drift = 0.0, 0.0
    for t in t_snapshots:
        n = int(round((t - t_now) / dt))
        if n > 0:
            state = step_symplectic(state, dt, n)
            t_now += n * dt
        e = hamiltonian(state)["total"]
        drift = max(drift, float(np.max(np.abs(e - e0) / np.abs(e0))))
        if drift > max_drift:
            raise IntegratorInstabilityError(
                f"energy drift {drift:.3g} exceeds {max_drift} at t={t_now:.4g}")
        spectra.append(estimate_power_spectrum(to_normal_modes(state)))
        times.append(t_now)
        energies.append(float(np.mean(e)))
    return MicroscopicResult(np.array(times), spectra, drift, np.array(energies))
