import warnings

import numpy as np
import pytest

from phonon_boltzmann.collision import MomentumGrid, WignerState, build_kernel_1d
from phonon_boltzmann.dispersion import DispersionError, optical_nearest_neighbor
from phonon_boltzmann.invariants import fit_invariant, solve_stationary_parameters
from phonon_boltzmann.kinetic import (PhaseSpaceState, StiffnessError, duhamel_second_order,
                                      entropy, entropy_production, entropy_slope,
                                      equilibrium_wigner, free_transport_step, solve_homogeneous,
                                      solve_inhomogeneous, step_homogeneous)

from oracles import HALF_LOG_TWO, omega_fpu, rk4_dense_reference


def smooth_perturbation(kernel, amp=0.3):
    g = kernel.grid
    k = g.points()
    W = equilibrium_wigner(1.0, g, kernel.dispersion).values
    return WignerState(g, W * (1 + amp * np.cos(4 * np.pi * k)))


def test_equilibrium_wigner_unit_frequency():
    with pytest.warns(UserWarning):
        from phonon_boltzmann.dispersion import build_custom_dispersion
        flat = build_custom_dispersion({0: 1.0})
    g = MomentumGrid(1, 8)
    np.testing.assert_allclose(equilibrium_wigner(1.0, g, flat).values, 1.0)


def test_equilibrium_wigner_beta_scaling(optical1d):
    g = MomentumGrid(1, 16)
    np.testing.assert_allclose(equilibrium_wigner(2.0, g, optical1d).values,
                               0.5 * equilibrium_wigner(1.0, g, optical1d).values, rtol=1e-15)


def test_equilibrium_wigner_rejects_zero_mode(fpu):
    with pytest.raises(DispersionError):
        equilibrium_wigner(1.0, MomentumGrid(1, 16), fpu)
    with pytest.raises(ValueError):
        equilibrium_wigner(0.0, MomentumGrid(1, 16), fpu)


def test_entropy_trivial_values():
    g = MomentumGrid(1, 16)
    assert entropy(WignerState(g, np.ones(16))).value == pytest.approx(0.0, abs=1e-15)
    assert entropy(WignerState(g, np.full(16, np.e))).value == pytest.approx(1.0, rel=1e-14)


def test_entropy_flags_empty_modes():
    g = MomentumGrid(1, 8)
    S = entropy(WignerState(g, [1, 1, 0, 1, 1, 1, 1, 1]))
    assert S.value == -np.inf and not S.finite


def test_entropy_fpu_equilibrium_converges(fpu):
    # S(W_beta) for the FPU chain with the zero mode dropped; the exact
    # continuum value is (1/2) ln 2 but the excluded cell at the log singularity
    # carries O(h log h), so only the direct sum and convergence are checked
    vals = []
    for N in (128, 512, 2048):
        g = MomentumGrid(1, N)
        k = g.axis
        w = fpu.omega(k)
        keep = w > 0
        Wv = np.where(keep, 1 / np.where(keep, w, 1.0), 1.0)
        S = entropy(WignerState(g, Wv)).value
        np.testing.assert_allclose(w, omega_fpu(k), atol=1e-14)
        assert S == pytest.approx(np.sum(-np.log(w[keep])) / N, rel=1e-13)
        vals.append(S)
    exact = HALF_LOG_TWO
    errs = [abs(v - exact) for v in vals]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 5e-3


def test_entropy_production_zero_at_equilibrium(kernel64, optical1d):
    W = equilibrium_wigner(1.3, kernel64.grid, optical1d)
    assert abs(entropy_production(kernel64, W)) <= 1e-12


def test_entropy_production_nonnegative(kernel64, rng):
    for _ in range(10):
        assert entropy_production(kernel64, rng.uniform(0.05, 3, 64)) >= 0


def test_entropy_production_rejects_zero(kernel64):
    with pytest.raises(ValueError):
        entropy_production(kernel64, np.zeros(64))


def test_step_keeps_equilibrium(kernel64, optical1d):
    W = equilibrium_wigner(1.0, kernel64.grid, optical1d)
    out = step_homogeneous(kernel64, W, 0.1)
    np.testing.assert_allclose(out.values, W.values, rtol=0, atol=1e-12)


def test_step_zero_state(kernel32):
    assert not step_homogeneous(kernel32, np.zeros(32), 0.1).any()


def test_step_rejects_nonpositive_dt(kernel32):
    with pytest.raises(ValueError):
        step_homogeneous(kernel32, np.ones(32), 0.0)


def test_rk4_fourth_order(kernel32):
    W0 = smooth_perturbation(kernel32).values
    T, base = 0.4, 0.1
    from phonon_boltzmann.collision import evaluate_collision
    ref = rk4_dense_reference(lambda y: evaluate_collision(kernel32, y), W0, T,
                              int(round(64 * T / base)))

    def run(dt):
        W = W0
        for _ in range(int(round(T / dt))):
            W = step_homogeneous(kernel32, W, dt)
        return np.linalg.norm(W - ref)

    ratio = run(base) / run(base / 2)
    assert 12 < ratio < 20


def test_stiffness_error_and_clamp(kernel32, rng):
    W = rng.uniform(0.0, 40.0, 32)
    with pytest.raises(StiffnessError, match="halvings"):
        step_homogeneous(kernel32, W, 5.0, max_halvings=0)
    assert np.all(step_homogeneous(kernel32, W, 5.0, clamp=True) >= 0)


def test_step_returns_input_type(kernel32):
    W = smooth_perturbation(kernel32)
    assert isinstance(step_homogeneous(kernel32, W, 0.01), WignerState)
    assert isinstance(step_homogeneous(kernel32, W.values, 0.01), np.ndarray)


def test_solve_from_equilibrium_is_constant(kernel32, optical1d):
    W = equilibrium_wigner(1.0, kernel32.grid, optical1d)
    traj = solve_homogeneous(kernel32, W, 2.0, 0.1)
    assert not traj.violations
    assert max(np.max(np.abs(s.values - W.values)) for s in traj.states) <= 1e-12
    np.testing.assert_allclose(traj.entropy, traj.entropy[0], atol=1e-13)


def test_solve_rejects_negative_initial_data(kernel32):
    g = kernel32.grid
    W = WignerState.__new__(WignerState)
    W.grid, W.values = g, -np.ones(32)
    with pytest.raises(ValueError):
        solve_homogeneous(kernel32, W, 1.0, 0.1)


@pytest.fixture(scope="module")
def relaxation(kernel32):
    W0 = smooth_perturbation(kernel32, 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        return solve_homogeneous(kernel32, W0, 3.0, 0.01, record_every=1)


def test_relaxation_invariants(relaxation):
    tr = relaxation
    assert not tr.violations
    assert np.max(np.abs(tr.energy / tr.energy[0] - 1)) < 1e-12
    assert np.max(np.abs(tr.number / tr.number[0] - 1)) < 1e-12
    assert np.all(np.diff(tr.entropy) >= -1e-9 * np.abs(tr.entropy[:-1]))


def test_entropy_slope_matches_production(kernel32, relaxation):
    tr = relaxation
    t, d = entropy_slope(tr.times, tr.entropy, order=6)
    idx = np.linspace(0, t.size - 1, 10).astype(int)
    for i in idx:
        sigma = entropy_production(kernel32, tr.states[i + 3])
        if sigma > 1e-8:
            assert d[i] == pytest.approx(sigma, rel=1e-3)


def test_entropy_slope_validation():
    t = np.arange(5) * 0.1
    with pytest.raises(ValueError):
        entropy_slope(t, t, order=3)
    with pytest.raises(ValueError):
        entropy_slope(t, t, order=6)
    tt, d = entropy_slope(np.arange(20) * 0.1, (np.arange(20) * 0.1) ** 2, order=2)
    np.testing.assert_allclose(d, 2 * tt, atol=1e-12)


def test_relaxation_approaches_moment_matched_state(kernel64):
    W0 = smooth_perturbation(kernel64, 0.5)
    tr = solve_homogeneous(kernel64, W0, 400.0, 0.1, record_every=1000)
    g, spec = kernel64.grid, kernel64.dispersion
    a, c = solve_stationary_parameters(g, spec, tr.number[0], tr.energy[0])
    target = 1 / (a + c * spec.omega(g.points()))
    Wf = tr.final.values
    assert np.linalg.norm(Wf - target) <= 1e-2 * np.linalg.norm(Wf)
    assert fit_invariant(1 / Wf, g, spec).residual <= 1e-3


# --- inhomogeneous ----------------------------------------------------------

def test_phase_space_validation(kernel32):
    g = kernel32.grid
    with pytest.raises(ValueError):
        PhaseSpaceState(1.0, g, np.ones(32))
    with pytest.raises(ValueError):
        PhaseSpaceState(1.0, g, -np.ones((4, 32)))
    st = PhaseSpaceState(2.0, g, np.ones((4, 32)))
    np.testing.assert_allclose(st.r, [0, 0.5, 1.0, 1.5])


@pytest.mark.parametrize("method", ["linear", "fourier"])
def test_transport_dt_zero_is_identity(method, kernel32, rng):
    st = PhaseSpaceState(1.0, kernel32.grid, rng.uniform(0.1, 1, (8, 32)))
    out = free_transport_step(st, kernel32.dispersion, 0.0, method)
    np.testing.assert_array_equal(out.values, st.values)


def test_transport_analytic_shift(kernel32, optical1d):
    g, R, Nr = kernel32.grid, 3.0, 64
    r = np.arange(Nr) * R / Nr
    base = 2 + np.sin(2 * np.pi * r / R)
    st = PhaseSpaceState(R, g, np.repeat(base[:, None], 32, axis=1))
    dt = 0.7
    v = optical1d.group_velocity(g.axis)[:, 0]
    exact = 2 + np.sin(2 * np.pi * (r[:, None] - v[None, :] * dt) / R)
    four = free_transport_step(st, optical1d, dt, "fourier").values
    lin = free_transport_step(st, optical1d, dt, "linear").values
    np.testing.assert_allclose(four, exact, atol=1e-12)
    np.testing.assert_allclose(lin, exact, atol=(2 * np.pi / Nr) ** 2)


def test_two_half_steps_equal_full_step(kernel32, optical1d, rng):
    g, R, Nr = kernel32.grid, 1.0, 16
    v = optical1d.group_velocity(g.axis)
    j = int(np.argmax(v))
    dt = 2 * R / Nr / v[j]       # full step moves column j by exactly two cells
    vals = rng.uniform(0.5, 1.5, (Nr, 32))
    st = PhaseSpaceState(R, g, vals)
    full = free_transport_step(st, optical1d, dt, "linear").values
    half = free_transport_step(free_transport_step(st, optical1d, dt / 2, "linear"),
                               optical1d, dt / 2, "linear").values
    np.testing.assert_allclose(half[:, j], full[:, j], rtol=1e-13)
    np.testing.assert_allclose(full[:, j], np.roll(vals[:, j], 2), rtol=1e-13)
    # band-limited data: the Fourier shift composes exactly for every column
    r = np.arange(Nr) / Nr
    smooth = PhaseSpaceState(R, g, 2 + np.outer(np.cos(2 * np.pi * r), np.ones(32)))
    f1 = free_transport_step(smooth, optical1d, 0.37, "fourier").values
    f2 = free_transport_step(free_transport_step(smooth, optical1d, 0.185, "fourier"),
                             optical1d, 0.185, "fourier").values
    np.testing.assert_allclose(f1, f2, atol=1e-13)


def test_unknown_transport_method(kernel32):
    st = PhaseSpaceState(1.0, kernel32.grid, np.ones((4, 32)))
    with pytest.raises(ValueError):
        free_transport_step(st, kernel32.dispersion, 0.1, "spline")


def test_uniform_state_matches_homogeneous(kernel32):
    W0 = smooth_perturbation(kernel32)
    st = PhaseSpaceState(1.0, kernel32.grid, np.tile(W0.values, (6, 1)))
    _, states = solve_inhomogeneous(kernel32, st, 0.5, 0.05)
    ref = solve_homogeneous(kernel32, W0, 0.5, 0.05).final.values
    np.testing.assert_allclose(states[-1].values, np.tile(ref, (6, 1)), rtol=0, atol=1e-10)


def test_empty_kernel_is_pure_transport(optical1d, rng):
    g = MomentumGrid(1, 16)
    empty = build_kernel_1d(g, optical1d, channels=())
    assert empty.is_empty
    st = PhaseSpaceState(1.0, g, rng.uniform(0.5, 1.5, (12, 16)))
    _, states = solve_inhomogeneous(empty, st, 0.3, 0.1)
    ref = st
    for _ in range(3):
        ref = free_transport_step(ref, optical1d, 0.05)
        ref = free_transport_step(ref, optical1d, 0.05)
    np.testing.assert_allclose(states[-1].values, ref.values, atol=1e-14)


def test_inhomogeneous_grid_mismatch(kernel32):
    st = PhaseSpaceState(1.0, MomentumGrid(1, 16), np.ones((4, 16)))
    with pytest.raises(ValueError):
        solve_inhomogeneous(kernel32, st, 0.1, 0.05)


def test_duhamel_trivial_cases(kernel32, optical1d, rng):
    g = kernel32.grid
    Wb = equilibrium_wigner(1.0, g, optical1d).values
    st = PhaseSpaceState(1.0, g, np.tile(Wb, (8, 1)))
    np.testing.assert_allclose(duhamel_second_order(kernel32, st, 0.2).values, st.values,
                               atol=1e-12)
    rand = PhaseSpaceState(1.0, g, rng.uniform(0.5, 1.5, (8, 32)))
    np.testing.assert_allclose(duhamel_second_order(kernel32, rand, 0.0).values, rand.values,
                               atol=1e-14)
