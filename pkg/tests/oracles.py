"""Independent reference implementations used by the tests.

These deliberately avoid the package code paths they check: closed forms,
dense linear algebra, scipy root finders and plain loops.
"""
import numpy as np
from scipy.optimize import brentq

# frozen reference values (computed with the oracles below, see test docstrings)
FPU_ROOTS_01_03 = (-0.042822070756455756, 0.44282207075645574)
FPU_OMEGA2_FIT_N128 = (-0.42585737, 1.58380885, 0.12811130614846386)
HALF_LOG_TWO = 0.5 * np.log(2.0)


def omega_optical(k, omega0=1.0):
    k = np.atleast_2d(k)
    return np.sqrt(omega0 ** 2 + 2 * np.sum(1 - np.cos(2 * np.pi * k), axis=-1))


def omega_fpu(k):
    return np.sqrt(2.0) * np.abs(np.sin(np.pi * np.asarray(k)))


def pair_roots_brentq(omega, k1, k2, n=100_001):
    """All roots of omega(c) + omega(k1+k2-c) = omega(k1) + omega(k2) on [-1/2, 1/2]."""
    s, E = k1 + k2, omega(k1) + omega(k2)
    F = lambda c: omega(c) + omega(s - c) - E
    x = np.linspace(-0.5, 0.5, n)
    f = F(x)
    out = []
    for i in np.nonzero(np.sign(f[:-1]) != np.sign(f[1:]))[0]:
        out.append(brentq(F, x[i], x[i + 1], xtol=1e-15))
    for i in np.nonzero(f == 0)[0]:
        out.append(x[i])
    return np.unique(np.round(out, 12))


def dense_quadratic_form(alpha: dict, q):
    """(1/2) sum_xy alpha(x-y) q_x q_y on a periodic chain, by explicit loops."""
    L = len(q)
    A = np.zeros((L, L))
    for x in range(L):
        for off, val in alpha.items():
            o = off[0] if isinstance(off, tuple) else off
            A[x, (x + o) % L] += val
    return 0.5 * q @ A @ q


def direct_dft(x):
    L = len(x)
    idx = np.arange(L)
    return np.array([np.sum(x * np.exp(-2j * np.pi * j * idx / L)) for j in range(L)])


def normal_equations_fit(psi, omega):
    A = np.stack([np.ones_like(omega), omega], axis=1)
    coef = np.linalg.solve(A.T @ A, A.T @ psi)
    return coef, np.linalg.norm(A @ coef - psi) / np.linalg.norm(psi)


def rk4_dense_reference(f, y0, T, n):
    """Classical RK4 with ``n`` steps; used with large ``n`` as a time reference."""
    y, h = np.array(y0, dtype=float), T / n
    for _ in range(n):
        a = f(y)
        b = f(y + 0.5 * h * a)
        c = f(y + 0.5 * h * b)
        d = f(y + h * c)
        y = y + h / 6 * (a + 2 * b + 2 * c + d)
    return y
