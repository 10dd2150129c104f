"""Independent reference computations. Nothing here imports the code under test."""

import cmath
import math

import numpy as np
from scipy.optimize import brentq

Q = 1.602176634e-19
EPS0 = 8.8541878128e-12
AMU = 1.66053906660e-27


def length_scale(mass_u, f_hz):
    omega = 2 * math.pi * f_hz
    return (Q**2 / (4 * math.pi * EPS0 * mass_u * AMU * omega**2)) ** (1 / 3)


def two_point_sqrt_calibration(p1, p2):
    (u1, f1), (u2, f2) = p1, p2
    ratio = (f1 / f2) ** 2
    u0 = (u1 - ratio * u2) / (1 - ratio)
    return f1 / math.sqrt(u1 - u0), u0


def chain_energy_minimum(n, starts=5, seed=0, iters=20000):
    """Equilibrium by Barzilai-Borwein gradient descent on the Coulomb + harmonic energy."""

    iu = np.triu_indices(n, 1)

    def grad(u):
        d = u[:, None] - u[None, :]
        inv = np.zeros_like(d)
        mask = ~np.eye(n, dtype=bool)
        inv[mask] = np.sign(d[mask]) / d[mask] ** 2
        return u - inv.sum(axis=1)

    def energy(u):
        return 0.5 * float(np.sum(u**2)) + float(np.sum(1.0 / np.abs(u[:, None] - u[None, :])[iu]))

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(starts):
        u = np.sort(rng.uniform(-n, n, n)) + np.arange(n) * 0.1
        g = grad(u)
        step = 1e-3
        for _ in range(iters):
            # never move an ion by more than a quarter of its nearest gap
            gap = np.min(np.diff(u)) if n > 1 else 1.0
            step = min(step, 0.25 * gap / max(np.max(np.abs(g)), 1e-300))
            u_new = u - step * g
            g_new = grad(u_new)
            s, y = u_new - u, g_new - g
            u, g = u_new, g_new
            if np.max(np.abs(g)) < 1e-13:
                break
            sy = float(s @ y)
            step = float(s @ s) / sy if sy > 0 else 1e-3
        if best is None or energy(u) < energy(best):
            best = u
    return best


def direct_pattern(z_positions, wavelength, theta, amplitudes, fractions, contrast, i_incoh, kappa):
    """Per-pair sum: auto terms in full, cross terms weighted by the contrast factor."""
    k = 2 * math.pi / wavelength * (1 - math.cos(theta))
    total = 0.0
    n = len(z_positions)
    for j in range(n):
        total += amplitudes[j] ** 2
        for m in range(n):
            if m != j:
                phase = cmath.exp(1j * k * (z_positions[j] - z_positions[m]))
                total += contrast * math.sqrt(fractions[j] * fractions[m]) * amplitudes[j] * amplitudes[m] * phase.real
    return i_incoh + kappa * total


def nslit_fwhm(n):
    """Exact phase FWHM of (sin(N x/2) / sin(x/2))^2 at its principal maximum."""
    f = lambda x: math.sin(n * x / 2) ** 2 / (n**2 * math.sin(x / 2) ** 2) - 0.5
    return 2 * brentq(f, 1e-9, 2 * math.pi / n * 0.999, xtol=1e-15)
