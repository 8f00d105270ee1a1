"""Mollified interface kernels and the pointwise vector operations
used by the constraint splitting.

All functions broadcast over numpy arrays; eps is a strictly positive
mollification width.
"""

import numpy as np


def _check_eps(eps):
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")


def heaviside_eps(phi, eps):
    """Smoothed Heaviside, 0.5 * (1 + (2/pi) * arctan(phi/eps))."""
    _check_eps(eps)
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(np.asarray(phi, dtype=np.float64) / eps))


def dirac_eps(phi, eps):
    """Derivative of heaviside_eps: (1/pi) * eps / (eps^2 + phi^2)."""
    _check_eps(eps)
    phi = np.asarray(phi, dtype=np.float64)
    return (eps / np.pi) / (eps * eps + phi * phi)


def dirac_eps_prime(phi, eps):
    """Derivative of dirac_eps: -(2/pi) * eps * phi / (eps^2 + phi^2)^2."""
    _check_eps(eps)
    phi = np.asarray(phi, dtype=np.float64)
    s = eps * eps + phi * phi
    return -(2.0 / np.pi) * eps * phi / (s * s)


def shrink_p(a, threshold):
    """Anisotropic-free vector shrinkage.

    Pointwise max(|a| - threshold, 0) * a / (|a| + 1e-6); a is (2, ...) and
    threshold broadcasts against |a|. Callers clamp threshold at 0.
    """
    a = np.asarray(a, dtype=np.float64)
    mag = np.sqrt(a[0] * a[0] + a[1] * a[1])
    scale = np.maximum(mag - threshold, 0.0) / (mag + 1e-6)
    return a * scale


def normalize_unit(v):
    """v / |v| where |v| > 0, zero vector elsewhere; |result| is 0 or 1."""
    v = np.asarray(v, dtype=np.float64)
    mag = np.sqrt(v[0] * v[0] + v[1] * v[1])
    safe = np.where(mag > 0.0, mag, 1.0)
    return np.where(mag > 0.0, v / safe, 0.0)


def project_unit_ball(v):
    """Radial projection onto |v| <= 1: v / max(1, |v|)."""
    v = np.asarray(v, dtype=np.float64)
    mag = np.sqrt(v[0] * v[0] + v[1] * v[1])
    return v / np.maximum(mag, 1.0)
