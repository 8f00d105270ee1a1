"""Finite-difference operators on regular 2-D grids.

Scalar fields are float64 arrays of shape (M, N); axis 0 is x1 (rows, index i),
axis 1 is x2 (columns, index j). Vector fields stack the two components as
shape (2, M, N). Grid spacing is 1. Out-of-range neighbors of a scalar field
replicate the border value (homogeneous Neumann).
"""

import numpy as np

_SCHEMES = ("forward", "backward", "central")


def gradient(f, scheme="forward"):
    """Componentwise difference of f, shape (2, M, N).

    forward:  d[i] = f[i+1] - f[i]   (zero on the high border)
    backward: d[i] = f[i] - f[i-1]   (zero on the low border)
    central:  d[i] = (f[i+1] - f[i-1]) / 2
    """
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {_SCHEMES}")
    f = np.asarray(f, dtype=np.float64)
    p = np.pad(f, 1, mode="edge")
    c = p[1:-1, 1:-1]
    if scheme == "forward":
        d1 = p[2:, 1:-1] - c
        d2 = p[1:-1, 2:] - c
    elif scheme == "backward":
        d1 = c - p[:-2, 1:-1]
        d2 = c - p[1:-1, :-2]
    else:
        d1 = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
        d2 = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    return np.stack((d1, d2))


def divergence(v):
    """Backward-difference divergence of a (2, M, N) vector field.

    The ghost flux below the low border is zero (no flux crosses the
    boundary), which makes divergence(gradient(f, "forward")) reproduce
    laplacian(f) exactly, border rows included.
    """
    v = np.asarray(v, dtype=np.float64)
    v1, v2 = v[0], v[1]
    d1 = np.empty_like(v1)
    d1[0, :] = v1[0, :]
    d1[1:, :] = v1[1:, :] - v1[:-1, :]
    d2 = np.empty_like(v2)
    d2[:, 0] = v2[:, 0]
    d2[:, 1:] = v2[:, 1:] - v2[:, :-1]
    return d1 + d2


def laplacian(f):
    """Five-point Laplacian with replicated borders."""
    f = np.asarray(f, dtype=np.float64)
    p = np.pad(f, 1, mode="edge")
    return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
            - 4.0 * p[1:-1, 1:-1])


def dot(u, v):
    """Pointwise inner product of two (2, M, N) fields, shape (M, N)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    return u[0] * v[0] + u[1] * v[1]


def magnitude(v):
    """Pointwise Euclidean norm of a (2, M, N) field, shape (M, N)."""
    v = np.asarray(v, dtype=np.float64)
    return np.sqrt(v[0] * v[0] + v[1] * v[1])
