"""Unit-sphere primitives shared by every other module.

Directions are plain ``float64`` arrays of shape ``(3,)`` (or ``(..., 3)`` for
the batched helpers). Unoriented quantities are stored with a canonical sign:
the first component whose magnitude exceeds ``SIGN_EPS`` is non-negative.
"""

import numpy as np

from .exceptions import DegenerateVector

NORM_EPS = 1e-12
SIGN_EPS = 1e-9


def canonicalize(v):
    """Flip rows of ``v`` so the first significant component is non-negative.

    Works on a single 3-vector or any ``(..., 3)`` stack. Rows that are all
    below ``SIGN_EPS`` are returned unchanged.
    """
    v = np.asarray(v, dtype=float)
    significant = np.abs(v) > SIGN_EPS
    first = np.argmax(significant, axis=-1)
    lead = np.take_along_axis(v, first[..., None], axis=-1)[..., 0]
    sign = np.where(lead < 0.0, -1.0, 1.0)
    return v * sign[..., None]


def normalize_rows(v, eps=NORM_EPS):
    """Normalize a stack of vectors; returns ``(unit, norms, ok)``.

    Rows with norm ``<= eps`` come back as zeros with ``ok`` False.
    """
    v = np.asarray(v, dtype=float)
    norms = np.linalg.norm(v, axis=-1)
    ok = norms > eps
    safe = np.where(ok, norms, 1.0)
    unit = np.where(ok[..., None], v / safe[..., None], 0.0)
    return unit, norms, ok


def unit_normalize(v):
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ValueError(f"expected a finite 3-vector, got {v!r}")
    n = np.linalg.norm(v)
    if n <= NORM_EPS:
        raise DegenerateVector(f"cannot normalize vector of norm {n:.3g}")
    return canonicalize(v / n)


def bearing(rot, calib, pixel):
    """World-frame bearing of a homogeneous pixel, ``R K^-1 u`` normalized.

    The geometric sign is kept: bearings feed a cross product, and
    canonicalizing them first would flip correspondence normals at random.
    """
    rot = np.asarray(rot, dtype=float)
    calib = np.asarray(calib, dtype=float)
    pixel = np.asarray(pixel, dtype=float)
    if not np.all(np.isfinite(pixel)) or not np.any(pixel):
        raise DegenerateVector("pixel must be finite and not all zero")
    ray = rot @ np.linalg.solve(calib, pixel)
    n = np.linalg.norm(ray)
    if n <= NORM_EPS:
        raise DegenerateVector(f"bearing has norm {n:.3g}")
    return ray / n


def correspondence_normal(b_i, b_j):
    """Unit normal of the epipolar plane spanned by two bearings.

    Returns ``None`` when the bearings are parallel (the match is discarded).
    """
    c = np.cross(b_i, b_j)
    n = np.linalg.norm(c)
    if n <= NORM_EPS:
        return None
    return canonicalize(c / n)


def angular_residual(g, x):
    """Unoriented angle (radians) between ``g`` and the plane orthogonal to ``x``."""
    dot = np.abs(np.sum(np.asarray(g) * np.asarray(x), axis=-1))
    return np.arcsin(np.clip(dot, 0.0, 1.0))


def unoriented_error(c, g_star):
    """Sign-invariant error ``sqrt(1 - (c.g)^2)``, in [0, 1].

    Evaluated as ``|c x g|``, which equals it for unit inputs and stays
    accurate near zero where the square-root form bottoms out around 1e-8.
    """
    cross = np.cross(np.asarray(c, dtype=float), np.asarray(g_star, dtype=float))
    return np.clip(np.linalg.norm(cross, axis=-1), 0.0, 1.0)


def triple_product(ga, gb, gc):
    return np.sum(np.asarray(ga) * np.cross(gb, gc), axis=-1)


def unoriented_angle(g1, g2):
    """Angle in degrees between two unoriented lines, in [0, 90].

    Equal to ``arccos(|g1.g2|)``; evaluated through ``atan2`` so that nearly
    identical directions do not pick up ~1e-6 degree rounding noise.
    """
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    dot = np.abs(np.sum(g1 * g2, axis=-1))
    cross = np.linalg.norm(np.cross(g1, g2), axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def sample_sphere(rng, size):
    """Uniform points on S^2 from normalized standard Gaussians (not canonicalized)."""
    z = rng.standard_normal((size, 3))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def orthonormal_complement(g):
    """Two unit vectors spanning the plane orthogonal to ``g``.

    Built from the coordinate axis least aligned with ``g`` (lowest index on
    ties) followed by Gram-Schmidt; the second vector is ``g x u1``.
    """
    g = np.asarray(g, dtype=float)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(g)))] = 1.0
    u1 = axis - (axis @ g) * g
    u1 /= np.linalg.norm(u1)
    u2 = np.cross(g, u1)
    return u1, u2


def orthonormal_complement_batch(g):
    """Row-wise :func:`orthonormal_complement` for an ``(m, 3)`` stack."""
    g = np.asarray(g, dtype=float)
    idx = np.argmin(np.abs(g), axis=1)
    axis = np.zeros_like(g)
    axis[np.arange(len(g)), idx] = 1.0
    u1 = axis - np.sum(axis * g, axis=1, keepdims=True) * g
    u1 /= np.linalg.norm(u1, axis=1, keepdims=True)
    u2 = np.cross(g, u1)
    return u1, u2
