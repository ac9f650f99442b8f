"""Rotation utilities: continuous 6D parameterization, axis-angle, yaw.

The 6D parameterization stores the first two columns of a rotation matrix;
decoding runs Gram-Schmidt and completes the third column with a cross
product, so any non-degenerate 6-vector maps to a proper rotation.
All functions accept arbitrary leading batch dimensions.
"""

import numpy as np

from .errors import InvalidRotationError

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

_DEGENERATE_TOL = 1e-8


def rot6d_to_matrix(r):
    """Decode 6D rotation(s) (..., 6) to rotation matrices (..., 3, 3).

    Columns are [c1, c2, c1 x c2] with c1 = normalize(r[0:3]) and c2 the
    normalized component of r[3:6] orthogonal to c1.

    Raises InvalidRotationError if either implied vector is (near) zero or
    the two are (near) parallel.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise InvalidRotationError(f"expected trailing dim 6, got {r.shape}")
    a = r[..., 0:3]
    b = r[..., 3:6]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < _DEGENERATE_TOL):
        raise InvalidRotationError("first 6D vector is numerically zero")
    c1 = a / na
    b_perp = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nb = np.linalg.norm(b_perp, axis=-1, keepdims=True)
    if np.any(nb < _DEGENERATE_TOL):
        raise InvalidRotationError("6D vectors are numerically parallel")
    c2 = b_perp / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def rot6d_to_matrix_safe(r, fallback_counter=None):
    """Like rot6d_to_matrix but degenerate rows decode to the identity.

    fallback_counter, when given, is a one-element list incremented by the
    number of rows that fell back.
    """
    r = np.asarray(r, dtype=np.float64)
    a = r[..., 0:3]
    b = r[..., 3:6]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    bad_a = na < _DEGENERATE_TOL
    c1 = np.where(bad_a, [1.0, 0.0, 0.0], a / np.where(bad_a, 1.0, na))
    b_perp = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    nb = np.linalg.norm(b_perp, axis=-1, keepdims=True)
    bad_b = nb < _DEGENERATE_TOL
    c2 = np.where(bad_b, [0.0, 1.0, 0.0], b_perp / np.where(bad_b, 1.0, nb))
    bad = (bad_a | bad_b)[..., 0]
    if np.any(bad):
        ident = np.broadcast_to(np.eye(3), r.shape[:-1] + (3, 3))
        c1 = np.where(bad[..., None], ident[..., :, 0], c1)
        c2 = np.where(bad[..., None], ident[..., :, 1], c2)
        if fallback_counter is not None:
            fallback_counter[0] += int(np.count_nonzero(bad))
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def matrix_to_rot6d(m, tol=1e-5):
    """Encode rotation matrices (..., 3, 3) as 6-vectors (first two columns).

    Raises InvalidRotationError when the input is not a rotation matrix
    within ``tol`` (orthonormality and det +1).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[-2:] != (3, 3):
        raise InvalidRotationError(f"expected (..., 3, 3), got {m.shape}")
    mtm = np.swapaxes(m, -1, -2) @ m
    if np.max(np.abs(mtm - np.eye(3))) > tol:
        raise InvalidRotationError("matrix is not orthonormal")
    if np.any(np.abs(np.linalg.det(m) - 1.0) > tol):
        raise InvalidRotationError("matrix determinant is not +1")
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def axis_angle_to_matrix(axis, angle):
    """Rodrigues formula for axis (..., 3), angle (...) in radians.

    Axes need not be normalized; a zero angle yields the exact identity.
    """
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    n = np.linalg.norm(axis, axis=-1, keepdims=True)
    u = axis / np.where(n < 1e-12, 1.0, n)
    x, y, z = u[..., 0], u[..., 1], u[..., 2]
    zero = np.zeros_like(x)
    k = np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + s * k + (1.0 - c) * (k @ k)


def yaw_matrix(theta):
    """Rotation about the world up axis (+y) by theta (...) radians."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    zero = np.zeros_like(c)
    one = np.ones_like(c)
    return np.stack([
        np.stack([c, zero, s], axis=-1),
        np.stack([zero, one, zero], axis=-1),
        np.stack([-s, zero, c], axis=-1),
    ], axis=-2)


def yaw_of_matrix(m):
    """Heading of rotation(s) (..., 3, 3): yaw of the body +z axis in xz.

    Defined as atan2 of the x/z components of the rotated forward axis, so
    ``yaw_of_matrix(yaw_matrix(t)) == t`` for t in (-pi, pi].
    """
    m = np.asarray(m, dtype=np.float64)
    fwd = m[..., :, 2]
    return np.arctan2(fwd[..., 0], fwd[..., 2])


def is_rotation(m, tol=1e-6):
    """True where (..., 3, 3) entries are rotations within tol."""
    m = np.asarray(m, dtype=np.float64)
    mtm = np.swapaxes(m, -1, -2) @ m
    ortho = np.max(np.abs(mtm - np.eye(3)), axis=(-1, -2)) <= tol
    det = np.abs(np.linalg.det(m) - 1.0) <= tol
    return ortho & det
