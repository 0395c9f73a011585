"""Tangent-space algebra on SO(3) embedded in R^{3x3}.

The ambient space carries the Frobenius metric <M, N> = tr(M^T N); the
tangent space at R is {R X : X skew}.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-10
_SMALL_ANGLE = 1e-8


class InvalidAxesError(ValueError):
    """Raised when an underactuation axis pair is degenerate."""


def hat(w):
    """Skew matrix with ``hat(w) @ b == cross(w, b)``."""
    w = np.asarray(w, dtype=float)
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(S):
    """Inverse of :func:`hat` on skew matrices."""
    S = np.asarray(S, dtype=float)
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def sk(M):
    M = np.asarray(M, dtype=float)
    return 0.5 * (M - M.T)


def inner(M, N):
    return float(np.sum(np.asarray(M, dtype=float) * np.asarray(N, dtype=float)))


def is_rotation(R, tol=ROTATION_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    ortho = np.linalg.norm(R.T @ R - np.eye(3))
    return bool(ortho < tol and abs(np.linalg.det(R) - 1.0) < tol)


def check_rotation(R, tol=ROTATION_TOL):
    R = np.asarray(R, dtype=float)
    if not is_rotation(R, tol):
        raise ValueError("matrix is not in SO(3) within tolerance %g" % tol)
    return R


def reorthonormalize(R):
    """Nearest rotation in the Frobenius sense (polar factor)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1.0
        Q = U @ Vt
    return Q


def expm_skew(S):
    """Matrix exponential of a 3x3 skew matrix by the Rodrigues formula."""
    w = vee(S)
    theta = float(np.linalg.norm(w))
    K = hat(w)
    if theta < _SMALL_ANGLE:
        # second-order series; remainder is O(theta^3)
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def log_rotation(R):
    """Principal logarithm of a rotation, returned as a skew matrix."""
    R = np.asarray(R, dtype=float)
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = float(np.arccos(c))
    if theta < _SMALL_ANGLE:
        return sk(R)
    if np.pi - theta < 1e-6:
        # near pi the skew part vanishes; recover the axis from R + I
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        return hat(theta * axis)
    return theta / (2.0 * np.sin(theta)) * (R - R.T)


def project_tangent(R, M):
    """Orthogonal projection of an ambient matrix onto T_R SO(3)."""
    R = np.asarray(R, dtype=float)
    return R @ sk(R.T @ np.asarray(M, dtype=float))


def retract(R, G, step):
    """``R expm(step R^T G)``; ``step == 0`` returns ``R`` untouched."""
    R = np.asarray(R, dtype=float)
    if step == 0:
        return R.copy()
    return R @ expm_skew(step * sk(R.T @ np.asarray(G, dtype=float)))


@dataclass(frozen=True, eq=False)
class AxisPair:
    """Actuated rotation axes of a sensor.

    ``xi2`` may be the zero vector for a single-axis (pan-only) mount.
    Each axis is either fixed in the sensor body frame or in the world
    frame; a pan-tilt head has a world-fixed pan axis and a body-fixed
    tilt axis.
    """

    xi1: np.ndarray
    xi2: np.ndarray = field(default_factory=lambda: np.zeros(3))
    world1: bool = False
    world2: bool = False

    def __post_init__(self):
        xi1 = np.asarray(self.xi1, dtype=float).reshape(3)
        xi2 = np.asarray(self.xi2, dtype=float).reshape(3)
        if abs(np.linalg.norm(xi1) - 1.0) > 1e-12:
            raise InvalidAxesError("xi1 must be a unit vector")
        n2 = np.linalg.norm(xi2)
        if n2 != 0.0 and abs(n2 - 1.0) > 1e-12:
            raise InvalidAxesError("xi2 must be a unit vector or zero")
        if n2 != 0.0 and abs(xi1 @ xi2) >= 1.0 - 1e-9:
            raise InvalidAxesError("xi1 and xi2 are parallel")
        object.__setattr__(self, "xi1", xi1)
        object.__setattr__(self, "xi2", xi2)

    @property
    def single(self):
        return not np.any(self.xi2)

    def body_axes(self, R):
        """Axes expressed in the sensor frame at orientation ``R``."""
        R = np.asarray(R, dtype=float)
        a1 = R.T @ self.xi1 if self.world1 else self.xi1
        a2 = R.T @ self.xi2 if self.world2 else self.xi2
        return a1, a2


def underactuated_coefficients(N, xi1, xi2):
    """Coefficients of the metric projection of skew ``N`` onto
    span{hat(xi1), hat(xi2)}.

    The closed form sometimes quoted for this projection,
    ``(<N, h_l> - <h_1, h_2><N, h_-l>) / (1 - <h_1, h_2>^2)``, treats the
    generators as unit vectors; under the trace metric ``<h, h> = 2`` for a
    unit axis, so here the 2x2 Gram system is solved instead.
    """
    h1 = hat(xi1)
    if not np.any(xi2):
        return np.array([inner(N, h1) / inner(h1, h1), 0.0])
    h2 = hat(xi2)
    G = np.array([[inner(h1, h1), inner(h1, h2)],
                  [inner(h2, h1), inner(h2, h2)]])
    rhs = np.array([inner(N, h1), inner(N, h2)])
    if abs(np.linalg.det(G)) < 1e-12 * G[0, 0] * G[1, 1]:
        raise InvalidAxesError("singular Gram matrix: axes are parallel")
    return np.linalg.solve(G, rhs)


def project_underactuated(R, G, axes):
    """Project a tangent vector at ``R`` onto R span{hat(xi1), hat(xi2)}."""
    R = np.asarray(R, dtype=float)
    xi1, xi2 = axes.body_axes(R)
    N = sk(R.T @ np.asarray(G, dtype=float))
    c = underactuated_coefficients(N, xi1, xi2)
    return R @ (c[0] * hat(xi1) + c[1] * hat(xi2))


def random_rotation(rng):
    """Uniformly distributed rotation (QR of a Gaussian matrix)."""
    A = rng.standard_normal((3, 3))
    Q, Rr = np.linalg.qr(A)
    Q = Q @ np.diag(np.sign(np.diag(Rr)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1.0
    return Q
