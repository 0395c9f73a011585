"""Pinhole projection onto a horizontal environment plane.

Frames follow the usual camera convention: the sensor's z axis is the
optical axis and the image plane sits at z = focal length. Pixel indices
are row-major from the top-left corner (-w/2, -h/2).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .manifold import AxisPair, check_rotation

E3 = np.array([0.0, 0.0, 1.0])
_DEPTH_EPS = 1e-12
# relative conditioning threshold for the two-vertex line construction
_LINE_COND = 1e-9


class GeometryError(ValueError):
    pass


class DegenerateProjectionError(GeometryError):
    """Point at zero depth in the sensor frame."""


class HorizonError(GeometryError):
    """Viewing ray parallel to, or pointing away from, the environment plane."""


def transform(p, R, x):
    """Coordinates in the parent frame: ``R x + p``."""
    return np.asarray(R, dtype=float) @ np.asarray(x, dtype=float) + np.asarray(p, dtype=float)


def inverse_transform(p, R, x):
    return np.asarray(R, dtype=float).T @ (np.asarray(x, dtype=float) - np.asarray(p, dtype=float))


def _convex_ccw(poly):
    n = len(poly)
    if n < 3:
        return False
    for k in range(n):
        a, b, c = poly[k], poly[(k + 1) % n], poly[(k + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= 0:
            return False
    return True


def polygon_halfspaces(poly):
    """Outward normals and offsets of a CCW convex polygon: ``n.q <= c``."""
    poly = np.asarray(poly, dtype=float)
    edges = np.roll(poly, -1, axis=0) - poly
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    offsets = np.einsum("ij,ij->i", normals, poly)
    return normals, offsets


@dataclass(frozen=True, eq=False)
class Environment:
    """Environment plane e3.q = gamma with a convex mission polygon."""

    gamma: float
    mission: np.ndarray
    phi_bar: float

    def __post_init__(self):
        mission = np.asarray(self.mission, dtype=float)
        if mission.ndim != 2 or mission.shape[1] != 2:
            raise ValueError("mission must be a (k, 2) array of plane coordinates")
        if not _convex_ccw(mission):
            raise ValueError("mission polygon must be convex with CCW vertices")
        if not self.phi_bar > 0:
            raise ValueError("phi_bar must be positive")
        object.__setattr__(self, "mission", mission)
        normals, offsets = polygon_halfspaces(mission)
        object.__setattr__(self, "_normals", normals)
        object.__setattr__(self, "_offsets", offsets)

    @classmethod
    def rectangle(cls, gamma, half_x, half_y, phi_bar, center=(0.0, 0.0)):
        cx, cy = center
        poly = [(cx - half_x, cy - half_y), (cx + half_x, cy - half_y),
                (cx + half_x, cy + half_y), (cx - half_x, cy + half_y)]
        return cls(gamma, np.array(poly), phi_bar)

    @property
    def halfspaces(self):
        """Outward edge normals and offsets of Q: ``n.q <= c``."""
        return self._normals, self._offsets

    def in_mission(self, q):
        """Membership of plane points (``(..., 2)`` or ``(..., 3)``) in Q."""
        q = np.asarray(q, dtype=float)[..., :2]
        return np.all(q @ self._normals.T <= self._offsets, axis=-1)


def center_weights(centers, corner):
    """``(|corner| + 4e-4) / (|p_il| + 4e-4)``: heavier towards the image centre."""
    return (np.linalg.norm(corner) + 4e-4) / (np.linalg.norm(centers, axis=1) + 4e-4)


@dataclass(frozen=True, eq=False)
class Sensor:
    """A fixed-position camera with a controllable orientation.

    ``weights`` is either ``None`` (uniform), the string ``"center"`` for the
    centre-heavy rule, or an explicit array of length ``n_u * n_v``.
    """

    id: int
    position: np.ndarray
    lam: float
    plane_w: float
    plane_h: float
    n_u: int = 1
    n_v: int = 1
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    weights: object = None
    axes: Optional[AxisPair] = None

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float).reshape(3)
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "rotation", check_rotation(self.rotation).copy())
        if not self.lam > 0:
            raise ValueError("focal length must be positive")
        if not (self.plane_w > 0 and self.plane_h > 0):
            raise ValueError("image plane sides must be positive")
        if self.n_u < 1 or self.n_v < 1:
            raise ValueError("pixel grid counts must be >= 1")
        centers = pixel_centers(self)
        if self.weights is None:
            w = np.ones(len(centers))
        elif isinstance(self.weights, str):
            if self.weights != "center":
                raise ValueError("unknown weight rule %r" % self.weights)
            w = center_weights(centers, self.corners()[0])
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != (len(centers),):
                raise ValueError("weights must have one entry per pixel")
        if not np.all(w > 0):
            raise ValueError("pixel weights must be positive")
        object.__setattr__(self, "_centers", centers)
        object.__setattr__(self, "_w", w)

    @property
    def n_pixels(self):
        return self.n_u * self.n_v

    @property
    def centers(self):
        return self._centers

    @property
    def pixel_weights(self):
        return self._w

    def corners(self):
        """Image-plane vertices, CCW when viewed along the optical axis."""
        hw, hh = 0.5 * self.plane_w, 0.5 * self.plane_h
        return np.array([[-hw, -hh, self.lam], [hw, -hh, self.lam],
                         [hw, hh, self.lam], [-hw, hh, self.lam]])

    def with_rotation(self, R):
        return replace(self, rotation=np.asarray(R, dtype=float))


def pixel_centers(sensor):
    """Pixel centres in the sensor frame, row-major from the top-left."""
    du = sensor.plane_w / sensor.n_u
    dv = sensor.plane_h / sensor.n_v
    x = -0.5 * sensor.plane_w + du * (np.arange(sensor.n_u) + 0.5)
    y = -0.5 * sensor.plane_h + dv * (np.arange(sensor.n_v) + 0.5)
    X, Y = np.meshgrid(x, y)  # rows follow v
    return np.column_stack([X.ravel(), Y.ravel(), np.full(X.size, float(sensor.lam))])


def plane_offset(sensor, env):
    """Signed height of the plane above the sensor, gamma - e3.p_wi."""
    d = env.gamma - sensor.position[2]
    if d == 0:
        raise GeometryError("sensor %d lies on the environment plane" % sensor.id)
    return d


def project_to_image(sensor, q):
    q = np.asarray(q, dtype=float)
    depth = q[..., 2]
    if np.any(np.abs(depth) < _DEPTH_EPS):
        raise DegenerateProjectionError("point at zero depth")
    return sensor.lam / depth[..., None] * q


def ray_scale(sensor, env, M, p):
    """``delta / (e3^T M p)`` per image point and a validity mask.

    A ray is valid when it meets the plane in front of the camera.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    denom = p @ np.asarray(M, dtype=float)[2]
    delta = plane_offset(sensor, env)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = delta / denom
    valid = (np.abs(denom) > _DEPTH_EPS) & (s > 0) & np.isfinite(s)
    return s, valid


def back_project(sensor, env, p_im, R=None):
    """Sensor-frame coordinates of the plane point seen at image point ``p_im``."""
    R = sensor.rotation if R is None else R
    p_im = np.asarray(p_im, dtype=float)
    s, valid = ray_scale(sensor, env, R, p_im)
    if not np.all(valid):
        raise HorizonError("ray does not meet the environment plane")
    out = s[:, None] * np.atleast_2d(p_im)
    return out[0] if p_im.ndim == 1 else out


def pixel_world_point(sensor, env, M, l=None, points=None):
    """Ambient-extended world point ``delta M p / (e3^T M p) + p_wi``.

    ``l`` selects pixel indices (int or array); ``points`` overrides with
    arbitrary image points. Raises :class:`HorizonError` on invalid rays.
    """
    if points is None:
        points = sensor.centers if l is None else sensor.centers[l]
    points = np.asarray(points, dtype=float)
    M = np.asarray(M, dtype=float)
    s, valid = ray_scale(sensor, env, M, points)
    if not np.all(valid):
        raise HorizonError("pixel ray does not meet the environment plane")
    out = s[:, None] * (np.atleast_2d(points) @ M.T) + sensor.position
    return out[0] if points.ndim == 1 else out


def world_points(sensor, env, R, points=None):
    """Like :func:`pixel_world_point` but never raises; returns a validity mask."""
    points = sensor.centers if points is None else np.atleast_2d(points)
    R = np.asarray(R, dtype=float)
    s, valid = ray_scale(sensor, env, R, points)
    s = np.where(valid, s, 0.0)
    return s[:, None] * (points @ R.T) + sensor.position, valid


@dataclass(frozen=True, eq=False)
class FovPolytope:
    """Camera footprint as 4 plane vertices and 4 half-planes ``A q <= b``."""

    vertices: np.ndarray
    A: np.ndarray
    b: np.ndarray
    interior: np.ndarray

    def contains(self, q, tol=0.0):
        q = np.asarray(q, dtype=float)[..., :2]
        return np.all(q @ self.A.T <= self.b + tol, axis=-1)

    def flat(self):
        """Vertex plane coordinates as 8 numbers (x1, y1, ..., x4, y4)."""
        return self.vertices[:, :2].ravel()


def _side_halfspace(v1, v2, interior):
    """Half-plane through ``v1, v2`` containing ``interior``.

    The line is written as ``A q = 1`` with ``A = [1 1] [v1 v2]^{-1}`` and
    oriented with ``sign(1 - A p0)``. When the side passes (nearly) through
    the plane origin that form does not exist, so the normal form
    ``n.q = n.v1`` is used instead.
    """
    V = np.column_stack([v1, v2])
    scale = max(np.linalg.norm(v1) * np.linalg.norm(v2), 1e-300)
    if abs(np.linalg.det(V)) > _LINE_COND * scale:
        A = np.linalg.solve(V.T, np.ones(2))
        sgn = np.sign(1.0 - A @ interior)
        return sgn * A, sgn
    d = v2 - v1
    n = np.array([d[1], -d[0]])
    c = n @ v1
    if n @ interior > c:
        n, c = -n, -c
    return n, c


def fov(sensor, env, R=None):
    """Field-of-view polytope of ``sensor`` at orientation ``R``."""
    R = sensor.rotation if R is None else np.asarray(R, dtype=float)
    corners = sensor.corners()
    try:
        verts = pixel_world_point(sensor, env, R, points=corners)
        center = pixel_world_point(sensor, env, R, points=np.array([0.0, 0.0, sensor.lam]))
    except HorizonError as exc:
        raise HorizonError("field of view of sensor %d is unbounded" % sensor.id) from exc
    p0 = center[:2]
    A = np.empty((4, 2))
    b = np.empty(4)
    for k in range(4):
        A[k], b[k] = _side_halfspace(verts[k, :2], verts[(k + 1) % 4, :2], p0)
    return FovPolytope(verts, A, b, p0)


def performance(sensor, W, q):
    """``(q - p)^T W (q - p) / lam``, vectorised over leading axes."""
    d = np.asarray(q, dtype=float) - sensor.position
    return np.einsum("...i,ij,...j->...", d, np.asarray(W, dtype=float), d) / sensor.lam


def dominates(q, si, sj, W):
    """True where sensor ``sj`` strictly outperforms ``si`` at ``q``."""
    di = np.asarray(q, dtype=float) - si.position
    dj = np.asarray(q, dtype=float) - sj.position
    W = np.asarray(W, dtype=float)
    ni = np.einsum("...i,ij,...j->...", di, W, di)
    nj = np.einsum("...i,ij,...j->...", dj, W, dj)
    return sj.lam * ni > si.lam * nj


def owner(q, sensors: Sequence[Sensor], fovs, W, covering=None):
    """Index of the sensor claiming each point (-1 if no FOV covers it).

    Among the sensors whose FOV contains the point, the one with the
    smallest performance wins; ties go to the lowest id.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    best = np.full(len(q), -1)
    best_f = np.full(len(q), np.inf)
    for k in np.argsort([s.id for s in sensors], kind="stable"):
        s = sensors[k]
        inside = fovs[k].contains(q) if covering is None else covering[k]
        f = performance(s, W, q)
        take = inside & (f < best_f)
        best[take] = k
        best_f[take] = f[take]
    return best


def active_pixels(i, sensors, env, W, rotations=None, pixels=None, fovs=None):
    """Boolean mask over the pixels of sensor ``i`` that it keeps.

    A pixel is kept when its plane point lies in the mission space and no
    other sensor covering that point does strictly better there (ties go to
    the lower id). Invalid rays are never kept.
    """
    if rotations is None:
        rotations = [s.rotation for s in sensors]
    si = sensors[i]
    pts = si.centers if pixels is None else si.centers[pixels]
    q, valid = world_points(si, env, rotations[i], pts)
    keep = valid & env.in_mission(q)
    if len(sensors) == 1 or not np.any(keep):
        return keep
    if fovs is None:
        fovs = [fov(s, env, Rk) for s, Rk in zip(sensors, rotations)]
    W = np.asarray(W, dtype=float)
    di = q - si.position
    ni = np.einsum("...i,ij,...j->...", di, W, di)
    for j, sj in enumerate(sensors):
        if j == i:
            continue
        inside = fovs[j].contains(q)
        dj = q - sj.position
        nj = np.einsum("...i,ij,...j->...", dj, W, dj)
        lhs, rhs = sj.lam * ni, si.lam * nj
        beaten = inside & ((lhs > rhs) | ((lhs == rhs) & (sj.id < si.id)))
        keep &= ~beaten
    return keep
