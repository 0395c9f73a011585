"""Coverage objective over pixel footprints and its gradient on SO(3).

For a sensor ``i`` with pixel centres ``p_l`` the objective at a rotation
``R`` is

    H_i(R) = sum_l w_l f_i(q_l(R)) phi(q_l(R)),

where ``q_l(R)`` is the plane point seen by pixel ``l`` and
``f_i(q) = |q - p_wi|_W^2 / lam``. The image-plane density is anchored at
the rotation where it was estimated, which is what makes the ambient
extension over ``R^{3x3}`` (and therefore the closed-form gradient)
well defined.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import (active_pixels, fov, performance, plane_offset, world_points)
from .manifold import project_tangent, sk


@dataclass(frozen=True, eq=False)
class ObjectiveParams:
    """Performance weight ``W`` and the evaluation-pixel stride.

    ``stride`` keeps every ``stride``-th pixel along both image axes.
    """

    W: np.ndarray
    stride: int = 1

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.shape != (3, 3) or not np.allclose(W, W.T):
            raise ValueError("W must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(W)[0] < -1e-12:
            raise ValueError("W must be positive semidefinite")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        object.__setattr__(self, "W", W)

    def pixel_subset(self, sensor):
        u = np.arange(0, sensor.n_u, self.stride)
        v = np.arange(0, sensor.n_v, self.stride)
        return (v[:, None] * sensor.n_u + u[None, :]).ravel()


@dataclass(frozen=True, eq=False)
class GradientReport:
    rotation: np.ndarray
    value: float
    ambient: np.ndarray
    riemannian: np.ndarray

    @property
    def norm(self):
        return float(np.linalg.norm(self.riemannian))


def delta_tilde(sensor, env):
    return plane_offset(sensor, env) ** 2 / sensor.lam


def pixel_performance(sensor, params, env, M, l):
    """``dtil |M p|_W^2 / (e3^T M p)^2`` for pixel(s) ``l``."""
    p = np.atleast_2d(sensor.centers[l])
    Mp = p @ np.asarray(M, dtype=float).T
    nW = np.einsum("li,ij,lj->l", Mp, params.W, Mp)
    out = delta_tilde(sensor, env) * nW / Mp[:, 2] ** 2
    return out[0] if np.ndim(l) == 0 else out


def mission_mask(sensor, env, R, idx):
    """Pixels (from ``idx``) whose ray meets the plane inside Q."""
    q, valid = world_points(sensor, env, R, sensor.centers[idx])
    return valid & env.in_mission(q)


def _check_density(d, env):
    if not d.psi_bar < env.phi_bar:
        raise ValueError("psi_bar must be smaller than phi_bar")


def _kernel_args(sensor, params, env, d, idx, mask):
    _check_density(d, env)
    return (np.ascontiguousarray(sensor.centers[idx]),
            np.ascontiguousarray(sensor.pixel_weights[idx]),
            np.ascontiguousarray(mask, dtype=np.uint8),
            np.ascontiguousarray(d.alphas), np.ascontiguousarray(d.means),
            np.ascontiguousarray(d.sigmas), float(d.psi_bar), float(env.phi_bar),
            np.ascontiguousarray(params.W), float(sensor.lam), float(delta_tilde(sensor, env)))


def ambient_objective(sensor, params, env, d, M, base=None, mask=None):
    """Extended objective at an arbitrary ``M`` in R^{3x3}.

    The density is anchored at ``base`` (default: the sensor's rotation)
    and the mixture/background split is frozen to ``mask`` (default: the
    mission mask at ``base``).
    """
    base = sensor.rotation if base is None else np.asarray(base, dtype=float)
    idx = params.pixel_subset(sensor)
    if mask is None:
        mask = mission_mask(sensor, env, base, idx)
    P, w, mk, a, mu, sg, pb, fb, W, lam, dt = _kernel_args(sensor, params, env, d, idx, mask)
    return kernels.sensor_value(np.ascontiguousarray(M, dtype=float),
                                np.ascontiguousarray(base), P, w, mk, a, mu, sg, pb, fb, W, lam, dt)


def objective_single(sensor, params, env, d, R=None):
    """Single-sensor objective on SO(3)."""
    R = sensor.rotation if R is None else np.asarray(R, dtype=float)
    return ambient_objective(sensor, params, env, d, R, base=R)


def gradient_single(sensor, params, env, d, R=None, mask=None):
    """Objective value, Euclidean gradient and Riemannian gradient at ``R``."""
    R = sensor.rotation if R is None else np.asarray(R, dtype=float)
    idx = params.pixel_subset(sensor)
    if mask is None:
        mask = mission_mask(sensor, env, R, idx)
    args = _kernel_args(sensor, params, env, d, idx, mask)
    value, G = kernels.sensor_value_grad(np.ascontiguousarray(R), *args)
    G = np.asarray(G)
    return GradientReport(R.copy(), float(value), G, project_tangent(R, G))


def network_masks(sensors, params, env, rotations):
    """Active evaluation-pixel masks for every sensor at ``rotations``."""
    fovs = [fov(s, env, R) for s, R in zip(sensors, rotations)]
    return [active_pixels(i, sensors, env, params.W, rotations,
                          pixels=params.pixel_subset(s), fovs=fovs)
            for i, s in enumerate(sensors)]


def objective_multi(sensors, params, env, densities, rotations):
    """Network objective ``H = sum_i H_i`` and the per-sensor terms."""
    masks = network_masks(sensors, params, env, rotations)
    values = [ambient_objective(s, params, env, d, R, base=R, mask=m)
              for s, d, R, m in zip(sensors, densities, rotations, masks)]
    return float(sum(values)), values


def gradient_multi(sensors, params, env, densities, rotations, masks=None):
    """Per-sensor gradients with the coverage partition frozen at ``rotations``."""
    if masks is None:
        masks = network_masks(sensors, params, env, rotations)
    return [gradient_single(s, params, env, d, R, mask=m)
            for s, d, R, m in zip(sensors, densities, rotations, masks)]


def world_objective(sensors, params, env, phi, rotations, masks=None):
    """Network objective against a plane density ``phi(q)``.

    Used for reporting: pixels outside a sensor's active set are priced at
    ``phi_bar``. Returns the total and the per-sensor terms.
    """
    if masks is None:
        masks = network_masks(sensors, params, env, rotations)
    values = []
    for s, R, m in zip(sensors, rotations, masks):
        idx = params.pixel_subset(s)
        p = s.centers[idx]
        q, valid = world_points(s, env, R, p)
        f = pixel_performance(s, params, env, R, idx)
        dens = np.full(len(idx), env.phi_bar)
        if np.any(m):
            dens[m] = phi(q[m])
        values.append(float(np.sum(s.pixel_weights[idx] * f * dens)))
    return float(sum(values)), values


def is_tangent(R, delta, tol=1e-10):
    X = np.asarray(R).T @ np.asarray(delta)
    return bool(np.linalg.norm(X - sk(X)) <= tol * max(1.0, np.linalg.norm(X)))


def directional_errors(sensor, params, env, d, R, directions, h=1e-6, mask=None):
    """Relative errors of ``<grad, X>`` against central differences.

    Each error is ``|analytic - fd| / max(|analytic|, |fd|, floor)`` with
    ``floor = 1e-6 |grad| |X|``, so directions almost orthogonal to the
    gradient are judged on an absolute scale.
    """
    R = np.asarray(R, dtype=float)
    idx = params.pixel_subset(sensor)
    if mask is None:
        mask = mission_mask(sensor, env, R, idx)
    G = gradient_single(sensor, params, env, d, R, mask=mask).ambient
    out = []
    for X in directions:
        an = float(np.sum(G * X))
        hi = ambient_objective(sensor, params, env, d, R + h * X, base=R, mask=mask)
        lo = ambient_objective(sensor, params, env, d, R - h * X, base=R, mask=mask)
        fd = (hi - lo) / (2.0 * h)
        floor = 1e-6 * np.linalg.norm(G) * np.linalg.norm(X)
        out.append(abs(an - fd) / max(abs(an), abs(fd), floor, 1e-300))
    return np.array(out)
