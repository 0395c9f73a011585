"""Image-plane importance densities.

Per-pixel importance data is fitted by a sum of anisotropic Gaussians
``sum_j alpha_j exp(-|p - mu_j|^2_{S_j})`` (``|x|^2_S = x^T S x``), and the
density used by the coverage objective is ``psi_bar`` minus that sum:
small values mark important points.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .geometry import world_points

log = logging.getLogger(__name__)

# smallest eigenvalue allowed for a fitted weight matrix, in normalised units
SPD_FLOOR = 1e-6


class FitWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class MixtureDensity:
    """``psi(p) = psi_bar - sum_j alpha_j exp(-(p - mu_j)^T S_j (p - mu_j))``.

    ``rms`` and ``converged`` describe the fit that produced the density
    (``nan``/``True`` for hand-built ones).
    """

    psi_bar: float
    alphas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    means: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    sigmas: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 2)))
    rms: float = float("nan")
    converged: bool = True

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float).reshape(-1)
        m = len(alphas)
        means = np.asarray(self.means, dtype=float).reshape(m, 2)
        sigmas = np.asarray(self.sigmas, dtype=float).reshape(m, 2, 2)
        if not self.psi_bar > 0:
            raise ValueError("psi_bar must be positive")
        if np.any(alphas < 0):
            raise ValueError("mixture amplitudes must be nonnegative")
        if self.psi_bar - alphas.sum() < -1e-12 * max(1.0, self.psi_bar):
            raise ValueError("psi_bar must dominate the sum of amplitudes")
        for S in sigmas:
            if not np.allclose(S, S.T, rtol=1e-9, atol=0.0) or np.linalg.eigvalsh(S)[0] <= 0:
                raise ValueError("weight matrices must be symmetric positive definite")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def m(self):
        return len(self.alphas)

    @classmethod
    def constant(cls, psi_bar):
        return cls(psi_bar)


def _gauss_terms(d, p):
    p = np.asarray(p, dtype=float)[..., :2]
    if d.m == 0:
        return np.zeros(p.shape[:-1] + (0,))
    b = p[..., None, :] - d.means
    quad = np.einsum("...ja,jab,...jb->...j", b, d.sigmas, b)
    return np.exp(-quad)


def psi_image(d, p_im):
    """Image-plane density at 2-D point(s) ``p_im``."""
    return d.psi_bar - _gauss_terms(d, p_im) @ d.alphas


def psi_3d(d, sensor, env, p, R=None):
    """Density at image point(s) ``p`` (third coordinate = focal length).

    Points whose ray leaves the mission space, or misses the plane, get
    the background value ``phi_bar``.
    """
    if not d.psi_bar < env.phi_bar:
        raise ValueError("psi_bar must be smaller than phi_bar")
    R = sensor.rotation if R is None else R
    p = np.asarray(p, dtype=float)
    if np.any(np.abs(p[..., 2] - sensor.lam) > 1e-9):
        raise ValueError("points must lie on the image plane")
    q, valid = world_points(sensor, env, R, p)
    inside = valid & env.in_mission(q)
    out = np.where(inside, psi_image(d, np.atleast_2d(p)), env.phi_bar)
    return out[0] if p.ndim == 1 else out


def phi_world(d, sensor, env, q, R=None):
    """Plane density induced by an image density through the current pose."""
    R = sensor.rotation if R is None else np.asarray(R, dtype=float)
    single = np.ndim(q) == 1
    q = np.atleast_2d(np.asarray(q, dtype=float))
    qi = (q - sensor.position) @ R
    depth = qi[:, 2]
    ok = depth > 1e-12
    p = np.where(ok[:, None], sensor.lam * qi / np.where(ok, depth, 1.0)[:, None], 0.0)
    p[:, 2] = sensor.lam
    out = np.where(ok, psi_3d(d, sensor, env, p, R), env.phi_bar)
    out = np.where(env.in_mission(q), out, env.phi_bar)
    return out[0] if single else out


@dataclass(frozen=True, eq=False)
class BlobFrame:
    """World-plane importance field made of isotropic Gaussian blobs.

    ``importance(q) = sum_k a_k exp(-|q - c_k|^2 / r_k^2)``. With
    ``boolean`` set, pixel data is the indicator of the super-level set
    ``importance >= threshold``.
    """

    centers: np.ndarray
    radii: np.ndarray
    amplitudes: np.ndarray
    boolean: bool = False
    threshold: float = 1e-3

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        a = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        if not (len(c) == len(r) == len(a)):
            raise ValueError("blob centers, radii and amplitudes must have equal length")
        if np.any(r <= 0) or np.any(a < 0):
            raise ValueError("blob radii must be positive and amplitudes nonnegative")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "amplitudes", a)

    def importance(self, q):
        q = np.asarray(q, dtype=float)[..., :2]
        if len(self.centers) == 0:
            return np.zeros(q.shape[:-1])
        d2 = np.sum((q[..., None, :] - self.centers) ** 2, axis=-1)
        return np.exp(-d2 / self.radii**2) @ self.amplitudes

    def value(self, q):
        v = self.importance(q)
        if self.boolean:
            return (v >= self.threshold).astype(float)
        return v

    def world_density(self, env, psi_bar):
        """Evaluation density on the plane: ``psi_bar - value`` in Q, ``phi_bar`` outside."""
        def phi(q):
            inside = env.in_mission(q)
            return np.where(inside, np.maximum(psi_bar - self.value(q), 0.0), env.phi_bar)
        return phi


def synth_pixel_data(frame, sensor, env, R=None, rng=None, noise=0.0):
    """Per-pixel importance ``y_il`` seen by ``sensor`` in a blob frame.

    Pixels whose ray misses the plane read zero. Optional additive Gaussian
    noise (clipped at zero) is drawn from ``rng``.
    """
    R = sensor.rotation if R is None else R
    q, valid = world_points(sensor, env, R)
    y = np.where(valid, frame.value(q), 0.0)
    if noise > 0:
        if rng is None:
            raise ValueError("noise requires an explicit random generator")
        y = np.maximum(y + noise * rng.standard_normal(y.shape), 0.0)
    return y


# ---------------------------------------------------------------------------
# curve fitting

def _weighted_kmeans(X, w, k, n_iter=30):
    """Deterministic weighted k-means seeded by weighted farthest points."""
    centers = [X[np.argmax(w)]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        centers.append(X[np.argmax(w * d2)])
    C = np.array(centers)
    for _ in range(n_iter):
        lab = np.argmin(((X[:, None, :] - C[None]) ** 2).sum(-1), axis=1)
        newC = C.copy()
        for j in range(k):
            sel = lab == j
            if np.any(sel) and w[sel].sum() > 0:
                newC[j] = (w[sel, None] * X[sel]).sum(0) / w[sel].sum()
        if np.allclose(newC, C):
            break
        C = newC
    return C


def _initial_params(X, y, m, pitch2):
    pos = y > 0
    thr = np.percentile(y, 90)
    top = (y >= thr) & pos
    k = int(min(m, np.count_nonzero(top)))
    C = _weighted_kmeans(X[top], y[top], k)
    lab = np.argmin(((X[pos][:, None, :] - C[None]) ** 2).sum(-1), axis=1)
    Xp, yp = X[pos], y[pos]
    theta = []
    for j in range(k):
        sel = lab == j
        wj = yp[sel]
        d = Xp[sel] - C[j]
        cov = (wj[:, None, None] * d[:, :, None] * d[:, None, :]).sum(0) / max(wj.sum(), 1e-300)
        cov = cov + 0.25 * pitch2 * np.eye(2)
        S = np.linalg.inv(2.0 * cov)
        L = np.linalg.cholesky(S)
        amp = max(wj.max(), 1e-12) if len(wj) else 1e-12
        theta.append([np.log(amp), C[j, 0], C[j, 1], L[0, 0], L[1, 0], L[1, 1]])
    return np.array(theta, dtype=float).ravel()


def _params_from_density(d, scale, ymax):
    theta = []
    for a, mu, S in zip(d.alphas, d.means, d.sigmas):
        L = np.linalg.cholesky(S * scale**2)
        theta.append([np.log(max(a / ymax, 1e-300)), mu[0] / scale, mu[1] / scale,
                      L[0, 0], L[1, 0], L[1, 1]])
    return np.array(theta, dtype=float).ravel()


def _model(theta, X):
    th = theta.reshape(-1, 6)
    amp = np.exp(th[:, 0])
    d = X[:, None, :] - th[None, :, 1:3]  # (n, k, 2)
    z0 = th[:, 3] * d[..., 0] + th[:, 4] * d[..., 1]  # L^T d
    z1 = th[:, 5] * d[..., 1]
    g = amp * np.exp(-(z0**2 + z1**2))
    return g, d, z0, z1


def _residual(theta, X, y, cap=np.inf, rho=0.0):
    g = _model(theta, X)[0]
    r = g.sum(axis=1) - y
    if rho:
        excess = np.exp(theta[::6]).sum() - cap
        r = np.append(r, rho * max(excess, 0.0))
    return r


def _jacobian(theta, X, y, cap=np.inf, rho=0.0):
    th = theta.reshape(-1, 6)
    g, d, z0, z1 = _model(theta, X)
    n, k = g.shape
    J = np.empty((n, k, 6))
    J[..., 0] = g
    # d/dmu (z^T z) = -2 L z
    J[..., 1] = 2.0 * g * (th[:, 3] * z0)
    J[..., 2] = 2.0 * g * (th[:, 4] * z0 + th[:, 5] * z1)
    # d/dL_ik (z^T z) = 2 z_k d_i
    J[..., 3] = -2.0 * g * z0 * d[..., 0]
    J[..., 4] = -2.0 * g * z0 * d[..., 1]
    J[..., 5] = -2.0 * g * z1 * d[..., 1]
    J = J.reshape(n, k * 6)
    if rho:
        amp = np.exp(th[:, 0])
        row = np.zeros(k * 6)
        if amp.sum() > cap:
            row[::6] = rho * amp
        J = np.vstack([J, row])
    return J


_LOG_AMP = (-30.0, np.log(10.0))
_MEAN_BOX = 3.0


def _bounds(k):
    lo = np.tile([_LOG_AMP[0], -_MEAN_BOX, -_MEAN_BOX, -np.inf, -np.inf, -np.inf], k)
    hi = np.tile([_LOG_AMP[1], _MEAN_BOX, _MEAN_BOX, np.inf, np.inf, np.inf], k)
    return lo, hi


def amplitude_cap(phi_bar=None, psi_bar=None):
    """Largest amplitude sum that :func:`select_psi_bar` keeps unscaled."""
    if psi_bar is not None:
        return float(psi_bar)
    if phi_bar is not None:
        return 0.999 * phi_bar / 1.05
    return np.inf


def select_psi_bar(alphas, phi_bar=None, psi_bar=None, eps=1e-9):
    """Background level keeping ``psi >= 0`` and ``psi_bar < phi_bar``.

    With an explicit ``psi_bar`` the amplitudes are shrunk uniformly when
    they would exceed it. Otherwise ``psi_bar = max(sum a, eps) + 0.05 sum a``,
    and if that reaches ``phi_bar`` everything is scaled down below it.
    """
    alphas = np.asarray(alphas, dtype=float)
    total = float(alphas.sum())
    if psi_bar is not None:
        if phi_bar is not None and not psi_bar < phi_bar:
            raise ValueError("psi_bar must be smaller than phi_bar")
        if total > psi_bar:
            alphas = alphas * (psi_bar / total)
        return float(psi_bar), alphas
    pb = max(total, eps) + 0.05 * total
    if phi_bar is not None and pb >= phi_bar:
        k = 0.999 * phi_bar / pb
        alphas, pb = alphas * k, pb * k
    return pb, alphas


def fit_mixture(y, centers, m, psi_bar=None, phi_bar=None, init=None,
                max_iter=200, tol=1e-8):
    """Fit ``m`` Gaussians to per-pixel data by bounded damped Gauss-Newton.

    Parameters
    ----------
    y : array, shape (L,)
        Nonnegative pixel data.
    centers : array, shape (L, 2) or (L, 3)
        Image-plane pixel centres in metres.
    m : int
        Number of components.
    psi_bar, phi_bar : float, optional
        Background level override and the environment's off-mission level;
        see :func:`select_psi_bar`.
    init : MixtureDensity, optional
        Warm start; otherwise components are seeded by weighted k-means on
        the pixels above the 90th data percentile.

    Returns
    -------
    MixtureDensity
        With ``rms`` (root-mean-square residual, data units) and
        ``converged`` set. Non-convergence emits a :class:`FitWarning`.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(centers, dtype=float)[:, :2]
    if np.any(y < 0):
        raise ValueError("pixel data must be nonnegative")
    ymax = float(y.max()) if len(y) else 0.0
    if ymax <= 0:
        pb, _ = select_psi_bar(np.zeros(0), phi_bar, psi_bar)
        return MixtureDensity(pb, rms=0.0)

    scale = float(np.max(np.abs(X))) or 1.0
    Xn = X / scale
    yn = y / ymax
    ux = np.unique(np.round(Xn[:, 0], 12))
    uy = np.unique(np.round(Xn[:, 1], 12))
    pitch = min(np.min(np.diff(ux)) if len(ux) > 1 else 1.0,
                np.min(np.diff(uy)) if len(uy) > 1 else 1.0)

    if init is not None and init.m > 0:
        theta0 = _params_from_density(init, scale, ymax)
    else:
        theta0 = _initial_params(Xn, yn, m, pitch**2)

    # box keeps amplitudes and means finite; bounded problems need "trf"
    lo, hi = _bounds(len(theta0) // 6)
    theta0 = np.clip(theta0, lo + 1e-9, hi - 1e-9)
    # amplitudes summing past the admissible background level are penalised
    # during the fit rather than shrunk afterwards
    cap = amplitude_cap(phi_bar, psi_bar)
    rho = 10.0 * np.sqrt(len(yn)) if np.isfinite(cap) else 0.0
    sol = least_squares(_residual, theta0, jac=_jacobian, args=(Xn, yn, cap / ymax, rho),
                        method="trf", bounds=(lo, hi), x_scale="jac",
                        xtol=tol, ftol=tol, gtol=tol, max_nfev=max_iter)
    converged = bool(sol.status > 0)
    if not converged:
        warnings.warn("mixture fit did not converge in %d evaluations" % max_iter, FitWarning)
    th = sol.x.reshape(-1, 6)

    alphas = np.exp(th[:, 0]) * ymax
    means = th[:, 1:3] * scale
    sigmas = np.empty((len(th), 2, 2))
    for j, t in enumerate(th):
        L = np.array([[t[3], 0.0], [t[4], t[5]]])
        S = L @ L.T
        w, V = np.linalg.eigh(0.5 * (S + S.T))
        S = (V * np.maximum(w, SPD_FLOOR)) @ V.T
        sigmas[j] = 0.5 * (S + S.T) / scale**2
    rms = float(np.sqrt(np.mean(sol.fun[:len(yn)] ** 2))) * ymax
    pb, alphas = select_psi_bar(alphas, phi_bar, psi_bar)
    log.debug("mixture fit: m=%d nfev=%d rms=%.3g status=%d", len(th), sol.nfev, rms, sol.status)
    return MixtureDensity(pb, alphas, means, sigmas, rms=rms, converged=converged)
