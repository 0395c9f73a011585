"""Pure NumPy per-sensor objective kernels (fallback for ``_kernels``).

Shared argument layout:

    P      (L, 3)  pixel centres in the sensor frame
    w      (L,)    pixel weights
    mask   (L,)    uint8, 1 where the pixel uses the mixture density
    alpha  (m,)    mixture amplitudes
    mu     (m, 2)  mixture means (image plane)
    sig    (m, 2, 2) mixture weight matrices
    W      (3, 3)  symmetric performance weight
"""
import numpy as np


def sensor_value(M, R, P, w, mask, alpha, mu, sig, psi_bar, phi_bar, W, lam, dtil):
    """Extended objective at ambient ``M`` with the density anchored at ``R``."""
    MP = P @ M.T
    den = MP[:, 2]
    nW = np.einsum("li,ij,lj->l", MP, W, MP)
    Hl = nW / den**2
    dens = np.full(len(P), phi_bar)
    sel = mask.astype(bool)
    if np.any(sel):
        dens[sel] = psi_bar
        if len(alpha):
            U = MP[sel] @ R  # rows are (R^T M p)^T
            img = lam * U[:, :2] / U[:, 2:3]
            b = img[:, None, :] - mu[None]
            E = np.exp(-np.einsum("lja,jab,ljb->lj", b, sig, b))
            dens[sel] -= E @ alpha
    return dtil * float(np.sum(w * Hl * dens))


def sensor_value_grad(R, P, w, mask, alpha, mu, sig, psi_bar, phi_bar, W, lam, dtil):
    """Objective and its Euclidean gradient over R^{3x3}, both at ``M = R``."""
    RP = P @ R.T
    den = RP[:, 2]
    WRp = RP @ W
    nW = np.einsum("li,li->l", RP, WRp)
    Hl = nW / den**2
    e3 = np.array([0.0, 0.0, 1.0])
    eta_l = 2.0 / den[:, None] ** 3 * (den[:, None] * WRp - nW[:, None] * e3)

    sel = mask.astype(bool)
    dens = np.where(sel, psi_bar, phi_bar)
    rows = dens[:, None] * eta_l
    if len(alpha) and np.any(sel):
        Ps = P[sel]
        b = Ps[:, None, :2] - mu[None]  # (Ls, m, 2)
        s2 = np.einsum("jab,ljb->lja", sig, b)
        E = np.exp(-np.einsum("lja,lja->lj", b, s2))
        dens[sel] -= E @ alpha
        # s = Sigma_j b lifted to 3-D (third entry 0)
        sTp = np.einsum("lja,la->lj", s2, Ps[:, :2])
        v = -lam * s2  # (Ls, m, 2); third entry of (s^T p) e3 - lam s is s^T p
        v3 = np.concatenate([v, sTp[..., None]], axis=-1)  # (Ls, m, 3)
        Rv = v3 @ R.T
        nWs, dens_s, WRps = nW[sel], den[sel], WRp[sel]
        xi = nWs[:, None, None] * Rv + lam * WRps[:, None, :]
        eta_lj = (2.0 * E / (lam * dens_s[:, None] ** 3))[..., None] * (
            dens_s[:, None, None] * xi - lam * nWs[:, None, None] * e3)
        rows[sel] -= np.einsum("j,ljc->lc", alpha, eta_lj)
    value = dtil * float(np.sum(w * Hl * dens))
    grad = dtil * (rows * w[:, None]).T @ P
    return value, grad
