# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-sensor objective kernels; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef inline double _quad2(const double[:, :, ::1] sig, Py_ssize_t j, double bx, double by) nogil:
    return (bx * (sig[j, 0, 0] * bx + sig[j, 0, 1] * by)
            + by * (sig[j, 1, 0] * bx + sig[j, 1, 1] * by))


def sensor_value(double[:, ::1] M, double[:, ::1] R, double[:, ::1] P, double[::1] w,
                 const unsigned char[::1] mask, double[::1] alpha, double[:, ::1] mu,
                 const double[:, :, ::1] sig, double psi_bar, double phi_bar,
                 double[:, ::1] W, double lam, double dtil):
    cdef Py_ssize_t L = P.shape[0], m = alpha.shape[0], l, j, a, c
    cdef double mp[3]
    cdef double u[3]
    cdef double total = 0.0, nW, den, dens, bx, by, t
    with nogil:
        for l in range(L):
            for a in range(3):
                mp[a] = M[a, 0] * P[l, 0] + M[a, 1] * P[l, 1] + M[a, 2] * P[l, 2]
            den = mp[2]
            nW = 0.0
            for a in range(3):
                t = 0.0
                for c in range(3):
                    t = t + W[a, c] * mp[c]
                nW = nW + mp[a] * t
            if mask[l]:
                dens = psi_bar
                if m > 0:
                    for a in range(3):
                        u[a] = R[0, a] * mp[0] + R[1, a] * mp[1] + R[2, a] * mp[2]
                    for j in range(m):
                        bx = lam * u[0] / u[2] - mu[j, 0]
                        by = lam * u[1] / u[2] - mu[j, 1]
                        dens = dens - alpha[j] * exp(-_quad2(sig, j, bx, by))
            else:
                dens = phi_bar
            total = total + w[l] * nW / (den * den) * dens
    return dtil * total


def sensor_value_grad(double[:, ::1] R, double[:, ::1] P, double[::1] w,
                      const unsigned char[::1] mask, double[::1] alpha, double[:, ::1] mu,
                      const double[:, :, ::1] sig, double psi_bar, double phi_bar,
                      double[:, ::1] W, double lam, double dtil):
    cdef Py_ssize_t L = P.shape[0], m = alpha.shape[0], l, j, a, c
    cdef double rp[3]
    cdef double wrp[3]
    cdef double row[3]
    cdef double v[3]
    cdef double rv[3]
    cdef double xi
    cdef double total = 0.0, nW, den, den3, dens, bx, by, sx, sy, stp, E, k
    grad_arr = np.zeros((3, 3))
    cdef double[:, ::1] G = grad_arr
    with nogil:
        for l in range(L):
            for a in range(3):
                rp[a] = R[a, 0] * P[l, 0] + R[a, 1] * P[l, 1] + R[a, 2] * P[l, 2]
            for a in range(3):
                wrp[a] = W[a, 0] * rp[0] + W[a, 1] * rp[1] + W[a, 2] * rp[2]
            nW = rp[0] * wrp[0] + rp[1] * wrp[1] + rp[2] * wrp[2]
            den = rp[2]
            den3 = den * den * den
            dens = psi_bar if mask[l] else phi_bar
            for a in range(3):
                row[a] = dens * 2.0 / den3 * den * wrp[a]
            row[2] = row[2] - dens * 2.0 / den3 * nW
            if mask[l] and m > 0:
                for j in range(m):
                    bx = P[l, 0] - mu[j, 0]
                    by = P[l, 1] - mu[j, 1]
                    sx = sig[j, 0, 0] * bx + sig[j, 0, 1] * by
                    sy = sig[j, 1, 0] * bx + sig[j, 1, 1] * by
                    E = exp(-(bx * sx + by * sy))
                    dens = dens - alpha[j] * E
                    stp = sx * P[l, 0] + sy * P[l, 1]
                    v[0] = -lam * sx
                    v[1] = -lam * sy
                    v[2] = stp
                    for a in range(3):
                        rv[a] = R[a, 0] * v[0] + R[a, 1] * v[1] + R[a, 2] * v[2]
                    k = alpha[j] * 2.0 * E / (lam * den3)
                    for a in range(3):
                        xi = nW * rv[a] + lam * wrp[a]
                        row[a] = row[a] - k * den * xi
                    row[2] = row[2] + k * lam * nW
            total = total + w[l] * nW / (den * den) * dens
            for a in range(3):
                for c in range(3):
                    G[a, c] = G[a, c] + w[l] * row[a] * P[l, c]
        for a in range(3):
            for c in range(3):
                G[a, c] = dtil * G[a, c]
    return dtil * total, grad_arr
