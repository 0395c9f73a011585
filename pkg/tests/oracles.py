"""Slow reference implementations written from first principles.

None of these call into the library's geometry or objective code; they
rebuild each quantity from the pinhole model with explicit loops.
"""
import math

import numpy as np


def ray_hit(position, R, p, gamma):
    """World point where the ray from ``position`` along ``R p`` meets z = gamma."""
    d = [sum(R[a][b] * p[b] for b in range(3)) for a in range(3)]
    t = (gamma - position[2]) / d[2]
    if t <= 0:
        return None
    return [position[a] + t * d[a] for a in range(3)]


def in_convex(poly, x, y):
    """Point-in-convex-polygon by consistent cross-product signs (either winding)."""
    signs = []
    n = len(poly)
    for k in range(n):
        x1, y1 = poly[k]
        x2, y2 = poly[(k + 1) % n]
        signs.append((x2 - x1) * (y - y1) - (y2 - y1) * (x - x1))
    return all(s >= 0 for s in signs) or all(s <= 0 for s in signs)


def perf(position, lam, W, q):
    d = [q[a] - position[a] for a in range(3)]
    return sum(d[a] * W[a][b] * d[b] for a in range(3) for b in range(3)) / lam


def mixture(psi_bar, alphas, means, sigmas, x, y):
    v = psi_bar
    for a, mu, S in zip(alphas, means, sigmas):
        bx, by = x - mu[0], y - mu[1]
        v -= a * math.exp(-(bx * (S[0][0] * bx + S[0][1] * by) + by * (S[1][0] * bx + S[1][1] * by)))
    return v


def naive_objective(sensor, W, mission, gamma, phi_bar, d, R, pixels, mask=None):
    """Per-pixel loop: hit point, mission test, performance, density.

    The density is anchored at ``R`` itself, so the image point of each
    pixel is the pixel centre. ``mask`` overrides the mission test.
    """
    total = 0.0
    Rl = np.asarray(R).tolist()
    Wl = np.asarray(W).tolist()
    for k, l in enumerate(pixels):
        p = sensor.centers[l].tolist()
        q = ray_hit(sensor.position.tolist(), Rl, p, gamma)
        f = perf(sensor.position.tolist(), sensor.lam, Wl, q)
        inside = in_convex(mission, q[0], q[1]) if mask is None else bool(mask[k])
        if inside:
            dens = mixture(d.psi_bar, d.alphas, d.means.tolist(), d.sigmas.tolist(), p[0], p[1])
        else:
            dens = phi_bar
        total += sensor.pixel_weights[l] * f * dens
    return total


def footprint(sensor, R, gamma):
    """World (x, y) of the four image corners."""
    hw, hh = sensor.plane_w / 2, sensor.plane_h / 2
    out = []
    for cx, cy in [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]:
        q = ray_hit(sensor.position.tolist(), np.asarray(R).tolist(), [cx, cy, sensor.lam], gamma)
        out.append((q[0], q[1]))
    return out


def argmin_owner(sensors, rotations, W, gamma, x, y):
    """Sensor with the smallest performance among those whose footprint covers (x, y)."""
    best, best_f = -1, math.inf
    Wl = np.asarray(W).tolist()
    for s, R in sorted(zip(sensors, rotations), key=lambda t: t[0].id):
        if not in_convex(footprint(s, R, gamma), x, y):
            continue
        f = perf(s.position.tolist(), s.lam, Wl, [x, y, gamma])
        if f < best_f:
            best, best_f = s.id, f
    return best
