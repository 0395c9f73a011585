"""Discrete-time gradient descent on SO(3) for camera networks.

Each update is ``R <- R expm(alpha R^T d)`` with ``d`` a descent direction
built from the Riemannian gradient. Sensors are swept Jacobi-style: every
direction is taken from the same snapshot, then all updates are applied.

The network objective is sampled at pixels, so it jumps whenever a pixel
changes owner or leaves the mission space. The frozen-partition gradient
cannot see those jumps. Owned pixels sitting on such a boundary ("walls")
are therefore turned into linear constraints on the direction, and the
gradient is projected onto the resulting cone. The norm of the projected
direction is the stationarity measure.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import nnls

from .density import fit_mixture, synth_pixel_data
from .geometry import GeometryError, fov, world_points
from .manifold import expm_skew, hat, reorthonormalize, retract, vee
from .objective import (ambient_objective, gradient_multi, network_masks,
                        world_objective)

log = logging.getLogger(__name__)

WALL_TILT = 0.1


@dataclass(frozen=True)
class DescentConfig:
    """Step-size rule and stopping criteria.

    With ``step_rule="armijo"`` each sensor backtracks from a trial step
    that rotates it by ``max_angle`` radians (capped by ``alpha0`` when
    given), shrinking by ``shrink`` until the sufficient-decrease test with
    slope ``slope`` holds. ``step_rule="fixed"`` always uses ``step`` and
    skips the wall and monotonicity safeguards.

    ``wall_probe`` is the rotation angle (radians) used to detect pixels
    about to lose ownership; ``max_walls`` caps the constraints per sensor.
    """

    step_rule: str = "armijo"
    step: float = 1e-7
    alpha0: Optional[float] = None
    max_angle: float = 0.05
    shrink: float = 0.5
    slope: float = 1e-4
    max_backtracks: int = 30
    grad_tol: float = 100.0
    max_iters: int = 500
    reorthonormalize_every: int = 1000
    steps_per_frame: int = 1
    wall_probe: float = 1e-4
    max_walls: int = 12

    def __post_init__(self):
        if self.step_rule not in ("armijo", "fixed"):
            raise ValueError("step_rule must be 'armijo' or 'fixed'")
        if not self.step > 0 or not self.max_angle > 0 or not self.wall_probe > 0:
            raise ValueError("step sizes must be positive")
        if self.alpha0 is not None and not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.shrink < 1 or not 0 < self.slope < 1:
            raise ValueError("shrink and slope must lie in (0, 1)")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_iters < 0 or self.max_backtracks < 0 or self.max_walls < 0:
            raise ValueError("iteration limits must be nonnegative")
        if self.reorthonormalize_every < 1 or self.steps_per_frame < 1:
            raise ValueError("reorthonormalize_every and steps_per_frame must be >= 1")


@dataclass(frozen=True)
class DensityModel:
    """How each sensor turns a frame into its image-plane density."""

    m: int = 3
    psi_bar: Optional[float] = None
    noise: float = 0.0
    max_iter: int = 200

    def estimate(self, frame, sensor, env, R, rng=None, init=None):
        y = synth_pixel_data(frame, sensor, env, R, rng=rng, noise=self.noise)
        d = fit_mixture(y, sensor.centers, self.m, self.psi_bar, env.phi_bar,
                        init=init, max_iter=self.max_iter)
        if init is not None and init.m and y.max() > 0 and d.rms > 0.005 * y.max():
            cold = fit_mixture(y, sensor.centers, self.m, self.psi_bar, env.phi_bar,
                               max_iter=self.max_iter)
            if cold.rms < d.rms:
                d = cold
        return d


@dataclass
class StepResult:
    rotation: np.ndarray
    step: float
    grad_norm: float
    status: str  # "moved", "stationary" or "stalled"
    direction: Optional[np.ndarray] = None


@dataclass
class IterationRecord:
    iter: int
    H: float
    grad_norms: List[float]
    steps: List[float]
    rotations: List[np.ndarray]
    fovs: List[np.ndarray]
    frame: Optional[int] = None
    raw_norms: List[float] = field(default_factory=list)
    walls: List[int] = field(default_factory=list)


@dataclass
class IterationTrace:
    records: List[IterationRecord] = field(default_factory=list)
    status: str = "running"
    stalled: List[int] = field(default_factory=list)
    sweeps: int = 0

    @property
    def H(self):
        return np.array([r.H for r in self.records])

    @property
    def iterations(self):
        return self.sweeps

    @property
    def final_rotations(self):
        return self.records[-1].rotations if self.records else []


def actuated_basis(sensor, R):
    """Orthonormal basis (columns) of the body rotation axes the sensor can use."""
    if sensor.axes is None:
        return np.eye(3)
    a1, a2 = sensor.axes.body_axes(R)
    cols = [a1] if sensor.axes.single else [a1, a2]
    Q, _ = np.linalg.qr(np.column_stack(cols))
    return Q


def descent_direction(sensor, report, rows=None):
    """Steepest-descent tangent direction, optionally confined to a cone.

    ``rows`` holds constraint normals ``a`` in actuated coordinates; the
    result ``d`` satisfies ``a . z(d) <= 0`` for each of them. Without
    constraints (and with full actuation) this is just ``-grad``.
    """
    R = report.rotation
    B = actuated_basis(sensor, R)
    v = -B.T @ vee(R.T @ report.riemannian)
    if rows is not None and len(rows):
        A = np.asarray(rows)
        lam, _ = nnls(A.T, v)
        z = v - A.T @ lam
        # a direction tangent to a wall still crosses it at second order,
        # so lean slightly away from the walls it grazes
        zn = np.linalg.norm(z)
        grazing = A[A @ z >= -1e-9 * zn]
        if zn > 0 and len(grazing):
            t = z - WALL_TILT * zn * grazing.sum(axis=0) / len(grazing)
            if v @ t > 0 and np.all(A @ t <= 0):
                z = t
        v = z
    return R @ hat(B @ v)


def _fov_ok(sensor, env, R):
    try:
        fov(sensor, env, R)
    except GeometryError:
        return False
    return True


def initial_step(config, dnorm):
    alpha = config.max_angle * math.sqrt(2.0) / dnorm
    if config.alpha0 is not None:
        alpha = min(alpha, config.alpha0)
    return alpha


def step_sensor(sensor, params, env, density, report, mask, config, direction=None):
    """One descent step for a single sensor with its pixel split frozen.

    ``report`` is the sensor's gradient report at the current rotation and
    ``direction`` an optional precomputed descent direction. Armijo
    candidates are scored with the density anchored at the current
    rotation; a candidate whose footprint becomes unbounded is rejected.
    """
    R = report.rotation
    d = descent_direction(sensor, report) if direction is None else direction
    dnorm = float(np.linalg.norm(d))
    if dnorm < config.grad_tol:
        return StepResult(R.copy(), 0.0, dnorm, "stationary", d)

    if config.step_rule == "fixed":
        R_new = retract(R, d, config.step)
        if not _fov_ok(sensor, env, R_new):
            return StepResult(R.copy(), 0.0, dnorm, "stalled", d)
        return StepResult(R_new, config.step, dnorm, "moved", d)

    f0 = report.value
    slope = float(np.sum(report.riemannian * d))  # < 0 for a descent direction
    alpha = initial_step(config, dnorm)
    for _ in range(config.max_backtracks + 1):
        R_new = retract(R, d, alpha)
        if _fov_ok(sensor, env, R_new):
            f = ambient_objective(sensor, params, env, density, R_new, base=R, mask=mask)
            if f <= f0 + config.slope * alpha * slope:
                return StepResult(R_new, alpha, dnorm, "moved", d)
        alpha *= config.shrink
    return StepResult(R.copy(), 0.0, dnorm, "stalled", d)


# ---------------------------------------------------------------------------
# ownership walls

@dataclass(frozen=True)
class Wall:
    """An owned pixel close to losing its owner.

    ``kind`` is "mission" (crossing edge ``other`` of Q), "fov" (entering
    the footprint of sensor ``other``) or "dominance" (sensor ``other``
    starting to do better at the pixel's plane point).
    """

    kind: str
    sensor: int
    pixel: int
    other: int

    def margin(self, net, rotations):
        """Continuous quantity that must stay nonnegative."""
        s = net.sensors[self.sensor]
        q, valid = world_points(s, net.env, rotations[self.sensor],
                                s.centers[self.pixel][None])
        if not valid[0]:
            return -math.inf
        q = q[0]
        if self.kind == "mission":
            n, c = net.env.halfspaces
            return float((c[self.other] - n[self.other] @ q[:2]) / np.linalg.norm(n[self.other]))
        j = net.sensors[self.other]
        if self.kind == "fov":
            P = fov(j, net.env, rotations[self.other])
            return float(np.max((P.A @ q[:2] - P.b) / np.linalg.norm(P.A, axis=1)))
        W = net.params.W
        ds, dj = q - s.position, q - j.position
        return float((s.lam * (dj @ W @ dj) - j.lam * (ds @ W @ ds)) / (s.lam * j.lam))


def _classify_loss(net, s, pixel, before, after):
    """Walls explaining why pixel ``pixel`` of sensor ``s`` was lost."""
    si = net.sensors[s]
    env = net.env
    p = si.centers[pixel][None]
    q1, valid = world_points(si, env, after[s], p)
    if not valid[0]:
        return []
    q1 = q1[0]
    n, c = env.halfspaces
    viol = (n @ q1[:2] - c) / np.linalg.norm(n, axis=1)
    if np.any(viol > 0):
        return [Wall("mission", s, pixel, int(np.argmax(viol)))]
    q0 = world_points(si, env, before[s], p)[0][0]
    W = net.params.W
    out = []
    for j, sj in enumerate(net.sensors):
        if j == s or not fov(sj, env, after[j]).contains(q1):
            continue
        ds, dj = q1 - si.position, q1 - sj.position
        lhs, rhs = sj.lam * (ds @ W @ ds), si.lam * (dj @ W @ dj)
        if lhs > rhs or (lhs == rhs and sj.id < si.id):
            inside0 = fov(sj, env, before[j]).contains(q0)
            out.append(Wall("dominance" if inside0 else "fov", s, pixel, j))
    return out


def wall_normal(net, wall, i, B, h=1e-7):
    """Outward normal of a wall in the actuated coordinates of sensor ``i``.

    Central differences of the wall margin along each actuated axis; the
    row ``a`` is ``-grad margin`` normalised, or ``None`` if the margin
    does not depend on sensor ``i``.
    """
    R = net.rotations[i]
    g = np.empty(B.shape[1])
    for k in range(B.shape[1]):
        rots = list(net.rotations)
        rots[i] = R @ expm_skew(hat(h * B[:, k]))
        up = wall.margin(net, rots)
        rots[i] = R @ expm_skew(hat(-h * B[:, k]))
        g[k] = (up - wall.margin(net, rots)) / (2 * h)
    n = np.linalg.norm(g)
    if not np.isfinite(n) or n == 0:
        return None
    return -g / n


class Network:
    """Mutable sweep state: rotations, current fits and retraction counts."""

    def __init__(self, sensors, env, params, model=None, rng=None):
        self.sensors = list(sensors)
        self.env = env
        self.params = params
        self.model = model or DensityModel()
        self.rng = rng
        self.rotations = [s.rotation.copy() for s in self.sensors]
        self.densities = [None] * len(self.sensors)
        self.retractions = [0] * len(self.sensors)
        self.blocked = []
        self._subsets = [params.pixel_subset(s) for s in self.sensors]

    def fovs_flat(self):
        out = []
        for s, R in zip(self.sensors, self.rotations):
            try:
                out.append(fov(s, self.env, R).flat())
            except GeometryError:
                out.append(np.full(8, np.nan))
        return out

    def refit(self, frame):
        self.densities = [
            self.model.estimate(frame, s, self.env, R, rng=self.rng, init=d)
            for s, R, d in zip(self.sensors, self.rotations, self.densities)]

    def masks(self, rotations=None):
        rotations = self.rotations if rotations is None else rotations
        return network_masks(self.sensors, self.params, self.env, rotations)

    def evaluate(self, phi, rotations=None, masks=None):
        rotations = self.rotations if rotations is None else rotations
        try:
            if masks is None:
                masks = self.masks(rotations)
            return world_objective(self.sensors, self.params, self.env, phi, rotations, masks)[0]
        except GeometryError:
            return math.inf

    def _lost(self, masks, rotations):
        """(sensor, pixel) pairs owned now but not under ``rotations``."""
        try:
            after = self.masks(rotations)
        except GeometryError:
            return []
        return [(s, int(self._subsets[s][k]))
                for s, (m0, m1) in enumerate(zip(masks, after))
                for k in np.flatnonzero(m0 & ~m1)]

    def plan_direction(self, i, report, masks, config):
        """Descent direction for sensor ``i`` that respects nearby walls.

        Returns the direction and the number of active walls.
        """
        sensor = self.sensors[i]
        d = descent_direction(sensor, report)
        if config.step_rule == "fixed" or config.max_walls == 0:
            return d, 0
        B = actuated_basis(sensor, report.rotation)
        walls, rows = set(), []
        while len(rows) < config.max_walls:
            dnorm = np.linalg.norm(d)
            if dnorm < config.grad_tol:
                break
            probe = list(self.rotations)
            probe[i] = retract(self.rotations[i], d, config.wall_probe * math.sqrt(2.0) / dnorm)
            new = []
            for s, pixel in self._lost(masks, probe):
                for w in _classify_loss(self, s, pixel, self.rotations, probe):
                    if w not in walls:
                        walls.add(w)
                        a = wall_normal(self, w, i, B)
                        if a is not None:
                            new.append(a)
            if not new:
                break
            rows.extend(new)
            d = descent_direction(sensor, report, rows)
        return d, len(rows)

    def sweep(self, frame, config):
        """Refit, take one Jacobi step for every sensor and guard the result.

        Returns ``(H, stats, steps, status)``: ``H`` is the evaluation
        objective before the step, ``stats`` a dict of per-sensor direction
        norms, raw gradient norms and wall counts, and ``status`` one of
        ``"moved"``, ``"stationary"`` or ``"stalled"``.
        """
        self.refit(frame)
        phi = frame.world_density(self.env, self._psi_bar())
        masks = self.masks()
        reports = gradient_multi(self.sensors, self.params, self.env, self.densities,
                                 self.rotations, masks=masks)
        H = self.evaluate(phi, masks=masks)
        planned = [self.plan_direction(i, rep, masks, config) for i, rep in enumerate(reports)]
        results = [step_sensor(s, self.params, self.env, d, rep, m, config, direction=dr)
                   for s, d, rep, m, (dr, _) in
                   zip(self.sensors, self.densities, reports, masks, planned)]
        stats = {"norms": [r.grad_norm for r in results],
                 "raw": [rep.norm for rep in reports],
                 "walls": [n for _, n in planned]}
        if all(r.status == "stationary" for r in results):
            self.blocked = []
            return H, stats, [0.0] * len(results), "stationary"
        steps = [r.step for r in results]
        candidate = [r.rotation for r in results]
        blocked = [r.status == "stalled" for r in results]
        if config.step_rule == "armijo":
            dirs = [r.direction for r in results]
            steps, candidate, blocked = self._guard(phi, H, dirs, steps, candidate,
                                                    blocked, config)
        self._apply(candidate, steps, config)
        self.blocked = [i for i, b in enumerate(blocked) if b]
        if all(a == 0 for a in steps):
            return H, stats, steps, "stalled"
        return H, stats, steps, "moved"

    def _guard(self, phi, H, dirs, steps, candidate, blocked, config):
        """Keep the reported objective monotone.

        If the joint update raises ``H``, each sensor's move is retried
        alone and shrunk until it does not; moves that never pass are
        dropped and the sensor is reported as blocked. The survivors are
        then shrunk together if needed.
        """
        if self.evaluate(phi, candidate) <= H:
            return steps, candidate, blocked
        steps, blocked = list(steps), list(blocked)
        for i, a in enumerate(steps):
            if a == 0:
                continue
            for _ in range(config.max_backtracks + 1):
                solo = list(self.rotations)
                solo[i] = retract(self.rotations[i], dirs[i], a)
                if self.evaluate(phi, solo) <= H:
                    break
                a *= config.shrink
            else:
                a, blocked[i] = 0.0, True
            steps[i] = a
        scale = 1.0
        for _ in range(config.max_backtracks + 1):
            candidate = [retract(R, d, scale * a) if a else R.copy()
                         for R, d, a in zip(self.rotations, dirs, steps)]
            if self.evaluate(phi, candidate) <= H:
                return [scale * a for a in steps], candidate, blocked
            scale *= config.shrink
        return ([0.0] * len(steps), [R.copy() for R in self.rotations],
                [b or a > 0 for a, b in zip(steps, blocked)])

    def _psi_bar(self):
        if self.model.psi_bar is not None:
            return self.model.psi_bar
        return max(d.psi_bar for d in self.densities)

    def _apply(self, rotations, steps, config):
        for i, (R, a) in enumerate(zip(rotations, steps)):
            if a == 0:
                continue
            self.retractions[i] += 1
            if self.retractions[i] % config.reorthonormalize_every == 0:
                R = reorthonormalize(R)
            self.rotations[i] = R

    def record(self, k, frame=None):
        return IterationRecord(k, math.nan, [], [], [R.copy() for R in self.rotations],
                               self.fovs_flat(), frame)

    def closing_record(self, k, frame, config, frame_index=None):
        """Record for the current state without stepping."""
        rec = self.record(k, frame_index)
        self.refit(frame)
        phi = frame.world_density(self.env, self._psi_bar())
        masks = self.masks()
        reports = gradient_multi(self.sensors, self.params, self.env, self.densities,
                                 self.rotations, masks=masks)
        planned = [self.plan_direction(i, rep, masks, config) for i, rep in enumerate(reports)]
        rec.H = self.evaluate(phi, masks=masks)
        rec.grad_norms = [float(np.linalg.norm(d)) for d, _ in planned]
        rec.raw_norms = [rep.norm for rep in reports]
        rec.walls = [n for _, n in planned]
        rec.steps = [0.0] * len(self.sensors)
        return rec


def _fill(rec, H, stats, steps):
    rec.H, rec.steps = H, list(steps)
    rec.grad_norms, rec.raw_norms, rec.walls = stats["norms"], stats["raw"], stats["walls"]


def run(network, frame, config):
    """Static-scene descent until every direction norm is below tolerance.

    The trace holds one record per sweep that moved plus the final state,
    so it has ``iterations + 1`` records. ``H`` is measured against the
    frame's plane density rather than the per-sensor fits. Status is
    "stationary", "stalled" (no sensor can move; the blocked ones are
    listed) or "max_iters".
    """
    trace = IterationTrace()
    for k in range(config.max_iters):
        rec = network.record(k)
        H, stats, steps, status = network.sweep(frame, config)
        _fill(rec, H, stats, steps)
        trace.records.append(rec)
        log.info("iter %d H=%.9g max|d|=%.3g", k, H, max(stats["norms"]))
        if status != "moved":
            # nothing moved, so this record already describes the final state
            trace.status = status
            trace.stalled = list(network.blocked) if status == "stalled" else []
            break
        trace.sweeps += 1
    else:
        trace.status = "max_iters"
        rec = network.closing_record(len(trace.records), frame, config)
        trace.records.append(rec)
        if all(n < config.grad_tol for n in rec.grad_norms):
            trace.status = "stationary"
    if config.step_rule == "armijo":
        for r1, r0 in zip(trace.records[1:], trace.records[:-1]):
            assert r1.H <= r0.H, "objective increased under the guarded Armijo rule"
    return trace


def run_tracking(network, movie, config):
    """Follow a moving scene, taking ``config.steps_per_frame`` sweeps per frame.

    One record per frame, holding the state at the start of the frame and
    the first sweep's statistics.
    """
    if len(movie) == 0:
        raise ValueError("movie has no frames")
    trace = IterationTrace()
    k = 0
    for f, frame in enumerate(movie):
        rec = network.record(k, frame=f)
        for s in range(config.steps_per_frame):
            H, stats, steps, status = network.sweep(frame, config)
            if s == 0:
                _fill(rec, H, stats, steps)
            k += 1
            if status != "moved":
                break
            trace.sweeps += 1
        trace.records.append(rec)
        log.info("frame %d H=%.9g", f, rec.H)
    trace.status = "frames_done"
    return trace
