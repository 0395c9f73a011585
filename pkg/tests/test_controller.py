import numpy as np
import pytest

from conftest import LAM, W_DIAG, make_env, make_sensor, small_rotation
from so3cover.controller import (DensityModel, DescentConfig, IterationTrace, Network,
                                 descent_direction, run, run_tracking, step_sensor)
from so3cover.density import BlobFrame, MixtureDensity
from so3cover.geometry import Sensor
from so3cover.manifold import AxisPair, hat, is_rotation, log_rotation, retract, vee
from so3cover.objective import (ObjectiveParams, ambient_objective, gradient_single,
                                mission_mask)

W = np.diag(W_DIAG)
PARAMS = ObjectiveParams(W, stride=2)
BLOB = BlobFrame([[2.0, 1.0]], [1.5], [0.8])


def single_network(axes=None, R=None):
    s = make_sensor(grid=(21, 21), axes=axes, R=R)
    return Network([s], make_env(), PARAMS, DensityModel(m=3, psi_bar=1.0))


def assert_trace_valid(trace, armijo=True):
    for rec in trace.records:
        assert all(is_rotation(R) for R in rec.rotations)
    if armijo:
        assert np.all(np.diff(trace.H) <= 0)


@pytest.mark.parametrize("kw", [dict(step_rule="newton"), dict(shrink=1.0), dict(slope=0.0),
                                dict(grad_tol=0.0), dict(alpha0=-1.0), dict(max_iters=-1),
                                dict(steps_per_frame=0), dict(step=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        DescentConfig(**kw)


def _report(rng, sensor=None):
    env = make_env()
    s = sensor or make_sensor(grid=(9, 9))
    R = small_rotation(rng, 0.3)
    d = MixtureDensity(1.0, [0.4], [[1e-3, 0]], [np.eye(2) * 5e5])
    idx = PARAMS.pixel_subset(s)
    mask = mission_mask(s, env, R, idx)
    return s, env, d, gradient_single(s, PARAMS, env, d, R, mask=mask), mask


def test_unconstrained_direction_is_negative_gradient(rng):
    s, env, d, rep, mask = _report(rng)
    assert np.allclose(descent_direction(s, rep), -rep.riemannian, atol=1e-12 * rep.norm)


def test_cone_direction_respects_rows(rng):
    s, env, d, rep, mask = _report(rng)
    R = rep.rotation
    v = -vee(R.T @ rep.riemannian)
    for _ in range(20):
        rows = rng.standard_normal((2, 3))
        rows /= np.linalg.norm(rows, axis=1)[:, None]
        D = descent_direction(s, rep, list(rows))
        z = vee(R.T @ D)
        assert np.all(rows @ z <= 1e-9 * np.linalg.norm(v))
        assert v @ z >= -1e-9 * np.linalg.norm(v) ** 2
        assert np.linalg.norm(z) <= np.linalg.norm(v) * (1 + 1e-12) + 1e-12


def test_zero_gradient_is_stationary():
    env = make_env()
    s = Sensor(0, (0, 0, 6), LAM, 6.4e-3, 4.8e-3, 1, 1)
    d = MixtureDensity(1.0)
    rep = gradient_single(s, PARAMS, env, d, np.eye(3))
    res = step_sensor(s, PARAMS, env, d, rep, np.ones(1, bool), DescentConfig())
    assert res.status == "stationary" and res.step == 0
    assert np.array_equal(res.rotation, np.eye(3))


def test_fixed_small_step_decreases(rng):
    s, env, d, rep, mask = _report(rng)
    cfg = DescentConfig(step_rule="fixed", step=1e-3 / rep.norm, grad_tol=1e-9)
    res = step_sensor(s, PARAMS, env, d, rep, mask, cfg)
    assert res.status == "moved"
    assert ambient_objective(s, PARAMS, env, d, res.rotation, base=rep.rotation, mask=mask) < rep.value


def test_armijo_sufficient_decrease(rng):
    for _ in range(5):
        s, env, d, rep, mask = _report(rng)
        cfg = DescentConfig(grad_tol=1e-9)
        res = step_sensor(s, PARAMS, env, d, rep, mask, cfg)
        assert res.status == "moved" and res.step > 0
        f = ambient_objective(s, PARAMS, env, d, res.rotation, base=rep.rotation, mask=mask)
        assert f <= rep.value - cfg.slope * res.step * rep.norm**2 + 1e-9 * rep.value
        assert is_rotation(res.rotation)


def test_backtracking_exhausted_stalls(rng):
    s, env, d, rep, mask = _report(rng)
    # an ascent direction never passes the sufficient-decrease test
    res = step_sensor(s, PARAMS, env, d, rep, mask, DescentConfig(grad_tol=1e-9, max_backtracks=3),
                      direction=rep.riemannian)
    assert res.status == "stalled" and res.step == 0
    assert np.array_equal(res.rotation, rep.rotation)


def test_pan_only_stays_on_orbit(rng):
    axes = AxisPair([0.0, 1.0, 0.0])
    s = make_sensor(grid=(9, 9), axes=axes)
    s, env, d, rep, mask = _report(rng, s)
    res = step_sensor(s, PARAMS, env, d, rep, mask, DescentConfig(grad_tol=1e-9))
    w = vee(log_rotation(rep.rotation.T @ res.rotation))
    assert abs(w[0]) < 1e-12 and abs(w[2]) < 1e-12 and abs(w[1]) > 0


def test_underactuated_run_stays_in_span():
    axes = AxisPair([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], world1=True)
    net = single_network(axes=axes)
    trace = run(net, BLOB, DescentConfig(max_iters=15))
    assert_trace_valid(trace)
    moved = 0
    for r0, r1 in zip(trace.records[:-1], trace.records[1:]):
        R0, R1 = r0.rotations[0], r1.rotations[0]
        w = vee(log_rotation(R0.T @ R1))
        a1, a2 = axes.body_axes(R0)
        B = np.column_stack([a1, a2])
        c, *_ = np.linalg.lstsq(B, w, rcond=None)
        assert np.linalg.norm(B @ c - w) < 1e-8
        moved += np.linalg.norm(w) > 0
    assert moved > 0


def test_already_stationary_start():
    net = single_network()
    trace = run(net, BLOB, DescentConfig(grad_tol=1e12))
    assert trace.status == "stationary"
    assert len(trace.records) == 1 and trace.iterations == 0


def test_single_sensor_run_reaches_stationary():
    net = single_network()
    cfg = DescentConfig()
    trace = run(net, BLOB, cfg)
    assert trace.status == "stationary"
    assert_trace_valid(trace)
    assert len(trace.records) == trace.iterations + 1
    assert max(trace.records[-1].grad_norms) < cfg.grad_tol
    assert trace.H[-1] < trace.H[0]


def test_zero_iterations_records_initial_state():
    trace = run(single_network(), BLOB, DescentConfig(max_iters=0))
    assert trace.status in ("max_iters", "stationary") and len(trace.records) == 1
    assert np.array_equal(trace.records[0].rotations[0], np.eye(3))


def test_stationarity_certificate():
    """At termination a short step along the direction barely changes the surrogate."""
    net = single_network()
    cfg = DescentConfig()
    trace = run(net, BLOB, cfg)
    assert trace.status == "stationary"
    net.refit(BLOB)
    masks = net.masks()
    s, d, R = net.sensors[0], net.densities[0], net.rotations[0]
    rep = gradient_single(s, PARAMS, net.env, d, R, mask=masks[0])
    D, _ = net.plan_direction(0, rep, masks, cfg)
    step = 1e-6
    change = abs(ambient_objective(s, PARAMS, net.env, d, retract(R, D, step), base=R, mask=masks[0])
                 - rep.value)
    assert change < cfg.grad_tol**2 * step * 10


def _four(order):
    pos = [(-4.5, -3.5), (4.5, -3.5), (4.5, 3.5), (-4.5, 3.5)]
    sensors = [make_sensor(i, xy=pos[k], grid=(21, 21)) for i, k in enumerate(order)]
    return Network(sensors, make_env(), PARAMS, DensityModel(m=3, psi_bar=1.0))


def test_permutation_invariance():
    frame = BlobFrame([[-6, 4.5], [-3, -2], [6, -4.5], [5.5, 2.5]], [1.2, 1.0, 1.3, 1.0], [0.8] * 4)
    cfg = DescentConfig(max_iters=4)
    a = run(_four([0, 1, 2, 3]), frame, cfg)
    b = run(_four([2, 0, 3, 1]), frame, cfg)
    assert np.allclose(a.H, b.H, rtol=1e-9)


def test_reorthonormalization_cadence():
    net = single_network()
    trace = run(net, BLOB, DescentConfig(max_iters=5, reorthonormalize_every=1))
    assert_trace_valid(trace)


def test_fixed_rule_run():
    net = single_network()
    trace = run(net, BLOB, DescentConfig(step_rule="fixed", step=1e-7, max_iters=5))
    assert trace.status == "max_iters" and len(trace.records) == 6
    assert all(r.steps == [1e-7] for r in trace.records[:-1])
    assert_trace_valid(trace, armijo=False)


def test_tracking_empty_movie():
    with pytest.raises(ValueError, match="no frames"):
        run_tracking(single_network(), [], DescentConfig())


def test_tracking_static_movie_matches_run():
    a = run(single_network(), BLOB, DescentConfig())
    b = run_tracking(single_network(), [BLOB] * (len(a.records) + 3), DescentConfig())
    assert b.status == "frames_done" and len(b.records) == len(a.records) + 3
    assert np.allclose(b.records[-1].rotations[0], a.final_rotations[0], atol=1e-12)
    for r in b.records:
        assert len(r.fovs) == 1 and len(r.fovs[0]) == 8


def test_trace_properties():
    t = IterationTrace()
    assert t.iterations == 0 and t.final_rotations == [] and len(t.H) == 0
