"""Shared oracles and fixtures for the test suite."""
import numpy as np

from gnssinit.manifold import exp_so3, exp_so3_batch, log_so3_batch
from gnssinit.preintegration import ImuNoiseModel, ImuSample, integrate
from gnssinit.residuals import InitState, KeyframeState
from gnssinit.solver import retract


def random_imu_window(rng, n=20, rate=200.0):
    """Clean IMU samples with moderate rotation and acceleration."""
    dt = 1.0 / rate
    gyro = 0.5 * rng.normal(size=(n, 3))
    accel = rng.normal(size=(n, 3)) + np.array([0.0, 0.0, 9.81])
    return [ImuSample(k * dt, gyro[k], accel[k]) for k in range(n)], n * dt


def euler_increments_batch(gyro, accel, dts):
    """Forward-Euler increments for a batch of sample streams.

    ``gyro`` and ``accel`` are ``(runs, n, 3)``; returns ``(dR, dv, dp)`` with
    a leading ``runs`` axis. Same discrete model as :func:`integrate`, written
    independently and vectorized across runs.
    """
    runs = gyro.shape[0]
    dR = np.broadcast_to(np.eye(3), (runs, 3, 3)).copy()
    dv = np.zeros((runs, 3))
    dp = np.zeros((runs, 3))
    for k, dt in enumerate(dts):
        a = np.einsum("rab,rb->ra", dR, accel[:, k])
        dp = dp + dv * dt + 0.5 * a * dt * dt
        dv = dv + a * dt
        dR = dR @ exp_so3_batch(gyro[:, k] * dt)
    return dR, dv, dp


def monte_carlo_preintegration(samples, t_end, noise: ImuNoiseModel, runs: int, seed: int = 0):
    """Sample covariance of ``[dphi, dv, dp]`` over noisy replays of ``samples``.

    Errors are taken against the noise-free increments with the same
    convention as the propagated covariance: ``dR_noisy = dR Exp(dphi)``.
    """
    rng = np.random.default_rng(seed)
    clean = integrate(samples, noise, t_end=t_end)
    gyro = np.array([s.gyro for s in samples])
    accel = np.array([s.accel for s in samples])
    times = np.array([s.timestamp for s in samples] + [t_end])
    n = len(samples)
    ng = rng.standard_normal((runs, n, 3)) @ np.linalg.cholesky(noise.gyro_cov).T
    na = rng.standard_normal((runs, n, 3)) @ np.linalg.cholesky(noise.accel_cov).T
    dR, dv, dp = euler_increments_batch(gyro[None] + ng, accel[None] + na, np.diff(times))
    errs = np.concatenate(
        [log_so3_batch(np.swapaxes(clean.delta_R, 0, 1)[None] @ dR), dv - clean.delta_v, dp - clean.delta_p], axis=1
    )
    return clean.cov, np.cov(errs.T)


def random_state(rng, n=3, spread=3.0):
    kfs = [
        KeyframeState(exp_so3(rng.normal(size=3)), spread * rng.normal(size=3), rng.normal(size=3), rng.normal(size=3))
        for _ in range(n)
    ]
    g = rng.normal(size=3)
    return InitState(kfs, 0.05 * rng.normal(size=3), g / np.linalg.norm(g))


def perturb_values(values, layout, delta):
    out = dict(values)
    o = 0
    for var in layout.free:
        out[var.id] = retract(var.kind, values[var.id], delta[o : o + var.dim])
        o += var.dim
    return out


def audit_block(build, state, extrinsic=None, h=1e-5, abs_tol=1e-5, rel_tol=1e-4):
    """Largest violation of ``|J_analytic - J_numeric| <= max(abs_tol, rel_tol |J_numeric|)``.

    ``build(state, extrinsic)`` returns one residual block. Every variable of
    the full layout is perturbed through its retraction with a 5-point
    central stencil; variables missing from the block's Jacobians must have
    a zero numerical Jacobian. Returns the worst ratio error / allowance
    (<= 1 passes) and the offending variable id.
    """
    from gnssinit.numdiff import jacobian
    from gnssinit.residuals import state_to_values, values_to_state
    from gnssinit.solver import layout_for

    layout = layout_for(state, extrinsic=extrinsic is not None)
    values = state_to_values(state, extrinsic)
    block = build(state, extrinsic)
    worst, where = 0.0, None
    for var in layout.variables:

        def f(d, var=var):
            v2 = dict(values)
            v2[var.id] = retract(var.kind, values[var.id], d)
            s, T = values_to_state(v2, state)
            return build(s, T).value

        num = jacobian(f, var.dim, h=h, points=5)
        ana = block.jacobians.get(var.id, np.zeros_like(num))
        ratio = float(np.max(np.abs(ana - num) / np.maximum(abs_tol, rel_tol * np.abs(num))))
        if ratio > worst:
            worst, where = ratio, var.id
    return worst, where


def consistent_pair(rng, pre, gravity, noise=0.5):
    """Two keyframes near the IMU prediction, so rotation errors stay well inside (-pi, pi)."""
    Ri = exp_so3(rng.normal(size=3))
    pi, vi = 3.0 * rng.normal(size=3), rng.normal(size=3)
    Rj, pj, vj = pre.predict(Ri, pi, vi, gravity)
    Rj = Rj @ exp_so3(noise * rng.normal(size=3))
    return (
        KeyframeState(Ri, pi, rng.normal(size=3), vi),
        KeyframeState(Rj, pj + noise * rng.normal(size=3), rng.normal(size=3), vj + noise * rng.normal(size=3)),
    )
