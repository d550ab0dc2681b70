"""IMU preintegration between two keyframes.

Increments are accumulated with a first-order (forward Euler) step per sample
interval, and the 9x9 covariance of ``[dphi, dv, dp]`` is propagated with the
matching ``A``/``B`` matrices starting from zero. Noise covariances in
:class:`ImuNoiseModel` are *per sample* (discrete-time): a gyro sample is
``w_true + b_g + n`` with ``n ~ N(0, gyro_cov)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyStream, NonMonotonicTimestamps
from .manifold import exp_so3, hat, right_jacobian_so3


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    gyro: np.ndarray
    accel: np.ndarray


@dataclass(frozen=True)
class ImuNoiseModel:
    gyro_cov: np.ndarray
    accel_cov: np.ndarray

    @classmethod
    def isotropic(cls, gyro_sigma: float, accel_sigma: float) -> "ImuNoiseModel":
        return cls(gyro_sigma**2 * np.eye(3), accel_sigma**2 * np.eye(3))

    @property
    def cov(self) -> np.ndarray:
        out = np.zeros((6, 6))
        out[:3, :3] = self.gyro_cov
        out[3:, 3:] = self.accel_cov
        return out


@dataclass
class PreintegratedImu:
    delta_R: np.ndarray
    delta_v: np.ndarray
    delta_p: np.ndarray
    delta_t: float
    cov: np.ndarray
    gyro_bias_ref: np.ndarray
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # first-order sensitivities of the increments to the gyro bias
    dR_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dv_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    dp_dbg: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))

    def corrected(self, gyro_bias: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Increments re-linearised at a new gyro bias (first order)."""
        db = np.asarray(gyro_bias, dtype=float) - self.gyro_bias_ref
        return (
            self.delta_R @ exp_so3(self.dR_dbg @ db),
            self.delta_v + self.dv_dbg @ db,
            self.delta_p + self.dp_dbg @ db,
        )

    def predict(self, R_i, p_i, v_i, gravity, gyro_bias=None):
        """Propagate a world-frame state ``(R, p, v)`` across the interval."""
        if gyro_bias is None:
            dR, dv, dp = self.delta_R, self.delta_v, self.delta_p
        else:
            dR, dv, dp = self.corrected(gyro_bias)
        dt = self.delta_t
        R_j = R_i @ dR
        v_j = v_i + gravity * dt + R_i @ dv
        p_j = p_i + v_i * dt + 0.5 * gravity * dt * dt + R_i @ dp
        return R_j, p_j, v_j


def _intervals(samples: Sequence[ImuSample], t_end: float | None) -> np.ndarray:
    t = np.array([s.timestamp for s in samples], dtype=float)
    if np.any(np.diff(t) <= 0.0):
        raise NonMonotonicTimestamps("IMU timestamps must be strictly increasing")
    dts = np.empty(len(t))
    dts[:-1] = np.diff(t)
    if t_end is not None:
        dts[-1] = t_end - t[-1]
    elif len(t) > 1:
        dts[-1] = dts[-2]
    else:
        raise ValueError("a single sample needs t_end to define its interval")
    if dts[-1] <= 0.0:
        raise NonMonotonicTimestamps("t_end must come after the last sample")
    return dts


def integrate(
    samples: Sequence[ImuSample],
    noise: ImuNoiseModel,
    gyro_bias=None,
    accel_bias=None,
    t_end: float | None = None,
) -> PreintegratedImu:
    """Preintegrate ``samples``.

    Each sample is held over the interval to the next one. The last sample is
    held until ``t_end`` when given, otherwise over the previous interval.
    """
    if len(samples) == 0:
        raise EmptyStream("no IMU samples to integrate")
    bg = np.zeros(3) if gyro_bias is None else np.asarray(gyro_bias, dtype=float)
    ba = np.zeros(3) if accel_bias is None else np.asarray(accel_bias, dtype=float)
    dts = _intervals(samples, t_end)
    Q = noise.cov

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    cov = np.zeros((9, 9))
    dR_dbg = np.zeros((3, 3))
    dv_dbg = np.zeros((3, 3))
    dp_dbg = np.zeros((3, 3))
    A = np.eye(9)
    B = np.zeros((9, 6))

    for s, dt in zip(samples, dts):
        w = np.asarray(s.gyro, dtype=float) - bg
        a = np.asarray(s.accel, dtype=float) - ba
        step = exp_so3(w * dt)
        Jr = right_jacobian_so3(w * dt)
        dR_a_hat = dR @ hat(a)

        A[:3, :3] = step.T
        A[3:6, :3] = -dR_a_hat * dt
        A[6:9, :3] = -0.5 * dR_a_hat * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt
        B[:3, :3] = Jr * dt
        B[3:6, 3:] = dR * dt
        B[6:9, 3:] = 0.5 * dR * dt * dt
        cov = A @ cov @ A.T + B @ Q @ B.T

        dp_dbg = dp_dbg + dv_dbg * dt - 0.5 * dR_a_hat @ dR_dbg * dt * dt
        dv_dbg = dv_dbg - dR_a_hat @ dR_dbg * dt
        dR_dbg = step.T @ dR_dbg - Jr * dt

        dp = dp + dv * dt + 0.5 * (dR @ a) * dt * dt
        dv = dv + (dR @ a) * dt
        dR = dR @ step

    return PreintegratedImu(
        delta_R=dR,
        delta_v=dv,
        delta_p=dp,
        delta_t=float(np.sum(dts)),
        cov=0.5 * (cov + cov.T),
        gyro_bias_ref=bg.copy(),
        accel_bias=ba.copy(),
        dR_dbg=dR_dbg,
        dv_dbg=dv_dbg,
        dp_dbg=dp_dbg,
    )


def compose(first: PreintegratedImu, second: PreintegratedImu) -> PreintegratedImu:
    """Chain two consecutive preintegrations linearised at the same biases."""
    if not np.allclose(first.gyro_bias_ref, second.gyro_bias_ref):
        raise ValueError("cannot compose preintegrations with different bias references")
    R1, v1, p1, t1 = first.delta_R, first.delta_v, first.delta_p, first.delta_t
    R2, v2, p2, t2 = second.delta_R, second.delta_v, second.delta_p, second.delta_t

    # linear maps of each part's noise into the combined [dphi, dv, dp]
    F = np.eye(9)
    F[:3, :3] = R2.T
    F[3:6, :3] = -R1 @ hat(v2)
    F[6:9, :3] = -R1 @ hat(p2)
    F[6:9, 3:6] = np.eye(3) * t2
    G = np.zeros((9, 9))
    G[:3, :3] = np.eye(3)
    G[3:6, 3:6] = R1
    G[6:9, 6:9] = R1
    cov = F @ first.cov @ F.T + G @ second.cov @ G.T

    return PreintegratedImu(
        delta_R=R1 @ R2,
        delta_v=v1 + R1 @ v2,
        delta_p=p1 + v1 * t2 + R1 @ p2,
        delta_t=t1 + t2,
        cov=0.5 * (cov + cov.T),
        gyro_bias_ref=first.gyro_bias_ref.copy(),
        accel_bias=first.accel_bias.copy(),
        dR_dbg=R2.T @ first.dR_dbg + second.dR_dbg,
        dv_dbg=first.dv_dbg - R1 @ hat(v2) @ first.dR_dbg + R1 @ second.dv_dbg,
        dp_dbg=first.dp_dbg
        + first.dv_dbg * t2
        - R1 @ hat(p2) @ first.dR_dbg
        + R1 @ second.dp_dbg,
    )


def gravity_from_increment(pre: PreintegratedImu, R_i, v_i, v_j) -> np.ndarray:
    """Gravity implied by the velocity increment and the endpoint velocities."""
    dt = pre.delta_t
    return (np.asarray(v_j) - np.asarray(v_i)) / dt - np.asarray(R_i) @ pre.delta_v / dt
