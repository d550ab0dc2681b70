"""Residual blocks of the relative-phase and global-phase costs.

Every block carries its value, an information matrix (inverse covariance) and
analytic Jacobians keyed by variable id. Variable ids are short strings:
``R{k}``, ``p{k}``, ``w{k}``, ``v{k}`` for keyframe ``k``, plus ``bg`` (gyro
bias), ``g`` (gravity direction, 2-dof on S^2) and ``T`` (extrinsic pose,
6-dof ``[t, w]``). Rotations and the pose are perturbed on the right.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import IndexOutOfRange, LengthMismatch
from .manifold import (
    Pose,
    exp_so3,
    hat,
    log_so3,
    right_jacobian_inv_so3,
    right_jacobian_so3,
    s2_tangent_basis,
)
from .preintegration import PreintegratedImu

GRAVITY_MAG = 9.81

RELATIVE = "relative"
GLOBAL = "global"


@dataclass
class KeyframeState:
    R: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    v: np.ndarray

    def copy(self) -> "KeyframeState":
        return KeyframeState(self.R.copy(), self.p.copy(), self.omega.copy(), self.v.copy())


@dataclass
class InitState:
    keyframes: list[KeyframeState]
    gyro_bias: np.ndarray
    gravity_dir: np.ndarray
    gravity_mag: float = GRAVITY_MAG

    @property
    def gravity(self) -> np.ndarray:
        return self.gravity_mag * self.gravity_dir

    def __len__(self) -> int:
        return len(self.keyframes)

    def copy(self) -> "InitState":
        return InitState(
            [kf.copy() for kf in self.keyframes],
            self.gyro_bias.copy(),
            self.gravity_dir.copy(),
            self.gravity_mag,
        )

    def positions(self) -> np.ndarray:
        return np.array([kf.p for kf in self.keyframes])


@dataclass(frozen=True)
class GnssMeasurement:
    timestamp: float
    position: np.ndarray
    cov: np.ndarray


@dataclass
class ResidualBlock:
    name: str
    value: np.ndarray
    weight: np.ndarray
    jacobians: dict[str, np.ndarray] = field(default_factory=dict)

    def cost(self) -> float:
        r = self.value
        return float(r @ self.weight @ r)


def total_cost(blocks: Sequence[ResidualBlock]) -> float:
    """Sum of squared Mahalanobis norms."""
    return float(sum(b.cost() for b in blocks))


@lru_cache(maxsize=4096)
def _info_from_bytes(raw: bytes, n: int) -> np.ndarray:
    cov = np.frombuffer(raw, dtype=float).reshape(n, n)
    W = np.linalg.inv(cov)
    W = 0.5 * (W + W.T)
    W.flags.writeable = False
    return W


def _info(cov: np.ndarray) -> np.ndarray:
    """Symmetrized inverse; cached because the same covariances recur every iteration."""
    cov = np.ascontiguousarray(cov, dtype=float)
    return _info_from_bytes(cov.tobytes(), cov.shape[0])


# -- individual residuals ----------------------------------------------------


def r_angular_velocity(state_k: KeyframeState, bias, gyro_meas, gyro_cov, k: int = 0) -> ResidualBlock:
    value = state_k.omega - (np.asarray(gyro_meas) - bias)
    I = np.eye(3)
    return ResidualBlock(f"r_w{k}", value, _info(gyro_cov), {f"w{k}": I, "bg": I.copy()})


def r_preint_rotation(state_i, state_j, pre: PreintegratedImu, bias, i: int = 0, j: int = 1) -> ResidualBlock:
    db = np.asarray(bias, dtype=float) - pre.gyro_bias_ref
    corr = pre.dR_dbg @ db
    dR = pre.delta_R @ exp_so3(corr)
    E = dR.T @ state_i.R.T @ state_j.R
    r = log_so3(E)
    Jinv = right_jacobian_inv_so3(r)
    jac = {
        f"R{i}": -Jinv @ state_j.R.T @ state_i.R,
        f"R{j}": Jinv,
        "bg": -Jinv @ E.T @ right_jacobian_so3(corr) @ pre.dR_dbg,
    }
    return ResidualBlock(f"r_dR{i}", r, _info(pre.cov[:3, :3]), jac)


def r_preint_velocity(state_i, state_j, pre, gravity_dir, gravity_mag=GRAVITY_MAG, bias=None, i=0, j=1):
    dt = pre.delta_t
    dv = pre.delta_v
    if bias is not None:
        dv = dv + pre.dv_dbg @ (np.asarray(bias) - pre.gyro_bias_ref)
    Ri = state_i.R
    y = Ri.T @ (state_j.v - state_i.v - gravity_mag * gravity_dir * dt)
    jac = {
        f"R{i}": hat(y),
        f"v{i}": -Ri.T,
        f"v{j}": Ri.T.copy(),
        "bg": -pre.dv_dbg,
        "g": -gravity_mag * dt * Ri.T @ s2_tangent_basis(gravity_dir),
    }
    return ResidualBlock(f"r_dv{i}", y - dv, _info(pre.cov[3:6, 3:6]), jac)


def r_preint_position(state_i, state_j, pre, gravity_dir, gravity_mag=GRAVITY_MAG, bias=None, i=0, j=1):
    dt = pre.delta_t
    dp = pre.delta_p
    if bias is not None:
        dp = dp + pre.dp_dbg @ (np.asarray(bias) - pre.gyro_bias_ref)
    Ri = state_i.R
    y = Ri.T @ (
        state_j.p - state_i.p - state_i.v * dt - 0.5 * gravity_mag * gravity_dir * dt * dt
    )
    jac = {
        f"R{i}": hat(y),
        f"p{i}": -Ri.T,
        f"p{j}": Ri.T.copy(),
        f"v{i}": -Ri.T * dt,
        "bg": -pre.dp_dbg,
        "g": -0.5 * gravity_mag * dt * dt * Ri.T @ s2_tangent_basis(gravity_dir),
    }
    return ResidualBlock(f"r_dp{i}", y - dp, _info(pre.cov[6:9, 6:9]), jac)


def r_gps_global(state_k: KeyframeState, meas: GnssMeasurement, extrinsic: Pose | None = None, k=0):
    """``T * p_k - p_hat``; reduces to ``p_k - p_hat`` at the identity extrinsic."""
    T = Pose.identity() if extrinsic is None else extrinsic
    value = T.R @ state_k.p + T.t - meas.position
    jac = {
        f"p{k}": T.R.copy(),
        "T": np.hstack([T.R, -T.R @ hat(state_k.p)]),
    }
    return ResidualBlock(f"r_p{k}", value, _info(meas.cov), jac)


def r_gps_relative(state_j, state_k, meas_j, meas_k, j=0, k=1) -> ResidualBlock:
    if j == k:
        raise ValueError("relative residual needs two distinct epochs")
    value = (state_j.p - state_k.p) - (meas_j.position - meas_k.position)
    I = np.eye(3)
    return ResidualBlock(
        f"r_d{j}_{k}", value, _info(meas_j.cov + meas_k.cov), {f"p{j}": I, f"p{k}": -I}
    )


def r_gravity(state_i, state_j, pre, gravity_dir, gravity_mag=GRAVITY_MAG, bias=None, i=0, j=1):
    dt = pre.delta_t
    dv = pre.delta_v
    if bias is not None:
        dv = dv + pre.dv_dbg @ (np.asarray(bias) - pre.gyro_bias_ref)
    Ri = state_i.R
    value = (state_j.v - state_i.v) / dt - Ri @ dv / dt - gravity_mag * gravity_dir
    I = np.eye(3)
    jac = {
        f"v{i}": -I / dt,
        f"v{j}": I / dt,
        f"R{i}": Ri @ hat(dv) / dt,
        "bg": -Ri @ pre.dv_dbg / dt,
        "g": -gravity_mag * s2_tangent_basis(gravity_dir),
    }
    return ResidualBlock(f"r_g{i}", value, _info(pre.cov[3:6, 3:6] / (dt * dt)), jac)


# -- assembly ----------------------------------------------------------------


def consecutive_pairs(n: int) -> list[tuple[int, int]]:
    return [(k, k + 1) for k in range(n - 1)]


def assemble_cost(
    state: InitState,
    pre_list: Sequence[PreintegratedImu],
    gnss_list: Sequence[GnssMeasurement],
    phase: str = RELATIVE,
    pair_set: Sequence[tuple[int, int]] | None = None,
    extrinsic: Pose | None = None,
    gyro_meas: Sequence[np.ndarray] | None = None,
    gyro_cov: np.ndarray | None = None,
    global_from: int = 0,
) -> list[ResidualBlock]:
    """All residual blocks of one phase.

    Per interval ``(i, i+1)``: rotation, velocity and position preintegration
    terms and the gravity term. Per keyframe: the angular-velocity term (when
    ``gyro_meas`` is given). Relative phase adds one distance term per pair in
    ``pair_set`` (consecutive by default); global phase instead adds one
    absolute GNSS term per keyframe, through ``extrinsic``. With
    ``global_from = a > 0`` the global phase anchors only keyframes ``k >= a``
    and links each earlier keyframe to its successor by a distance term.
    """
    n = len(state)
    if len(pre_list) != n - 1 or len(gnss_list) != n:
        raise LengthMismatch(
            f"{n} keyframes need {n - 1} preintegrations and {n} GNSS fixes, "
            f"got {len(pre_list)} and {len(gnss_list)}"
        )
    kfs = state.keyframes
    g_dir, g_mag, bg = state.gravity_dir, state.gravity_mag, state.gyro_bias
    blocks: list[ResidualBlock] = []
    for i, pre in enumerate(pre_list):
        a, b = kfs[i], kfs[i + 1]
        blocks.append(r_preint_rotation(a, b, pre, bg, i, i + 1))
        blocks.append(r_preint_velocity(a, b, pre, g_dir, g_mag, bg, i, i + 1))
        blocks.append(r_preint_position(a, b, pre, g_dir, g_mag, bg, i, i + 1))
        blocks.append(r_gravity(a, b, pre, g_dir, g_mag, bg, i, i + 1))
    if gyro_meas is not None:
        if len(gyro_meas) != n:
            raise LengthMismatch("one gyro measurement per keyframe is required")
        cov = np.eye(3) * 1e-6 if gyro_cov is None else gyro_cov
        for k in range(n):
            blocks.append(r_angular_velocity(kfs[k], bg, gyro_meas[k], cov, k))
    if phase == RELATIVE:
        pairs = consecutive_pairs(n) if pair_set is None else pair_set
        for j, k in pairs:
            if not (0 <= j < n and 0 <= k < n):
                raise IndexOutOfRange(f"pair ({j}, {k}) outside 0..{n - 1}")
            blocks.append(r_gps_relative(kfs[j], kfs[k], gnss_list[j], gnss_list[k], j, k))
    elif phase == GLOBAL:
        for k in range(min(global_from, n - 1)):
            blocks.append(r_gps_relative(kfs[k], kfs[k + 1], gnss_list[k], gnss_list[k + 1], k, k + 1))
        for k in range(global_from, n):
            blocks.append(r_gps_global(kfs[k], gnss_list[k], extrinsic, k))
    else:
        raise ValueError(f"unknown phase {phase!r}")
    return blocks


# -- flat views used by the solver -------------------------------------------


def state_to_values(state: InitState, extrinsic: Pose | None = None) -> dict:
    values: dict = {}
    for k, kf in enumerate(state.keyframes):
        values[f"R{k}"] = kf.R
        values[f"p{k}"] = kf.p
        values[f"w{k}"] = kf.omega
        values[f"v{k}"] = kf.v
    values["bg"] = state.gyro_bias
    values["g"] = state.gravity_dir
    if extrinsic is not None:
        values["T"] = extrinsic
    return values


def values_to_state(values: dict, template: InitState) -> tuple[InitState, Pose | None]:
    kfs = [
        KeyframeState(values[f"R{k}"], values[f"p{k}"], values[f"w{k}"], values[f"v{k}"])
        for k in range(len(template))
    ]
    state = replace(template, keyframes=kfs, gyro_bias=values["bg"], gravity_dir=values["g"])
    return state, values.get("T")
