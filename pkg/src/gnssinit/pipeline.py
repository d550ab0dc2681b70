"""Incremental two-stage initialization.

Keyframes are created at GNSS epochs and added one at a time. Each new epoch
is followed by a short solve of the current problem:

* before activation, the relative cost (preintegration, gravity, rate and
  GNSS distance terms) with the first keyframe held fixed;
* from activation on, the global cost with the extrinsic ``T`` free and the
  first keyframe frozen at its values at the moment of the switch. The
  distance terms are replaced by an absolute term on every epoch.

Activation happens either when the trigger fires or after a forced number
of fixes (``activation_index = x``: global terms enter once ``x`` fixes have
been accumulated; 0 means from the start, ``x >= n`` means never, so ``T``
is not estimated at all).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyStream, NeverTriggered
from .manifold import Pose, exp_so3
from .preintegration import ImuNoiseModel, ImuSample, PreintegratedImu, gravity_from_increment, integrate
from .residuals import (
    GLOBAL,
    GRAVITY_MAG,
    RELATIVE,
    GnssMeasurement,
    InitState,
    KeyframeState,
    state_to_values,
)
from .stacked import StackedCost
from .solver import SolveReport, SolverOptions, gauge_fix, layout_for, solve_state
from .trigger import DEFAULT_THRESHOLD, TriggerTrace, extrinsic_hessian, update_trigger


@dataclass
class PipelineConfig:
    threshold: float = DEFAULT_THRESHOLD
    min_epochs: int = 3
    activation_index: int | None = None
    epoch_iterations: int = 8
    final: SolverOptions = field(default_factory=SolverOptions)
    # freeze the first velocity along with R and p at activation; None means
    # only when the first pose is known, since a seeded velocity is expressed
    # in the GNSS frame while the seeded rotation is not
    fix_velocity: bool | None = None
    require_trigger: bool = False
    gravity_mag: float = GRAVITY_MAG
    # known (R, p, v) of the first keyframe; without it only p is pinned
    # until activation and the seeds stand in for R and v afterwards
    initial_pose: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    # keep distance links on the epochs before activation instead of
    # anchoring every epoch once the global phase starts (not the default:
    # the global cost carries an absolute term for every epoch)
    retain_links: bool = False
    # rigidly rotate the relative-phase state onto the GNSS displacements
    # before each solve (only used when the first pose is unknown)
    align: bool = True


@dataclass
class TwoStageResult:
    state: InitState
    extrinsic: Pose | None
    trace: TriggerTrace
    reports: tuple[SolveReport | None, SolveReport | None]
    activation_index: int | None
    triggered: bool

    def positions_world(self) -> np.ndarray:
        T = Pose.identity() if self.extrinsic is None else self.extrinsic
        return np.array([T.act(kf.p) for kf in self.state.keyframes])


@dataclass
class EpochData:
    """IMU summaries attached to the GNSS epochs."""

    gnss: list[GnssMeasurement]
    pre: list[PreintegratedImu]
    gyro: list[np.ndarray]
    noise: ImuNoiseModel


def associate(imu: Sequence[ImuSample], gnss: Sequence[GnssMeasurement], noise: ImuNoiseModel) -> EpochData:
    """Attach each GNSS fix to its nearest IMU sample and preintegrate between them."""
    if not imu:
        raise EmptyStream("no IMU samples")
    if len(gnss) < 2:
        raise EmptyStream("need at least two GNSS fixes")
    t_imu = np.array([s.timestamp for s in imu])
    kept, idx = [], []
    for m in gnss:
        if m.timestamp < t_imu[0] or m.timestamp > t_imu[-1]:
            continue
        k = int(np.argmin(np.abs(t_imu - m.timestamp)))
        if idx and k <= idx[-1]:
            continue
        kept.append(m)
        idx.append(k)
    pre = [integrate(imu[a:b], noise, t_end=t_imu[b]) for a, b in zip(idx[:-1], idx[1:])]
    gyro = [np.asarray(imu[k].gyro, dtype=float) for k in idx]
    return EpochData(kept, pre, gyro, noise)


def _finite_difference_velocity(gnss: Sequence[GnssMeasurement], k: int) -> np.ndarray:
    n = len(gnss)
    a, b = max(k - 1, 0), min(k + 1, n - 1)
    return (gnss[b].position - gnss[a].position) / (gnss[b].timestamp - gnss[a].timestamp)


def seed_state(data: EpochData, gravity_mag: float = GRAVITY_MAG, initial_pose=None) -> InitState:
    """Data-driven starting point: chained gyro rotations from identity (or
    from a known first pose), GNSS positions, finite-difference velocities,
    zero bias, gravity from the first interval."""
    gnss = data.gnss
    R = np.eye(3) if initial_pose is None else np.asarray(initial_pose[0], dtype=float)
    kfs = []
    for k, m in enumerate(gnss):
        if k > 0:
            R = R @ data.pre[k - 1].delta_R
        kfs.append(KeyframeState(R.copy(), m.position.copy(), data.gyro[k].copy(), _finite_difference_velocity(gnss, k)))
    if initial_pose is not None:
        kfs[0].p = np.asarray(initial_pose[1], dtype=float).copy()
        kfs[0].v = np.asarray(initial_pose[2], dtype=float).copy()
    g = gravity_from_increment(data.pre[0], kfs[0].R, kfs[0].v, kfs[1].v)
    norm = np.linalg.norm(g)
    g_dir = g / norm if norm > 0 else np.array([0.0, 0.0, -1.0])
    return InitState(kfs, np.zeros(3), g_dir, gravity_mag)


def _extend(state: InitState, data: EpochData, k: int) -> None:
    """Append keyframe ``k`` predicted from keyframe ``k - 1`` by the IMU.

    Predicting the position as well (rather than copying the GNSS fix) keeps
    the stiff preintegration terms satisfied, so the new epoch only enters
    through the weaker GNSS terms.
    """
    prev = state.keyframes[-1]
    R, p, v = data.pre[k - 1].predict(prev.R, prev.p, prev.v, state.gravity, state.gyro_bias)
    state.keyframes.append(KeyframeState(R, p, data.gyro[k] - state.gyro_bias, v))


def _kabsch(A: np.ndarray, B: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Rotation ``Q`` minimizing ``sum w_k |Q a_k - b_k|^2``."""
    M = (B * w[:, None]).T @ A
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def rotate_state(state: InitState, Q: np.ndarray, pivot: int = 0) -> InitState:
    """Rigidly rotate every keyframe and gravity by ``Q`` about keyframe ``pivot``.

    All inertial residuals are invariant under this map, so it only changes
    the GNSS terms.
    """
    out = state.copy()
    c = state.keyframes[pivot].p
    for kf in out.keyframes:
        kf.R = Q @ kf.R
        kf.p = c + Q @ (kf.p - c)
        kf.v = Q @ kf.v
    out.gravity_dir = Q @ state.gravity_dir
    return out


def align_to_gnss(state: InitState, gnss: Sequence[GnssMeasurement], pivot: int = 0) -> InitState:
    """Best rigid rotation of ``state`` for the consecutive distance terms."""
    n = len(state)
    if n < 2:
        return state
    P = state.positions()
    A = P[1:] - P[:-1]
    B = np.array([gnss[k + 1].position - gnss[k].position for k in range(n - 1)])
    w = np.array([3.0 / np.trace(gnss[k].cov + gnss[k + 1].cov) for k in range(n - 1)])
    return rotate_state(state, _kabsch(A, B, w), pivot)


def _cost_of(cost: StackedCost, state: InitState, layout) -> float:
    r, _ = cost(state_to_values(state), layout, jacobian=False)
    return float(r @ r)


def run_incremental(data: EpochData, config: PipelineConfig) -> TwoStageResult:
    seeds = seed_state(data, config.gravity_mag, config.initial_pose)
    known = config.initial_pose is not None
    fix_v = known if config.fix_velocity is None else config.fix_velocity
    n = len(data.gnss)
    forced = config.activation_index
    trace = TriggerTrace(config.threshold, config.min_epochs)
    state = InitState(seeds.keyframes[:1], seeds.gyro_bias.copy(), seeds.gravity_dir.copy(), seeds.gravity_mag)
    extrinsic: Pose | None = None
    active_from: int | None = None
    activation: int | None = None
    stage1_report: SolveReport | None = None
    report: SolveReport | None = None
    step = SolverOptions(max_iterations=config.epoch_iterations)

    for m in range(2, n + 1):
        k = m - 1
        _extend(state, data, k)

        if active_from is None:
            update_trigger(trace, extrinsic_hessian(data.gnss[:m], state), k=m)
            fire = (forced is None and trace.k_star is not None) or (forced is not None and m > forced)
            if fire:
                activation = m if forced is None else max(forced, 1)
                first_anchor = m - 1 if forced is None else min(forced, m - 1)
                active_from = first_anchor if config.retain_links else 0
                extrinsic = Pose.identity()
                stage1_report = report
        else:
            update_trigger(trace, extrinsic_hessian(data.gnss[:m], state), k=m)

        opts = config.final if m == n else step
        if active_from is None:
            phase = RELATIVE
            if known:
                lay = gauge_fix(layout_for(state), 0, velocity=fix_v)
            else:
                lay = layout_for(state).with_fixed(["p0"])
        else:
            phase = GLOBAL
            lay = gauge_fix(layout_for(state, extrinsic=True), 0, velocity=fix_v)

        cost = StackedCost(
            data.pre[: m - 1],
            data.gnss[:m],
            phase,
            gyro_meas=data.gyro[:m],
            gyro_cov=data.noise.gyro_cov,
            global_from=active_from or 0,
            gravity_mag=state.gravity_mag,
        )
        if phase == RELATIVE and config.align and not known:
            aligned = align_to_gnss(state, data.gnss[:m])
            if _cost_of(cost, aligned, lay) < _cost_of(cost, state, lay):
                state = aligned
        state, T_new, report = solve_state(None, lay, state, extrinsic, opts, system=cost)
        if active_from is not None:
            extrinsic = T_new

    if active_from is None:
        stage1_report = report
    result = TwoStageResult(state, extrinsic, trace, (stage1_report, report), activation, active_from is not None)
    if active_from is None and config.require_trigger:
        err = NeverTriggered("activation criterion never satisfied")
        err.result = result
        raise err
    return result


def run_two_stage(imu, gnss, noise: ImuNoiseModel, config: PipelineConfig | None = None) -> TwoStageResult:
    """Trigger-driven run (``config.activation_index`` is ignored)."""
    cfg = config or PipelineConfig()
    cfg = PipelineConfig(**{**cfg.__dict__, "activation_index": None})
    return run_incremental(associate(imu, gnss, noise), cfg)


def run_fixed_activation(imu, gnss, noise: ImuNoiseModel, index: int, config: PipelineConfig | None = None) -> TwoStageResult:
    """Run with global terms switched on once ``index`` GNSS fixes are in (0: from the start, >= n: never)."""
    cfg = config or PipelineConfig()
    cfg = PipelineConfig(**{**cfg.__dict__, "activation_index": int(index)})
    return run_incremental(associate(imu, gnss, noise), cfg)


def run_naive(imu, gnss, noise: ImuNoiseModel, config: PipelineConfig | None = None) -> TwoStageResult:
    return run_fixed_activation(imu, gnss, noise, 0, config)
