"""Activation criterion for the global GNSS terms.

The extrinsic pose ``T`` is judged observable once the condition number of a
GNSS-only Gauss-Newton Hessian in the six tangent parameters of ``T`` stops
changing: ``rho_k = s_max / s_min`` and ``drho_k = |rho_k - rho_{k-1}| / rho_{k-1}``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientMeasurements
from .manifold import Pose, hat
from .residuals import GnssMeasurement, InitState

DEFAULT_THRESHOLD = 1e-2
# singular values below this fraction of the largest count as zero
ZERO_SV_REL = 1e-12


def pair_jacobian(p_a, p_b, extrinsic: Pose) -> np.ndarray:
    """9x6 Jacobian of ``[relative a->b; absolute a; absolute b]`` w.r.t. ``T``."""
    R = extrinsic.R
    J = np.zeros((9, 6))
    J[0:3, 3:6] = -R @ hat(np.asarray(p_b) - np.asarray(p_a))
    J[3:6, 0:3] = R
    J[3:6, 3:6] = -R @ hat(p_a)
    J[6:9, 0:3] = R
    J[6:9, 3:6] = -R @ hat(p_b)
    return J


def pair_information(meas_a: GnssMeasurement, meas_b: GnssMeasurement) -> np.ndarray:
    cov = np.zeros((9, 9))
    cov[0:3, 0:3] = meas_a.cov + meas_b.cov
    cov[3:6, 3:6] = meas_a.cov
    cov[6:9, 6:9] = meas_b.cov
    return np.linalg.inv(cov)


def pair_residual(p_a, p_b, meas_a: GnssMeasurement, meas_b: GnssMeasurement, extrinsic: Pose) -> np.ndarray:
    """The stacked 9-vector whose Jacobian is :func:`pair_jacobian`."""
    R, t = extrinsic.R, extrinsic.t
    return np.concatenate(
        [
            R @ (np.asarray(p_b) - p_a) - (meas_b.position - meas_a.position),
            R @ p_a + t - meas_a.position,
            R @ p_b + t - meas_b.position,
        ]
    )


def extrinsic_hessian(
    gnss: Sequence[GnssMeasurement],
    state: InitState | None = None,
    extrinsic: Pose | None = None,
) -> np.ndarray:
    """``sum_k J_k^T Omega_k J_k`` over consecutive measurement pairs.

    Positions come from ``state`` when given, otherwise the measured positions
    are used as the linearization point.
    """
    if len(gnss) < 2:
        raise InsufficientMeasurements("the extrinsic Hessian needs at least two GNSS fixes")
    T = Pose.identity() if extrinsic is None else extrinsic
    if state is None:
        pos = [m.position for m in gnss]
    else:
        if len(state) < len(gnss):
            raise InsufficientMeasurements("state has fewer keyframes than GNSS fixes")
        pos = [kf.p for kf in state.keyframes[: len(gnss)]]
    H = np.zeros((6, 6))
    for a in range(len(gnss) - 1):
        J = pair_jacobian(pos[a], pos[a + 1], T)
        H += J.T @ pair_information(gnss[a], gnss[a + 1]) @ J
    return 0.5 * (H + H.T)


@dataclass
class TriggerRecord:
    k: int
    singular_values: np.ndarray
    rho: float
    delta_rho: float
    fired: bool


@dataclass
class TriggerTrace:
    threshold: float = DEFAULT_THRESHOLD
    min_epochs: int = 0
    records: list[TriggerRecord] = field(default_factory=list)
    k_star: int | None = None

    @property
    def rho(self) -> np.ndarray:
        return np.array([r.rho for r in self.records])

    @property
    def delta_rho(self) -> np.ndarray:
        return np.array([r.delta_rho for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k"] + [f"sigma_{i}" for i in range(1, 7)] + ["rho", "delta_rho", "fired"])
            for r in self.records:
                sv = list(r.singular_values) + [float("nan")] * (6 - len(r.singular_values))
                w.writerow([r.k] + [repr(float(s)) for s in sv] + [repr(r.rho), repr(r.delta_rho), int(r.fired)])


def condition_ratio(singular_values: np.ndarray) -> float:
    s = np.sort(np.asarray(singular_values, dtype=float))[::-1]
    if s.size == 0 or s[0] <= 0.0:
        return float("inf")
    nonzero = s[s > ZERO_SV_REL * s[0]]
    return float(s[0] / nonzero[-1])


def update_with_rho(trace: TriggerTrace, rho: float, singular_values=None, k: int | None = None) -> TriggerTrace:
    """Append one epoch given its ratio directly."""
    k = len(trace.records) + 1 if k is None else k
    if trace.records:
        prev = trace.records[-1].rho
        delta = abs((rho - prev) / prev) if np.isfinite(prev) and prev != 0 else float("inf")
    else:
        delta = float("inf")
    fired = trace.k_star is None and delta < trace.threshold and k >= trace.min_epochs
    if fired:
        trace.k_star = k
    sv = np.array([] if singular_values is None else singular_values, dtype=float)
    trace.records.append(TriggerRecord(k, sv, float(rho), float(delta), fired))
    return trace


def update_trigger(trace: TriggerTrace, H: np.ndarray, k: int | None = None) -> TriggerTrace:
    H = np.asarray(H, dtype=float)
    s = np.sort(np.abs(np.linalg.eigvalsh(0.5 * (H + H.T))))[::-1]
    return update_with_rho(trace, condition_ratio(s), s, k)
