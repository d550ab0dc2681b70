"""Lie-group helpers for SO(3), SE(3) and the unit sphere S^2.

Rotations are plain ``(3, 3)`` numpy arrays; tangent vectors are ``(3,)``
arrays. Perturbations are applied on the right, ``R <- R @ exp_so3(d)``,
which is the convention every Jacobian in this package assumes.

Tangent vectors of SE(3) are ordered ``[t, w]`` (translation first).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import AntipodalPoints, NotSkewSymmetric

SMALL_ANGLE = 1e-8
# below this sin(theta), log_so3 switches to the symmetric-part axis extraction
NEAR_PI_SIN = 1e-3


def hat(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(M: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if np.max(np.abs(M + M.T)) > tol:
        raise NotSkewSymmetric("matrix is not antisymmetric within %g" % tol)
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def _rodrigues_coeffs(theta: float) -> tuple[float, float]:
    """Return ``sin(t)/t`` and ``(1 - cos(t))/t^2``."""
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0
    half = 0.5 * theta
    return np.sin(theta) / theta, 2.0 * (np.sin(half) / theta) ** 2


def exp_so3(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    a, b = _rodrigues_coeffs(theta)
    W = hat(phi)
    return np.eye(3) + a * W + b * (W @ W)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Principal logarithm, ``||result|| <= pi``.

    The angle comes from ``atan2`` of the antisymmetric and trace parts, so it
    is well conditioned over the whole range. Close to ``pi`` the antisymmetric
    part vanishes and the axis is read from the column of ``(R + R^T)/2 - cos I``
    with the largest diagonal entry.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = float(np.linalg.norm(w))
    c = float(np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0))
    theta = float(np.arctan2(s, c))
    if theta < SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)
    if c < 0.0 and s < NEAR_PI_SIN:
        S = 0.5 * (R + R.T) - c * np.eye(3)
        k = int(np.argmax(np.diag(S)))
        axis = S[:, k] / np.linalg.norm(S[:, k])
        if axis @ w < 0.0:
            axis = -axis
        return theta * axis
    return theta * w / s


def right_jacobian_so3(phi: np.ndarray) -> np.ndarray:
    """``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    W = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + (W @ W) / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        - 2.0 * np.sin(0.5 * theta) ** 2 / t2 * W
        + (theta - np.sin(theta)) / (t2 * theta) * (W @ W)
    )


def right_jacobian_inv_so3(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    W = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 12.0
    t2 = theta * theta
    coeff = 1.0 / t2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + coeff * (W @ W)


def left_jacobian_so3(phi: np.ndarray) -> np.ndarray:
    """``integral_0^1 Exp(s phi) ds``; equals ``Jr(-phi)``."""
    return right_jacobian_so3(-np.asarray(phi, dtype=float))


# -- batched SO(3) helpers ----------------------------------------------------
# Same formulas as the scalar versions, over a leading axis of size K.


def hat_batch(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def _batch_theta(phi: np.ndarray):
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    return theta, small, safe


def exp_so3_batch(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta, small, safe = _batch_theta(phi)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, 2.0 * (np.sin(0.5 * safe) / safe) ** 2)
    W = hat_batch(phi)
    return np.eye(3) + a[:, None, None] * W + b[:, None, None] * (W @ W)


def log_so3_batch(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=-1)
    s = np.linalg.norm(w, axis=-1)
    c = np.clip(0.5 * (np.trace(R, axis1=1, axis2=2) - 1.0), -1.0, 1.0)
    theta = np.arctan2(s, c)
    small = theta < SMALL_ANGLE
    scale = np.where(small, 1.0 + theta * theta / 6.0, theta / np.where(small, 1.0, np.maximum(s, 1e-300)))
    out = w * scale[:, None]
    for k in np.flatnonzero((c < 0.0) & (s < NEAR_PI_SIN)):
        out[k] = log_so3(R[k])
    return out


def right_jacobian_so3_batch(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta, small, safe = _batch_theta(phi)
    t2 = safe * safe
    a = np.where(small, 0.5, 2.0 * np.sin(0.5 * safe) ** 2 / t2)
    b = np.where(small, 1.0 / 6.0, (safe - np.sin(safe)) / (t2 * safe))
    W = hat_batch(phi)
    return np.eye(3) - a[:, None, None] * W + b[:, None, None] * (W @ W)


def right_jacobian_inv_so3_batch(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta, small, safe = _batch_theta(phi)
    coeff = np.where(small, 1.0 / 12.0, 1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)))
    W = hat_batch(phi)
    return np.eye(3) + 0.5 * W + coeff[:, None, None] * (W @ W)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping body coordinates to world coordinates."""

    R: np.ndarray
    t: np.ndarray

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def act(self, p: np.ndarray) -> np.ndarray:
        return self.R @ p + self.t

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)


def _V(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = hat(omega)
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return np.eye(3) + (0.5 - t2 / 24.0) * W + (1.0 / 6.0 - t2 / 120.0) * (W @ W)
    t2 = theta * theta
    return (
        np.eye(3)
        + 2.0 * np.sin(0.5 * theta) ** 2 / t2 * W
        + (theta - np.sin(theta)) / (t2 * theta) * (W @ W)
    )


def _V_inv(omega: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(omega))
    W = hat(omega)
    if theta < SMALL_ANGLE:
        gamma = 1.0 / 12.0 + theta * theta / 720.0
    else:
        half = 0.5 * theta
        gamma = (1.0 - half * np.cos(half) / np.sin(half)) / (theta * theta)
    return np.eye(3) - 0.5 * W + gamma * (W @ W)


def exp_se3(xi: np.ndarray) -> Pose:
    xi = np.asarray(xi, dtype=float)
    t, omega = xi[:3], xi[3:]
    return Pose(exp_so3(omega), _V(omega) @ t)


def log_se3(T: Pose) -> np.ndarray:
    omega = log_so3(T.R)
    return np.concatenate([_V_inv(omega) @ T.t, omega])


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.linalg.norm(R.T @ R - np.eye(3)) <= tol
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def project_to_so3(M: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


# -- unit sphere -------------------------------------------------------------


def s2_tangent_basis(g: np.ndarray) -> np.ndarray:
    """Orthonormal ``(3, 2)`` basis ``B`` of the tangent plane at ``g``.

    Built by projecting the canonical axis least aligned with ``g`` onto the
    tangent plane; the second column is ``g x b1`` so ``[b1, b2, g]`` is a
    right-handed frame.
    """
    g = np.ascontiguousarray(g, dtype=float)
    return _s2_basis_cached(g.tobytes()).copy()


@lru_cache(maxsize=1024)
def _s2_basis_cached(raw: bytes) -> np.ndarray:
    g = np.frombuffer(raw, dtype=float)
    k = int(np.argmin(np.abs(g)))
    b1 = -g[k] * g
    b1[k] += 1.0
    b1 /= np.sqrt(b1 @ b1)
    b2 = hat(g) @ b1
    return np.column_stack([b1, b2])


def s2_rotation(g: np.ndarray) -> np.ndarray:
    """Rotation taking the z axis to ``g``; its first two columns span ``T_g S^2``."""
    B = s2_tangent_basis(g)
    return np.column_stack([B, g])


def _exp_s2(delta: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(delta))
    sinc = 1.0 - n * n / 6.0 if n < SMALL_ANGLE else np.sin(n) / n
    return np.array([sinc * delta[0], sinc * delta[1], np.cos(n)])


def _log_s2(u: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(u[:2]))
    theta = float(np.arctan2(n, u[2]))
    if n < SMALL_ANGLE:
        return u[:2] * (1.0 + theta * theta / 6.0)
    return theta * u[:2] / n


def s2_boxplus(g: np.ndarray, delta: np.ndarray) -> np.ndarray:
    out = s2_rotation(g) @ _exp_s2(np.asarray(delta, dtype=float))
    return out / np.linalg.norm(out)


def s2_boxminus(g2: np.ndarray, g1: np.ndarray) -> np.ndarray:
    g1 = np.asarray(g1, dtype=float)
    g2 = np.asarray(g2, dtype=float)
    if g2 @ g1 < -1.0 + 1e-9:
        raise AntipodalPoints("boxminus is undefined for antipodal directions")
    return _log_s2(s2_rotation(g1).T @ g2)
