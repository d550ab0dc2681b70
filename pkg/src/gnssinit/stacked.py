"""Vectorized evaluation of the assembled cost.

:class:`StackedCost` produces the same residuals and Jacobians as the blocks
returned by :func:`residuals.assemble_cost`, in the same row order, but
computes every interval at once and writes the whitened system ``(r, J)``
directly, with ``J`` in scipy sparse (CSR) form by default. It is what the
pipeline hands to the solver; the per-block functions remain the reference
implementation.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import sparse as sp

from .errors import IndexOutOfRange, LengthMismatch
from .manifold import (
    exp_so3_batch,
    hat_batch,
    log_so3_batch,
    right_jacobian_inv_so3_batch,
    right_jacobian_so3_batch,
    s2_tangent_basis,
)
from .preintegration import PreintegratedImu
from .residuals import GLOBAL, GRAVITY_MAG, RELATIVE, GnssMeasurement, consecutive_pairs


def _whiteners(covs: np.ndarray) -> np.ndarray:
    """Upper factors ``L`` with ``L^T L = cov^-1`` for a stack of covariances."""
    W = np.linalg.inv(covs)
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    return np.swapaxes(np.linalg.cholesky(W), -1, -2)


class StackedCost:
    """Whitened residual vector and Jacobian of one phase of the cost."""

    def __init__(
        self,
        pre_list: Sequence[PreintegratedImu],
        gnss_list: Sequence[GnssMeasurement],
        phase: str = RELATIVE,
        pair_set: Sequence[tuple[int, int]] | None = None,
        gyro_meas: Sequence[np.ndarray] | None = None,
        gyro_cov: np.ndarray | None = None,
        global_from: int = 0,
        gravity_mag: float = GRAVITY_MAG,
        sparse: bool = True,
    ):
        n = len(gnss_list)
        if len(pre_list) != n - 1:
            raise LengthMismatch(f"{n} GNSS fixes need {n - 1} preintegrations, got {len(pre_list)}")
        if phase not in (RELATIVE, GLOBAL):
            raise ValueError(f"unknown phase {phase!r}")
        self.n = n
        self.phase = phase
        self.sparse = sparse
        self.gravity_mag = gravity_mag
        K = n - 1
        self.K = K
        self.dR = np.array([p.delta_R for p in pre_list]).reshape(K, 3, 3)
        self.dv = np.array([p.delta_v for p in pre_list]).reshape(K, 3)
        self.dp = np.array([p.delta_p for p in pre_list]).reshape(K, 3)
        self.dt = np.array([p.delta_t for p in pre_list], dtype=float)
        self.bref = np.array([p.gyro_bias_ref for p in pre_list]).reshape(K, 3)
        self.dR_dbg = np.array([p.dR_dbg for p in pre_list]).reshape(K, 3, 3)
        self.dv_dbg = np.array([p.dv_dbg for p in pre_list]).reshape(K, 3, 3)
        self.dp_dbg = np.array([p.dp_dbg for p in pre_list]).reshape(K, 3, 3)
        cov = np.array([p.cov for p in pre_list]).reshape(K, 9, 9)
        self.L_rot = _whiteners(cov[:, :3, :3])
        self.L_vel = _whiteners(cov[:, 3:6, 3:6])
        self.L_pos = _whiteners(cov[:, 6:9, 6:9])
        self.L_grav = _whiteners(cov[:, 3:6, 3:6] / (self.dt * self.dt)[:, None, None])

        if gyro_meas is not None:
            if len(gyro_meas) != n:
                raise LengthMismatch("one gyro measurement per keyframe is required")
            self.gyro = np.array(gyro_meas, dtype=float).reshape(n, 3)
            c = np.eye(3) * 1e-6 if gyro_cov is None else np.asarray(gyro_cov, dtype=float)
            self.L_w = _whiteners(c[None])[0]
        else:
            self.gyro = None

        meas = np.array([m.position for m in gnss_list], dtype=float)
        mcov = np.array([m.cov for m in gnss_list], dtype=float)
        if phase == RELATIVE:
            pairs = consecutive_pairs(n) if pair_set is None else list(pair_set)
            anchors: list[int] = []
        else:
            pairs = [(k, k + 1) for k in range(min(global_from, n - 1))]
            anchors = list(range(global_from, n))
        for j, k in pairs:
            if not (0 <= j < n and 0 <= k < n):
                raise IndexOutOfRange(f"pair ({j}, {k}) outside 0..{n - 1}")
            if j == k:
                raise ValueError("relative residual needs two distinct epochs")
        self.pairs = np.array(pairs, dtype=int).reshape(-1, 2)
        self.anchors = np.array(anchors, dtype=int)
        if len(self.pairs):
            pj, pk = self.pairs[:, 0], self.pairs[:, 1]
            self.d_meas = meas[pj] - meas[pk]
            self.L_d = _whiteners(mcov[pj] + mcov[pk])
        if len(self.anchors):
            self.p_meas = meas[self.anchors]
            self.L_p = _whiteners(mcov[self.anchors])

        self._pattern = None
        self.rows = 12 * K + (3 * n if self.gyro is not None else 0) + 3 * len(self.pairs) + 3 * len(self.anchors)

    # -- evaluation -----------------------------------------------------------

    def __call__(self, values: dict, layout, jacobian: bool = True):
        n, K = self.n, self.K
        R = np.array([values[f"R{k}"] for k in range(n)])
        p = np.array([values[f"p{k}"] for k in range(n)])
        v = np.array([values[f"v{k}"] for k in range(n)])
        bg = np.asarray(values["bg"], dtype=float)
        gdir = np.asarray(values["g"], dtype=float)
        mag = self.gravity_mag
        dt = self.dt[:, None]

        Ri, Rj = R[:-1], R[1:]
        RiT = np.swapaxes(Ri, 1, 2)
        db = bg[None, :] - self.bref
        corr = np.einsum("kab,kb->ka", self.dR_dbg, db)
        dRc = self.dR @ exp_so3_batch(corr)
        E = np.swapaxes(dRc, 1, 2) @ RiT @ Rj
        r_rot = log_so3_batch(E)
        dvc = self.dv + np.einsum("kab,kb->ka", self.dv_dbg, db)
        dpc = self.dp + np.einsum("kab,kb->ka", self.dp_dbg, db)
        g = mag * gdir
        yv = np.einsum("kab,kb->ka", RiT, v[1:] - v[:-1] - g * dt)
        yp = np.einsum("kab,kb->ka", RiT, p[1:] - p[:-1] - v[:-1] * dt - 0.5 * g * dt * dt)
        r_vel = yv - dvc
        r_pos = yp - dpc
        r_grav = (v[1:] - v[:-1]) / dt - np.einsum("kab,kb->ka", Ri, dvc) / dt - g

        def white(L, r):
            return np.einsum("kab,kb->ka", L, r)

        parts = [
            np.stack(
                [white(self.L_rot, r_rot), white(self.L_vel, r_vel), white(self.L_pos, r_pos), white(self.L_grav, r_grav)],
                axis=1,
            ).reshape(-1)
        ]
        if self.gyro is not None:
            w = np.array([values[f"w{k}"] for k in range(n)])
            r_w = w - (self.gyro - bg)
            parts.append((r_w @ self.L_w.T).reshape(-1))
        T = values.get("T")
        if len(self.pairs):
            r_d = p[self.pairs[:, 0]] - p[self.pairs[:, 1]] - self.d_meas
            parts.append(white(self.L_d, r_d).reshape(-1))
        if len(self.anchors):
            TR = np.eye(3) if T is None else T.R
            Tt = np.zeros(3) if T is None else T.t
            r_p = p[self.anchors] @ TR.T + Tt - self.p_meas
            parts.append(white(self.L_p, r_p).reshape(-1))
        r = np.concatenate(parts)
        if not jacobian:
            return r, None

        off = layout.offsets()
        key = (tuple(sorted(off.items())), layout.tangent_dim)
        cached = self._pattern if self._pattern is not None and self._pattern[0] == key else None
        trip_r: list[np.ndarray] = []
        trip_c: list[np.ndarray] = []
        trip_v: list[np.ndarray] = []

        def cols(prefix, idx):
            return np.array([off.get(f"{prefix}{k}", -1) for k in idx], dtype=int)

        def put(row0, L, M, col):
            """Write whitened blocks ``L_k M_k`` at rows ``row0_k`` and columns ``col_k``."""
            col = np.asarray(col, dtype=int)
            if col.ndim == 0:
                if col < 0:
                    return
                keep = slice(None)
            else:
                keep = col >= 0
                if not np.any(keep):
                    return
                if keep.all():
                    keep = slice(None)
            WM = (L @ M) if L.ndim == 3 else np.einsum("ab,kbc->kac", L, M)
            WM = WM[keep]
            trip_v.append(WM.ravel())
            if cached is not None:
                return
            d = M.shape[2]
            c = np.broadcast_to(col, (len(row0),))[keep]
            rr = row0[keep][:, None, None] + np.arange(3)[None, :, None]
            cc = c[:, None, None] + np.arange(d)[None, None, :]
            trip_r.append(np.broadcast_to(rr, WM.shape).ravel())
            trip_c.append(np.broadcast_to(cc, WM.shape).ravel())

        idx = np.arange(K)
        iR, jR = cols("R", idx), cols("R", idx + 1)
        iv, jv = cols("v", idx), cols("v", idx + 1)
        ip, jp = cols("p", idx), cols("p", idx + 1)
        cb, cg = off.get("bg", -1), off.get("g", -1)
        B = s2_tangent_basis(gdir)
        I3 = np.broadcast_to(np.eye(3), (K, 3, 3))

        base = 12 * idx
        # rotation
        Jinv = right_jacobian_inv_so3_batch(r_rot)
        put(base, self.L_rot, -Jinv @ np.swapaxes(Rj, 1, 2) @ Ri, iR)
        put(base, self.L_rot, Jinv, jR)
        put(base, self.L_rot, -Jinv @ np.swapaxes(E, 1, 2) @ right_jacobian_so3_batch(corr) @ self.dR_dbg, cb)
        # velocity
        row = base + 3
        put(row, self.L_vel, hat_batch(yv), iR)
        put(row, self.L_vel, -RiT, iv)
        put(row, self.L_vel, RiT, jv)
        put(row, self.L_vel, -self.dv_dbg, cb)
        put(row, self.L_vel, -mag * self.dt[:, None, None] * (RiT @ B), cg)
        # position
        row = base + 6
        put(row, self.L_pos, hat_batch(yp), iR)
        put(row, self.L_pos, -RiT, ip)
        put(row, self.L_pos, RiT, jp)
        put(row, self.L_pos, -RiT * self.dt[:, None, None], iv)
        put(row, self.L_pos, -self.dp_dbg, cb)
        put(row, self.L_pos, -0.5 * mag * (self.dt * self.dt)[:, None, None] * (RiT @ B), cg)
        # gravity
        row = base + 9
        inv_dt = (1.0 / self.dt)[:, None, None]
        put(row, self.L_grav, -I3 * inv_dt, iv)
        put(row, self.L_grav, I3 * inv_dt, jv)
        put(row, self.L_grav, Ri @ hat_batch(dvc) * inv_dt, iR)
        put(row, self.L_grav, -(Ri @ self.dv_dbg) * inv_dt, cb)
        put(row, self.L_grav, np.broadcast_to(-mag * B, (K, 3, 2)), cg)

        row0 = 12 * K
        if self.gyro is not None:
            kk = np.arange(n)
            rows = row0 + 3 * kk
            In = np.broadcast_to(np.eye(3), (n, 3, 3))
            put(rows, self.L_w, In, cols("w", kk))
            put(rows, self.L_w, In, cb)
            row0 += 3 * n
        if len(self.pairs):
            m = len(self.pairs)
            rows = row0 + 3 * np.arange(m)
            Im = np.broadcast_to(np.eye(3), (m, 3, 3))
            put(rows, self.L_d, Im, cols("p", self.pairs[:, 0]))
            put(rows, self.L_d, -Im, cols("p", self.pairs[:, 1]))
            row0 += 3 * m
        if len(self.anchors):
            m = len(self.anchors)
            rows = row0 + 3 * np.arange(m)
            TR = np.eye(3) if T is None else T.R
            put(rows, self.L_p, np.broadcast_to(TR, (m, 3, 3)), cols("p", self.anchors))
            cT = off.get("T", -1)
            if cT >= 0:
                JT = np.concatenate([np.broadcast_to(TR, (m, 3, 3)), -TR @ hat_batch(p[self.anchors])], axis=2)
                put(rows, self.L_p, JT, cT)
        shape = (self.rows, layout.tangent_dim)
        if not trip_v:
            J = sp.csr_matrix(shape)
            return r, (J if self.sparse else J.toarray())
        if cached is None:
            # the sparsity pattern only depends on the layout, so it is
            # computed once and reused; every entry is written exactly once
            rows = np.concatenate(trip_r)
            cols_ = np.concatenate(trip_c)
            order = np.lexsort((cols_, rows))
            indptr = np.zeros(shape[0] + 1, dtype=np.int64)
            np.cumsum(np.bincount(rows, minlength=shape[0]), out=indptr[1:])
            self._pattern = cached = (key, order, cols_[order], indptr)
        _, order, indices, indptr = cached
        data = np.concatenate(trip_v)[order]
        J = sp.csr_matrix((data, indices, indptr), shape=shape)
        return r, (J if self.sparse else J.toarray())
