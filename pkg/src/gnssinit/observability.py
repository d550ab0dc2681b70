"""Observability of the two-keyframe problem.

Two tools live here:

* the stacked residual Jacobian ``O`` for a window ``{i, j}`` with columns
  ``[R_i, v_i, p_i, R_j, v_j, p_j, b_g, g]`` (23 tangent dims), built block by
  block in closed form, and its numerical rank;
* the Lie-derivative tower of the output map along a constant-rate flow,
  in closed form up to order 6, checked against finite differences in time.

Flow used by the tower (rates held constant)::

    R_i(t) = R_i Exp(w_i t)          w_i: body rate of keyframe i
    R_j(t) = Exp(W_j t) R_j          W_j = R_j w_j: world rate of keyframe j
    p(t)   = p + v t
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Callable, Sequence

import numpy as np

from .errors import UnsupportedOrder
from .manifold import exp_so3, hat, log_so3, right_jacobian_inv_so3, right_jacobian_so3, s2_tangent_basis
from .numdiff import derivative, jacobian
from .residuals import GRAVITY_MAG, KeyframeState

COLUMNS = (("R_i", 3), ("v_i", 3), ("p_i", 3), ("R_j", 3), ("v_j", 3), ("p_j", 3), ("b_g", 3), ("g", 2))
ROWS = ("r_dR", "r_dv", "r_dp", "r_d", "r_p_i", "r_p_j", "r_w", "r_g")
GAUGE = ("R_i", "v_i", "p_i")
MAX_ORDER = 6


@dataclass
class ObservabilityMatrix:
    matrix: np.ndarray
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]

    @property
    def shape(self):
        return self.matrix.shape

    def _row_slices(self):
        out, k = {}, 0
        for lab in self.row_labels:
            out[lab] = slice(k, k + 3)
            k += 3
        return out

    def _col_slices(self):
        dims = dict(COLUMNS)
        out, k = {}, 0
        for lab in self.col_labels:
            out[lab] = slice(k, k + dims[lab])
            k += dims[lab]
        return out

    def block(self, row: str, col: str) -> np.ndarray:
        return self.matrix[self._row_slices()[row], self._col_slices()[col]]

    def without_rows(self, labels: Sequence[str]) -> "ObservabilityMatrix":
        rs = self._row_slices()
        keep = [lab for lab in self.row_labels if lab not in labels]
        M = np.vstack([self.matrix[rs[lab]] for lab in keep])
        return ObservabilityMatrix(M, tuple(keep), self.col_labels)

    def without_cols(self, labels: Sequence[str]) -> "ObservabilityMatrix":
        cs = self._col_slices()
        keep = [lab for lab in self.col_labels if lab not in labels]
        M = np.hstack([self.matrix[:, cs[lab]] for lab in keep])
        return ObservabilityMatrix(M, self.row_labels, tuple(keep))

    def gauge_fixed(self) -> "ObservabilityMatrix":
        return self.without_cols(GAUGE)

    def rate_marginalized(self) -> "ObservabilityMatrix":
        """Drop the angular-velocity rows.

        Each keyframe carries its own rate ``w_k`` which appears only in
        ``r_w``; eliminating that free variable removes the rows entirely, so
        they say nothing about ``b_g``.
        """
        return self.without_rows(("r_w",))


def build_observability_matrix(
    state_i: KeyframeState,
    state_j: KeyframeState,
    bias,
    gravity_dir,
    dt: float,
    gauge_fixed: bool = False,
    delta_R: np.ndarray | None = None,
    gravity_mag: float = GRAVITY_MAG,
) -> ObservabilityMatrix:
    """Stacked Jacobian with the blocks of the two-keyframe window.

    Only the blocks of the closed-form layout are populated; in particular the
    bias columns of the preintegration rows and the ``R_i`` column of the
    gravity row are zero. ``delta_R`` (the preintegrated rotation) defaults to
    ``R_i^T R_j``, which puts the rotation error at zero.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    Ri, Rj = state_i.R, state_j.R
    vi, vj, pi, pj = state_i.v, state_j.v, state_i.p, state_j.p
    g = gravity_mag * np.asarray(gravity_dir, dtype=float)
    B = s2_tangent_basis(gravity_dir)
    dR = Ri.T @ Rj if delta_R is None else delta_R
    Jinv = right_jacobian_inv_so3(log_so3(dR.T @ Ri.T @ Rj))
    Z = np.zeros((3, 3))
    Z2 = np.zeros((3, 2))
    I = np.eye(3)
    rows = [
        [-Jinv @ Rj.T @ Ri, Z, Z, Jinv, Z, Z, Z, Z2],
        [hat(Ri.T @ (vj - vi - g * dt)), -Ri.T, Z, Z, Ri.T, Z, Z, -gravity_mag * dt * Ri.T @ B],
        [
            hat(Ri.T @ (pj - pi - vi * dt - 0.5 * g * dt * dt)),
            -Ri.T * dt,
            -Ri.T,
            Z,
            Z,
            Ri.T,
            Z,
            -0.5 * gravity_mag * dt * dt * Ri.T @ B,
        ],
        [Z, Z, -I, Z, Z, I, Z, Z2],
        [Z, Z, I, Z, Z, Z, Z, Z2],
        [Z, Z, Z, Z, Z, I, Z, Z2],
        [Z, Z, Z, Z, Z, Z, I, Z2],
        [Z, -I / dt, Z, Z, I / dt, Z, Z, -gravity_mag * B],
    ]
    O = ObservabilityMatrix(np.block(rows), ROWS, tuple(c for c, _ in COLUMNS))
    return O.gauge_fixed() if gauge_fixed else O


def random_window(rng: np.random.Generator, dt: float = 0.2):
    """Generic two-keyframe window: ``(state_i, state_j, bias, gravity_dir, dt)``."""

    def state():
        return KeyframeState(
            exp_so3(rng.normal(size=3)), 3.0 * rng.normal(size=3), 0.5 * rng.normal(size=3), rng.normal(size=3)
        )

    g = rng.normal(size=3)
    return state(), state(), 0.01 * rng.normal(size=3), g / np.linalg.norm(g), dt


def singular_values(M) -> np.ndarray:
    M = M.matrix if isinstance(M, ObservabilityMatrix) else np.asarray(M, dtype=float)
    return np.linalg.svd(M, compute_uv=False)


def numerical_rank(M, rel_tol: float = 1e-9) -> int:
    s = singular_values(M)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def nullspace(M, rel_tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (columns) of the numerical nullspace."""
    A = M.matrix if isinstance(M, ObservabilityMatrix) else np.asarray(M, dtype=float)
    _, s, Vt = np.linalg.svd(A)
    r = numerical_rank(A, rel_tol)
    return Vt[r:].T


# -- Lie-derivative tower ----------------------------------------------------

TOWER_ROWS = ("rotation", "rate", "velocity", "position", "distance", "gnss_relative", "gnss_absolute")
_ROW_DIMS = {"rotation": 9, "rate": 3, "velocity": 3, "position": 3, "distance": 1, "gnss_relative": 3, "gnss_absolute": 3}


@dataclass
class LieDerivativeStack:
    order: int
    rows: dict[str, np.ndarray]

    def vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(self.rows[name]) for name in TOWER_ROWS])


@dataclass
class TowerPoint:
    """Inputs of the tower: two keyframes, measured-rate bias, gravity, window."""

    state_i: KeyframeState
    state_j: KeyframeState
    bias: np.ndarray
    gravity: np.ndarray
    dt: float
    gnss_position: np.ndarray | None = None
    gnss_velocity: np.ndarray | None = None

    def _gnss(self):
        p = self.state_j.p if self.gnss_position is None else self.gnss_position
        v = np.zeros(3) if self.gnss_velocity is None else self.gnss_velocity
        return np.asarray(p, dtype=float), np.asarray(v, dtype=float)


def random_tower_point(rng: np.random.Generator, dt: float = 0.2, gravity_mag: float = GRAVITY_MAG) -> TowerPoint:
    """Generic point with nonzero rates and distinct keyframes."""
    si, sj, bias, g, dt = random_window(rng, dt)
    return TowerPoint(si, sj, bias, gravity_mag * g, dt)


def _distance_derivatives(a, b, order):
    """Derivatives of ``sqrt(|a + b t|^2)`` at ``t = 0`` up to ``order``."""
    q = [a @ a, 2.0 * a @ b, 2.0 * b @ b] + [0.0] * max(0, order - 2)
    d = [np.sqrt(q[0])]
    for k in range(1, order + 1):
        s = sum(comb(k, m) * d[m] * d[k - m] for m in range(1, k))
        d.append((q[k] - s) / (2.0 * d[0]))
    return d


def lie_derivative_stack(order: int, point: TowerPoint) -> LieDerivativeStack:
    if not 0 <= order <= MAX_ORDER:
        raise UnsupportedOrder(f"closed forms exist for orders 0..{MAX_ORDER}, got {order}")
    si, sj = point.state_i, point.state_j
    Ri, Rj = si.R, sj.R
    Wi = hat(si.omega)
    Wj = hat(Rj @ sj.omega)
    g = np.asarray(point.gravity, dtype=float)
    dt = point.dt
    u0 = sj.v - si.v - g * dt
    p_gps, v_gps = point._gnss()
    neg = -Wi
    k = order

    rot = sum(
        (-1) ** m * comb(k, m) * np.linalg.matrix_power(Wi, m) @ Ri.T @ np.linalg.matrix_power(Wj, k - m) @ Rj
        for m in range(k + 1)
    )
    if k == 0:
        rate = si.omega + point.bias
        vel = Ri.T @ u0
        pos = Ri.T @ (sj.p - si.p - si.v * dt - 0.5 * g * dt * dt)
        rel = (sj.p - si.p) - (sj.p - si.p)
        ab = sj.p - p_gps
    else:
        P = np.linalg.matrix_power(neg, k - 1)
        rate = np.zeros(3)
        vel = -P @ Ri.T @ g
        pos = P @ Ri.T @ u0
        rel = np.zeros(3)
        ab = sj.v - v_gps if k == 1 else np.zeros(3)
    dist = _distance_derivatives(sj.p - si.p, sj.v - si.v, k)[k]
    rows = dict(rotation=rot, rate=rate, velocity=vel, position=pos, distance=np.array([dist]), gnss_relative=rel, gnss_absolute=ab)
    return LieDerivativeStack(k, rows)


def output_along_flow(point: TowerPoint) -> Callable[[float], np.ndarray]:
    """``h(x(t))`` as a flat vector, in the layout of :meth:`LieDerivativeStack.vector`."""
    si, sj = point.state_i, point.state_j
    Ri, Rj = si.R, sj.R
    wi = si.omega
    Wj_vec = Rj @ sj.omega
    g = np.asarray(point.gravity, dtype=float)
    dt = point.dt
    u0 = sj.v - si.v - g * dt
    h4 = Ri.T @ (sj.p - si.p - si.v * dt - 0.5 * g * dt * dt)
    p_gps, v_gps = point._gnss()
    a = sj.p - si.p
    b = sj.v - si.v

    def h(t: float) -> np.ndarray:
        # t * Jr(w t) = integral_0^t Exp(-w s) ds
        integ = t * right_jacobian_so3(wi * t)
        rows = dict(
            rotation=exp_so3(-wi * t) @ Ri.T @ exp_so3(Wj_vec * t) @ Rj,
            rate=si.omega + point.bias,
            velocity=Ri.T @ u0 - integ @ Ri.T @ g,
            position=h4 + integ @ Ri.T @ u0,
            distance=np.array([np.linalg.norm(a + b * t)]),
            gnss_relative=(a + b * t) - (a + b * t),
            gnss_absolute=sj.p + sj.v * t - (p_gps + v_gps * t),
        )
        return LieDerivativeStack(-1, rows).vector()

    return h


def verify_lie_stack_numerically(order: int, point: TowerPoint, h: float | None = None, rows: Sequence[str] | None = None) -> float:
    """Max relative deviation between closed-form rows and time derivatives."""
    closure = output_along_flow(point)
    closed = lie_derivative_stack(order, point)
    if order == 0:
        numeric = closure(0.0)
    else:
        step = h if h is not None else 1e-2
        numeric = derivative(closure, order, step, points=2 * ((order + 1) // 2) + 7)
    ref = closed.vector()
    if rows is not None:
        mask = _row_mask(rows)
        ref, numeric = ref[mask], numeric[mask]
    scale = max(1.0, float(np.max(np.abs(ref))))
    return float(np.max(np.abs(ref - numeric)) / scale)


def _row_mask(rows: Sequence[str]) -> np.ndarray:
    mask = []
    for name in TOWER_ROWS:
        mask += [name in rows] * _ROW_DIMS[name]
    return np.array(mask)


def _perturbed(point: TowerPoint, theta: np.ndarray) -> TowerPoint:
    """Apply the reduced 7-parameter perturbation.

    ``theta = [dphi_j (3), db (3), ds (1)]``: rotate keyframe j on the right,
    shift the bias while the measured rates stay put (so the true rates move by
    ``-db``), and stretch the baseline ``p_j - p_i`` along itself.
    """
    si, sj = point.state_i, point.state_j
    dphi, db, ds = theta[:3], theta[3:6], theta[6]
    base = sj.p - si.p
    u = base / np.linalg.norm(base)
    new_i = KeyframeState(si.R, si.p, si.omega - db, si.v)
    new_j = KeyframeState(sj.R @ exp_so3(dphi), sj.p + ds * u, sj.omega - db, sj.v)
    return TowerPoint(new_i, new_j, point.bias + db, point.gravity, point.dt, point.gnss_position, point.gnss_velocity)


def dG_matrix(point: TowerPoint, max_order: int = MAX_ORDER, h: float = 1e-3) -> np.ndarray:
    """Gradient of the stacked tower (orders ``0..max_order``) w.r.t. the reduced set."""

    def stacked(theta):
        p = _perturbed(point, theta)
        return np.concatenate([lie_derivative_stack(k, p).vector() for k in range(max_order + 1)])

    return jacobian(stacked, 7, h=h, points=5)


def rank_dG(point: TowerPoint, max_order: int = MAX_ORDER, rel_tol: float = 1e-9, duplicate_rows: bool = False) -> int:
    G = dG_matrix(point, max_order)
    if duplicate_rows:
        G = np.vstack([G, G])
    return numerical_rank(G, rel_tol)


# -- symbolic binomial pattern -----------------------------------------------


def symbolic_rotation_coefficients(order: int) -> list[int]:
    """Signed coefficients of ``W_i^m R_i^T W_j^(order-m) R_j`` in the ``order``-th derivative.

    Obtained by applying the derivation ``D(R_i^T) = -W_i R_i^T``,
    ``D(R_j) = W_j R_j``, ``D(W) = 0`` to ``R_i^T R_j`` with non-commuting
    symbols and reading off the coefficients.
    """
    import sympy as sp

    Wi, Wj, RiT, Rj = sp.symbols("W_i W_j RiT R_j", commutative=False)
    rules = {RiT: -Wi * RiT, Rj: Wj * Rj}

    def D(expr):
        expr = sp.expand(expr)
        if expr.is_Add:
            return sp.Add(*[D(a) for a in expr.args])
        coeff, factors = expr.args_cnc()
        seq = []
        for f in factors:
            if f.is_Pow:
                seq += [f.base] * int(f.exp)
            else:
                seq.append(f)
        total = 0
        for pos, f in enumerate(seq):
            if f in rules:
                total += sp.Mul(*coeff) * sp.Mul(*(seq[:pos] + [rules[f]] + seq[pos + 1 :]))
        return sp.expand(total)

    expr = RiT * Rj
    for _ in range(order):
        expr = D(expr)
    out = []
    for m in range(order + 1):
        mono = Wi**m * RiT * Wj ** (order - m) * Rj
        out.append(int(expr.coeff(mono)) if expr != 0 else 0)
    return out
