"""Levenberg-Marquardt on a product of manifolds.

The solver works on a flat ``values`` dict (variable id -> value) and a
``provider`` callable that returns residual blocks for any such dict. Each
variable's kind decides its retraction:

    rotation   R <- R @ exp_so3(d)
    euclidean  x <- x + d
    s2         g <- s2_boxplus(g, d)
    pose       T <- T.compose(exp_se3(d))
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import splu

from .errors import NonFiniteCost, SingularNormalEquations
from .manifold import Pose, exp_se3, exp_so3, exp_so3_batch, s2_boxplus
from .residuals import InitState, ResidualBlock, state_to_values, values_to_state

TANGENT_DIM = {"rotation": 3, "s2": 2, "pose": 6}


@dataclass(frozen=True)
class Variable:
    id: str
    kind: str
    dim: int
    fixed: bool = False

    @property
    def ambient_dim(self) -> int:
        return {"rotation": 9, "s2": 3, "pose": 12}.get(self.kind, self.dim)


@dataclass(frozen=True)
class ParameterLayout:
    variables: tuple[Variable, ...]

    def __post_init__(self):
        for var in self.variables:
            if var.kind in TANGENT_DIM and var.dim != TANGENT_DIM[var.kind]:
                raise ValueError(f"{var.id}: {var.kind} has tangent dim {TANGENT_DIM[var.kind]}")

    @property
    def free(self) -> list[Variable]:
        return [v for v in self.variables if not v.fixed]

    @property
    def tangent_dim(self) -> int:
        return sum(v.dim for v in self.free)

    def offsets(self) -> dict[str, int]:
        out, k = {}, 0
        for var in self.free:
            out[var.id] = k
            k += var.dim
        return out

    def with_fixed(self, ids: Sequence[str]) -> "ParameterLayout":
        ids = set(ids)
        return ParameterLayout(
            tuple(replace(v, fixed=True) if v.id in ids else v for v in self.variables)
        )


def euclidean(id: str, dim: int, fixed: bool = False) -> Variable:
    return Variable(id, "euclidean", dim, fixed)


def layout_for(state: InitState, extrinsic: bool = False, include_omega: bool = True) -> ParameterLayout:
    """Layout of the full state. Without omega and extrinsic, N = 2 gives 23 dof."""
    vars_: list[Variable] = []
    for k in range(len(state)):
        vars_.append(Variable(f"R{k}", "rotation", 3))
        vars_.append(euclidean(f"v{k}", 3))
        vars_.append(euclidean(f"p{k}", 3))
        if include_omega:
            vars_.append(euclidean(f"w{k}", 3))
    vars_.append(euclidean("bg", 3))
    vars_.append(Variable("g", "s2", 2))
    if extrinsic:
        vars_.append(Variable("T", "pose", 6))
    return ParameterLayout(tuple(vars_))


def gauge_fix(layout: ParameterLayout, first_keyframe: int = 0, velocity: bool = True) -> ParameterLayout:
    """Hold rotation, position (and velocity) of one keyframe constant."""
    k = first_keyframe
    ids = [f"R{k}", f"p{k}"] + ([f"v{k}"] if velocity else [])
    known = {v.id for v in layout.variables}
    missing = [i for i in ids if i not in known]
    if missing:
        raise KeyError(f"layout has no variables {missing}")
    return layout.with_fixed(ids)


def retract(kind: str, x, d: np.ndarray):
    if kind == "rotation":
        return x @ exp_so3(d)
    if kind == "euclidean":
        return x + d
    if kind == "s2":
        return s2_boxplus(x, d)
    if kind == "pose":
        return x.compose(exp_se3(d))
    raise ValueError(f"unknown variable kind {kind!r}")


@dataclass
class SolverOptions:
    max_iterations: int = 100
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 10.0
    max_damping: float = 1e16
    rel_cost_tol: float = 1e-10
    grad_tol: float = 1e-8
    scaling: str = "diagonal"
    # second-order correction of each trial step; helps in narrow curved
    # valleys where stiff inertial terms bend the weakly constrained modes
    geodesic_acceleration: bool = True
    acceleration_step: float = 0.1
    acceleration_ratio: float = 0.75


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    termination: str
    final_gradient_norm: float
    cost_history: list[float] = field(default_factory=list)
    damping_history: list[float] = field(default_factory=list)


@lru_cache(maxsize=4096)
def _whitener_from_bytes(raw: bytes, n: int) -> np.ndarray:
    W = np.frombuffer(raw, dtype=float).reshape(n, n)
    L = np.linalg.cholesky(W).T
    L.flags.writeable = False
    return L


def _whitener(W: np.ndarray) -> np.ndarray:
    """Upper factor ``L`` with ``L^T L = W``."""
    W = np.ascontiguousarray(W, dtype=float)
    return _whitener_from_bytes(W.tobytes(), W.shape[0])


def whitened_system(blocks: Sequence[ResidualBlock], layout: ParameterLayout, jacobian: bool = True):
    """Whitened residual ``r`` and Jacobian ``J`` with ``r^T r`` the cost.

    Each block is multiplied by the upper Cholesky factor of its weight.
    With ``jacobian=False`` only ``r`` is formed and ``J`` is None.
    """
    off = layout.offsets()
    n = layout.tangent_dim
    rows = sum(len(b.value) for b in blocks)
    J = np.zeros((rows, n)) if jacobian else None
    r = np.empty(rows)
    k = 0
    for b in blocks:
        m = len(b.value)
        L = _whitener(b.weight)
        r[k : k + m] = L @ b.value
        if jacobian:
            for vid, Jv in b.jacobians.items():
                o = off.get(vid)
                if o is not None:
                    J[k : k + m, o : o + Jv.shape[1]] = L @ Jv
        k += m
    return r, J


def linearize(blocks: Sequence[ResidualBlock], layout: ParameterLayout):
    """Return ``(H, g, cost)`` with ``H = J^T W J`` and ``g = J^T W r``."""
    r, J = whitened_system(blocks, layout)
    return J.T @ J, J.T @ r, float(r @ r)


def _step(values: dict, layout: ParameterLayout, delta: np.ndarray) -> dict:
    out = dict(values)
    off = layout.offsets()
    rot = [var for var in layout.free if var.kind == "rotation"]
    if rot:
        d = np.array([delta[off[var.id] : off[var.id] + 3] for var in rot])
        incs = exp_so3_batch(d)
        for var, inc in zip(rot, incs):
            out[var.id] = values[var.id] @ inc
    for var in layout.free:
        if var.kind != "rotation":
            o = off[var.id]
            out[var.id] = retract(var.kind, values[var.id], delta[o : o + var.dim])
    return out


def solve(
    provider: Callable[[dict], Sequence[ResidualBlock]],
    layout: ParameterLayout,
    initial: dict,
    options: SolverOptions | None = None,
) -> tuple[dict, SolveReport]:
    """Minimize the cost of the blocks returned by ``provider``."""

    def system(values, jacobian=True):
        return whitened_system(provider(values), layout, jacobian)

    return solve_system(system, layout, initial, options)


def solve_system(
    system: Callable[..., tuple[np.ndarray, np.ndarray | None]],
    layout: ParameterLayout,
    initial: dict,
    options: SolverOptions | None = None,
) -> tuple[dict, SolveReport]:
    """LM on a whitened system: ``system(values, jacobian)`` returns ``(r, J)``.

    ``J`` has one column per free tangent coordinate of ``layout`` and
    ``r @ r`` is the cost. ``J`` may be a scipy sparse matrix, in which case
    the damped normal equations are solved by sparse LU.
    """
    opts = options or SolverOptions()
    if not layout.free:
        raise ValueError("layout has no free variables")
    values = dict(initial)
    r, J = system(values, True)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise NonFiniteCost("initial cost is not finite")
    initial_cost = cost
    history = [cost]
    lambdas: list[float] = []
    lam = opts.initial_damping
    termination = "max_iterations"
    converged = False
    it = 0
    H, grad = J.T @ J, J.T @ r
    while it < opts.max_iterations:
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if gnorm < opts.grad_tol or cost == 0.0:
            termination, converged = "gradient", True
            break
        it += 1
        if opts.scaling == "identity":
            D = np.ones(len(grad))
        else:
            diag = H.diagonal()
            D = np.maximum(diag, 1e-9 * max(float(np.max(diag)), 1e-300))
        while True:
            try:
                factor = _factor(H, lam * D)
                delta = -factor(grad)
                ok = bool(np.all(np.isfinite(delta)))
            except (LinAlgError, RuntimeError):
                ok = False
            if ok:
                if opts.geodesic_acceleration:
                    delta = delta + 0.5 * _acceleration(system, layout, values, r, J, delta, factor, D, opts)
                cand = _step(values, layout, delta)
                r_new, J_new = system(cand, True)
                c_new = float(r_new @ r_new)
                if np.isfinite(c_new) and c_new <= cost:
                    break
            lam = max(lam, 1e-12) * opts.damping_up
            if lam > opts.max_damping:
                raise SingularNormalEquations(f"damping exceeded {opts.max_damping:g}")
        rel = (cost - c_new) / max(cost, 1e-300)
        values, r, J, cost = cand, r_new, J_new, c_new
        H, grad = J.T @ J, J.T @ r
        history.append(cost)
        lambdas.append(lam)
        lam /= opts.damping_down
        if rel < opts.rel_cost_tol:
            termination, converged = "relative_cost", True
            break
    final_g = float(np.max(np.abs(grad))) if grad.size else 0.0
    if not converged and final_g < opts.grad_tol:
        termination, converged = "gradient", True
    report = SolveReport(it, initial_cost, cost, converged, termination, final_g, history, lambdas)
    return values, report


def _factor(H, damping: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Solver for ``(H + diag(damping)) x = b``; sparse LU when ``H`` is sparse."""
    if sparse.issparse(H):
        lu = splu(sparse.csc_matrix(H + sparse.diags(damping)))
        return lu.solve
    c = cho_factor(H + np.diag(damping))
    return lambda b: cho_solve(c, b)


def _acceleration(system, layout, values, r, J, delta, factor, D, opts) -> np.ndarray:
    """Second-order correction along ``delta`` (geodesic acceleration).

    The directional second derivative of the residual is taken by a finite
    difference along ``delta``; the correction is dropped when it is not
    small compared to the step itself.
    """
    h = opts.acceleration_step
    r_h, _ = system(_step(values, layout, h * delta), False)
    rpp = (2.0 / h) * ((r_h - r) / h - J @ delta)
    if not np.all(np.isfinite(rpp)):
        return np.zeros_like(delta)
    acc = -factor(J.T @ rpp)
    scale = np.sqrt(D)
    if 0.5 * np.linalg.norm(scale * acc) > opts.acceleration_ratio * np.linalg.norm(scale * delta):
        return np.zeros_like(delta)
    return acc


def solve_state(
    provider: Callable[[InitState, Pose | None], Sequence[ResidualBlock]] | None,
    layout: ParameterLayout,
    state: InitState,
    extrinsic: Pose | None = None,
    options: SolverOptions | None = None,
    system: Callable | None = None,
) -> tuple[InitState, Pose | None, SolveReport]:
    """:func:`solve` for a provider written against :class:`InitState`.

    A whitened ``system(values, jacobian)`` (such as a
    :class:`stacked.StackedCost` bound to ``layout``) may be passed instead.
    """
    init = state_to_values(state, extrinsic)
    if system is not None:
        values, report = solve_system(lambda v, jac=True: system(v, layout, jac), layout, init, options)
    else:

        def flat(values):
            s, T = values_to_state(values, state)
            return provider(s, T)

        values, report = solve(flat, layout, init, options)
    out_state, out_T = values_to_state(values, state)
    return out_state, out_T, report
