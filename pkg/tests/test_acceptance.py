"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured numbers and
the pinned tolerance; the lines are repeated in the terminal summary.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES
from support import audit_block, monte_carlo_preintegration, random_imu_window
from test_residuals import BUILDERS, _window

from gnssinit.manifold import (
    exp_se3,
    exp_so3,
    log_se3,
    log_so3,
    right_jacobian_inv_so3,
    s2_boxminus,
    s2_boxplus,
)
from gnssinit.observability import (
    build_observability_matrix,
    numerical_rank,
    random_tower_point,
    random_window,
    rank_dG,
    symbolic_rotation_coefficients,
    verify_lie_stack_numerically,
)
from gnssinit.pipeline import PipelineConfig, associate, run_incremental, run_naive, run_two_stage
from gnssinit.preintegration import ImuNoiseModel
from gnssinit.simulation import SensorConfig, TrajectoryModel, ate_rmse, generate, urban_like
from gnssinit.trigger import TriggerTrace, extrinsic_hessian, update_trigger

BIAS = np.array([0.01, -0.005, 0.008])
# ATE differences below this come from where two runs that reach the same
# optimum stop: a relative cost tolerance of 1e-10 leaves position slack of
# about sqrt(1e-10) * 0.2 m = 2e-6 m
ATE_TIE = 1e-5
# an interior sweep minimum must beat both endpoints by this relative margin
SWEEP_MARGIN = 0.01


def _report(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- manifold -----------------------------------------------------------------------


def test_manifold_suite():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    cases = 1000
    so3 = se3 = s2 = jr = 0.0
    h = 1e-6
    for _ in range(cases):
        axis = rng.normal(size=3)
        phi = axis / np.linalg.norm(axis) * rng.uniform(0.0, np.pi - 1e-3)
        so3 = max(so3, np.linalg.norm(log_so3(exp_so3(phi)) - phi))

        xi = np.concatenate([rng.normal(size=3) * 5.0, phi])
        se3 = max(se3, np.linalg.norm(log_se3(exp_se3(xi)) - xi))

        g = rng.normal(size=3)
        g /= np.linalg.norm(g)
        d = rng.normal(size=2)
        d *= rng.uniform(0.0, 3.0) / np.linalg.norm(d)
        s2 = max(s2, np.linalg.norm(s2_boxminus(s2_boxplus(g, d), g) - d))

        # d Log(Exp(phi) Exp(delta)) / d delta at 0 is J_r^-1(phi)
        psi = phi * min(1.0, 2.5 / max(np.linalg.norm(phi), 1e-12))
        R = exp_so3(psi)
        num = np.zeros((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            num[:, i] = (log_so3(R @ exp_so3(e)) - log_so3(R @ exp_so3(-e))) / (2 * h)
        ana = right_jacobian_inv_so3(psi)
        jr = max(jr, np.linalg.norm(num - ana) / np.linalg.norm(ana))
    elapsed = time.perf_counter() - t0
    ok = max(so3, se3, s2) <= 1e-9 and jr <= 1e-6 and elapsed < 5.0
    _report(
        "manifold suite",
        ok,
        f"{cases} cases, roundtrip max err SO3 {so3:.1e} SE3 {se3:.1e} S2 {s2:.1e} (tol 1e-9), "
        f"J_r^-1 max rel err {jr:.1e} (tol 1e-6), {elapsed:.2f} s (limit 5 s)",
    )


# -- preintegration -------------------------------------------------------------------


def test_preintegration_monte_carlo():
    rng = np.random.default_rng(4)
    samples, t_end = random_imu_window(rng, 20)
    noise = ImuNoiseModel.isotropic(1e-2, 1e-1)
    t0 = time.perf_counter()
    predicted, sample = monte_carlo_preintegration(samples, t_end, noise, runs=10_000, seed=1)
    elapsed = time.perf_counter() - t0
    rel = np.abs(np.diag(sample) - np.diag(predicted)) / np.diag(predicted)
    ok = rel.max() <= 0.15 and elapsed < 60.0
    _report(
        "preintegration Monte-Carlo",
        ok,
        f"10^4 runs, max diagonal rel dev {rel.max():.3f} (tol 0.15), {elapsed:.2f} s (limit 60 s)",
    )


# -- residual Jacobians ---------------------------------------------------------------------


def test_jacobian_audit():
    worst = {}
    for name, build in sorted(BUILDERS.items()):
        w = 0.0
        for seed in range(50):
            rng, pre, state, meas, T = _window(seed)
            ratio, _ = audit_block(build(pre, meas, rng), state, T, h=1e-5, abs_tol=1e-5, rel_tol=1e-4)
            w = max(w, ratio)
        worst[name] = w
    ok = all(v <= 1.0 for v in worst.values())
    detail = ", ".join(f"{k} {v:.2f}" for k, v in worst.items())
    _report(
        "Jacobian audit",
        ok,
        f"{len(worst)} residuals x 50 states, 5-point stencil, worst error / max(1e-5, 1e-4 |num|): {detail} (pass <= 1)",
    )


# -- observability ------------------------------------------------------------------------


def test_observability_ranks():
    rng = np.random.default_rng(3)
    reduced, with_rates, rd_adds = [], [], 0
    for _ in range(100):
        O = build_observability_matrix(*random_window(rng)).gauge_fixed()
        R = O.rate_marginalized()
        with_rates.append(numerical_rank(O.matrix, 1e-9))
        reduced.append(numerical_rank(R.matrix, 1e-9))
        if numerical_rank(R.matrix, 1e-9) > numerical_rank(R.without_rows(("r_d",)).matrix, 1e-9):
            rd_adds += 1
        if numerical_rank(O.matrix, 1e-9) > numerical_rank(O.without_rows(("r_d",)).matrix, 1e-9):
            rd_adds += 1
    hits = reduced.count(11)
    ok = hits >= 99 and rd_adds == 0
    _report(
        "observability ranks",
        ok,
        f"first pose fixed, rate rows eliminated: rank 11 at {hits}/100 states (need >= 99, rel_tol 1e-9); "
        f"with r_w rows kept the rank is {sorted(set(with_rates))}; r_d rows raised the rank in {rd_adds} cases (need 0)",
    )


def test_lie_derivative_tower():
    rng = np.random.default_rng(7)
    worst = {1: 0.0, 2: 0.0, 3: 0.0}
    points = [random_tower_point(rng) for _ in range(20)]
    for point in points:
        for k in worst:
            worst[k] = max(worst[k], verify_lie_stack_numerically(k, point))
    expected = {4: [1, 4, 6, 4, 1], 5: [1, 5, 10, 10, 5, 1], 6: [1, 6, 15, 20, 15, 6, 1]}
    coeffs = {k: symbolic_rotation_coefficients(k) for k in expected}
    binom_ok = all([abs(c) for c in coeffs[k]] == expected[k] for k in expected)
    ranks = [rank_dG(p) for p in points]
    ok = max(worst.values()) <= 1e-4 and binom_ok and set(ranks) == {7}
    _report(
        "Lie-derivative tower",
        ok,
        "orders 1..3 max rel dev "
        + ", ".join(f"{worst[k]:.1e}" for k in worst)
        + f" (tol 1e-4, 20 states); symbolic coefficients k=4..6 {[coeffs[k] for k in expected]}; "
        f"rank(dG) {sorted(set(ranks))} at 20 generic states (need 7)",
    )


# -- trigger ---------------------------------------------------------------------------


def _sim(model, seed, sigma=0.2):
    cfg = SensorConfig(
        gyro_noise_sigma=1e-3,
        accel_noise_sigma=1e-2,
        gnss_noise_sigma=sigma,
        gyro_bias_true=BIAS,
        rng_seed=seed,
    )
    sim = generate(model, cfg)
    i0 = sim.keyframe_index[0]
    pose = (sim.truth.R[i0], sim.truth.p[i0], sim.truth.v[i0])
    return sim, cfg.noise_model(1e-6), PipelineConfig(initial_pose=pose)


def _min_inverse_condition(sim):
    """Smallest sigma_min / sigma_max of the extrinsic Hessian over the run,
    linearized at the noise-free keyframe positions."""
    state = sim.truth_state()
    trace = TriggerTrace()
    for m in range(2, len(sim.gnss) + 1):
        update_trigger(trace, extrinsic_hessian(sim.gnss[:m], state), m)
    return min(r.singular_values[-1] / r.singular_values[0] for r in trace.records[3:])


def test_trigger_behavior():
    t0 = time.perf_counter()
    wins, ties, rows = 0, 0, []
    for seed in range(10):
        sim, noise, cfg = _sim(TrajectoryModel("figure_eight", {}, 6.0), seed)
        truth = sim.truth_positions_gnss_frame()
        staged = run_two_stage(sim.imu, sim.gnss, noise, cfg)
        naive = run_naive(sim.imu, sim.gnss, noise, cfg)
        a, b = ate_rmse(staged.positions_world(), truth), ate_rmse(naive.positions_world(), truth)
        k = staged.trace.k_star
        good = k is not None and a <= b + ATE_TIE
        wins += good
        ties += abs(a - b) <= ATE_TIE
        rows.append(f"s{seed}:k*={k},{a:.4f}/{b:.4f}")
    rich_sim, _, _ = _sim(TrajectoryModel("figure_eight", {}, 6.0), 0)
    line_sim, _, _ = _sim(TrajectoryModel("straight_line", {"v_body": [3.0, 0.0, 0.0]}, 6.0), 0)
    rich, straight = _min_inverse_condition(rich_sim), _min_inverse_condition(line_sim)
    elapsed = time.perf_counter() - t0
    ok = wins >= 8 and straight * 1e3 <= rich and elapsed < 120.0
    _report(
        "trigger behavior",
        ok,
        f"figure-eight k* finite and ATE two-stage <= naive (+{ATE_TIE:g} m) in {wins}/10 seeds (need >= 8), "
        f"{ties} of them ties [{' '.join(rows)}]; "
        f"min sigma_min/sigma_max straight {straight:.1e} vs figure-eight {rich:.1e} "
        f"(ratio {rich / max(straight, 1e-300):.1e}, need >= 1e3); {elapsed:.1f} s (limit 120 s)",
    )


# -- activation sweep ----------------------------------------------------------------------


SWEEP_SEED = 0
SWEEP_INDICES = list(range(0, 61, 10))


def test_sweep_shape():
    sim, noise, cfg = _sim(urban_like(), SWEEP_SEED)
    truth = sim.truth_positions_gnss_frame()
    data = associate(sim.imu, sim.gnss, noise)
    ates = []
    for idx in SWEEP_INDICES:
        res = run_incremental(data, PipelineConfig(**{**cfg.__dict__, "activation_index": idx}))
        ates.append(ate_rmse(res.positions_world(), truth))
    ates = np.array(ates)
    best = int(np.argmin(ates))
    interior = ates[1:-1].min()
    ok = interior < (1.0 - SWEEP_MARGIN) * min(ates[0], ates[-1])
    curve = ", ".join(f"{i}:{a:.4f}" for i, a in zip(SWEEP_INDICES, ates))
    _report(
        "sweep shape",
        ok,
        f"urban-like seed {SWEEP_SEED}, {len(sim.gnss)} fixes, ATE by activation index [{curve}]; "
        f"argmin index {SWEEP_INDICES[best]}; need interior min below both endpoints by {SWEEP_MARGIN:.0%}",
    )


# -- optional dataset replay ----------------------------------------------------------------


EUROC = os.environ.get("GNSSINIT_EUROC_MH03")


@pytest.mark.skipif(not EUROC, reason="set GNSSINIT_EUROC_MH03 to the MH_03_medium mav0 directory")
def test_euroc_mh03_replay():
    from gnssinit.cli import build_parser, load_inputs, resolve

    root = Path(EUROC)
    args = build_parser().parse_args(
        [
            "--mode", "init",
            "--imu", str(root / "imu0" / "data.csv"),
            "--gt", str(root / "state_groundtruth_estimate0" / "data.csv"),
            "--sigma-gnss", "0.2",
            "--known-initial-pose",
        ]
    )
    cfg = resolve(args)
    inp = load_inputs(cfg)
    gnss = inp.gnss[:100]
    data = associate(inp.imu, gnss, inp.noise)
    pcfg = PipelineConfig(initial_pose=inp.initial_pose)
    staged = run_incremental(data, pcfg)
    naive = run_incremental(data, PipelineConfig(**{**pcfg.__dict__, "activation_index": 0}))
    truth = inp.truth_at_gnss([m.timestamp for m in data.gnss])
    a, b = ate_rmse(staged.positions_world(), truth), ate_rmse(naive.positions_world(), truth)
    k = staged.trace.k_star
    ok = k is not None and abs(k - 15) <= 5 and a < b
    _report("EuRoC MH_03 replay", ok, f"k* {k} (need 15 +- 5), ATE full {b:.3f} -> from k* {a:.3f} (need a decrease)")
