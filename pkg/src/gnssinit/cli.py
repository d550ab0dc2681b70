"""Command-line entry point.

    gnssinit --mode init --imu imu.csv --gt gt.csv --out results/
    gnssinit --mode init --scenario figure_eight --seed 3 --out results/
    gnssinit --mode sweep --scenario urban --sweep 0:60:5 --out results/
    gnssinit --mode trigger-only --gnss gnss.csv
    gnssinit --mode observability --seed 0
    gnssinit --mode lie-check --seed 0
    gnssinit --mode simulate --scenario figure_eight --out data/

A ``--config`` file holds ``key = value`` lines using the long option names
(dashes or underscores) plus solver and scenario settings; values given on the
command line take precedence.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset_io as dio
from .errors import ParseError
from .manifold import Pose
from .observability import (
    build_observability_matrix,
    nullspace,
    numerical_rank,
    random_tower_point,
    random_window,
    rank_dG,
    singular_values,
    symbolic_rotation_coefficients,
    verify_lie_stack_numerically,
)
from .pipeline import PipelineConfig, associate, run_incremental
from .preintegration import ImuNoiseModel
from .simulation import SensorConfig, TrajectoryModel, ate_rmse, generate, urban_like
from .solver import SolverOptions
from .trigger import DEFAULT_THRESHOLD, TriggerTrace, extrinsic_hessian, update_trigger

MODES = ("init", "sweep", "trigger-only", "observability", "lie-check", "simulate")
SCENARIOS = ("figure_eight", "urban", "straight_line", "constant_rate_arc")

DEFAULTS = {
    "sigma_gnss": 0.2,
    "threshold": DEFAULT_THRESHOLD,
    "seed": 0,
    "out": ".",
    "scenario": "figure_eight",
    "duration": 6.0,
    "gnss_rate": 5.0,
    "imu_rate": 200.0,
    "gyro_sigma": 1e-3,
    "accel_sigma": 1e-2,
    "gyro_noise_density": None,
    "accel_noise_density": None,
    "min_epochs": 3,
    "max_iterations": 100,
    "epoch_iterations": 8,
    "time_unit": "auto",
    "known_initial_pose": False,
    "max_order": 6,
}
TYPES = {
    "sigma_gnss": float,
    "threshold": float,
    "seed": int,
    "duration": float,
    "gnss_rate": float,
    "imu_rate": float,
    "gyro_sigma": float,
    "accel_sigma": float,
    "gyro_noise_density": float,
    "accel_noise_density": float,
    "min_epochs": int,
    "max_iterations": int,
    "epoch_iterations": int,
    "activation_index": int,
    "max_order": int,
    "known_initial_pose": lambda s: str(s).strip().lower() in ("1", "true", "yes", "on"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gnssinit", description="GNSS-inertial two-stage initialization")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--imu", help="IMU CSV (timestamp,wx,wy,wz,ax,ay,az)")
    p.add_argument("--gt", help="ground-truth CSV (timestamp,px,py,pz,qw,qx,qy,qz[,vx,vy,vz])")
    p.add_argument("--gnss", help="GNSS CSV (timestamp,px,py,pz,sxx,syy,szz)")
    p.add_argument("--sigma-gnss", type=float, help="std of synthesized GNSS noise in m (default 0.2)")
    p.add_argument("--threshold", type=float, help="activation threshold on the ratio change (default 1e-2)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out", help="output directory (default .)")
    p.add_argument("--activation-index", type=int, help="force activation after this many GNSS fixes")
    p.add_argument("--sweep", help="activation indices: comma list '0,10,20' or range 'start:stop:step'")
    p.add_argument("--config", help="key = value file")
    p.add_argument("--scenario", choices=SCENARIOS, help="simulated trajectory when no dataset is given")
    p.add_argument("--duration", type=float, help="simulated duration in s")
    p.add_argument(
        "--known-initial-pose",
        action="store_true",
        default=None,
        help="take the first keyframe pose and velocity from ground truth",
    )
    return p


def read_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(lineno, "expected key = value")
            key, value = (x.strip() for x in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge command line, config file and defaults, in that order of precedence."""
    cfg = dict(DEFAULTS)
    if args.config:
        for key, value in read_config(args.config).items():
            cfg[key] = TYPES[key](value) if key in TYPES and value != "" else value
    for key, value in vars(args).items():
        if value is not None:
            cfg[key] = value
    return cfg


def parse_indices(text: str) -> list[int]:
    text = text.strip()
    if ":" in text:
        parts = [int(x) for x in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return list(range(start, stop + 1, step))
    return [int(x) for x in text.split(",") if x.strip()]


# -- inputs ----------------------------------------------------------------------


@dataclass
class Inputs:
    name: str
    imu: list
    gnss: list
    noise: ImuNoiseModel
    truth_at_gnss: object  # callable: GNSS timestamps -> truth positions, or None
    initial_pose: tuple | None


def _scenario_model(cfg) -> TrajectoryModel:
    name = cfg["scenario"]
    if name == "urban":
        return urban_like(float(cfg["duration"]))
    return TrajectoryModel(name, {}, float(cfg["duration"]))


def _sensor_config(cfg) -> SensorConfig:
    return SensorConfig(
        imu_rate=float(cfg["imu_rate"]),
        gnss_rate=float(cfg["gnss_rate"]),
        gyro_noise_sigma=float(cfg["gyro_sigma"]),
        accel_noise_sigma=float(cfg["accel_sigma"]),
        gnss_noise_sigma=float(cfg["sigma_gnss"]),
        gyro_bias_true=np.array([0.01, -0.005, 0.008]),
        rng_seed=int(cfg["seed"]),
    )


def load_inputs(cfg) -> Inputs:
    if cfg.get("imu"):
        manifest = dio.DatasetManifest(cfg["imu"], cfg.get("gt"), cfg.get("gnss"), cfg["time_unit"])
        imu, gnss, gt = dio.load_dataset(manifest, float(cfg["sigma_gnss"]), float(cfg["gnss_rate"]), int(cfg["seed"]))
        rate = 1.0 / float(np.median(np.diff([s.timestamp for s in imu])))
        gd = cfg["gyro_noise_density"] if cfg["gyro_noise_density"] is not None else 1.7e-4
        ad = cfg["accel_noise_density"] if cfg["accel_noise_density"] is not None else 2.0e-3
        # continuous densities to per-sample standard deviations
        noise = ImuNoiseModel.isotropic(float(gd) * np.sqrt(rate), float(ad) * np.sqrt(rate))
        truth = None
        pose = None
        if gt is not None:
            truth = lambda times: dio.groundtruth_at(gt, times)  # noqa: E731
            if cfg["known_initial_pose"]:
                g0 = min(gt, key=lambda g: abs(g.timestamp - gnss[0].timestamp))
                v0 = g0.velocity if g0.velocity is not None else np.zeros(3)
                pose = (g0.R, g0.position, v0)
        return Inputs(Path(cfg["imu"]).stem, imu, gnss, noise, truth, pose)

    sensors = _sensor_config(cfg)
    sim = generate(_scenario_model(cfg), sensors)
    truth_pos = sim.truth_positions_gnss_frame()
    times = np.array([m.timestamp for m in sim.gnss])

    def truth(ts):
        idx = [int(np.argmin(np.abs(times - t))) for t in ts]
        return truth_pos[idx]

    pose = None
    if cfg["known_initial_pose"]:
        i0 = sim.keyframe_index[0]
        pose = (sim.truth.R[i0], sim.truth.p[i0], sim.truth.v[i0])
    floor = 1e-6
    noise = sensors.noise_model(floor)
    return Inputs(f"{cfg['scenario']}-seed{cfg['seed']}", sim.imu, sim.gnss, noise, truth, pose)


def pipeline_config(cfg, activation_index=None) -> PipelineConfig:
    return PipelineConfig(
        threshold=float(cfg["threshold"]),
        min_epochs=int(cfg["min_epochs"]),
        activation_index=activation_index,
        epoch_iterations=int(cfg["epoch_iterations"]),
        final=SolverOptions(max_iterations=int(cfg["max_iterations"])),
        initial_pose=cfg.get("_initial_pose"),
    )


def _ate(result, data, truth) -> float:
    if truth is None:
        return float("nan")
    est = result.positions_world()
    return ate_rmse(est, truth([m.timestamp for m in data.gnss[: len(est)]]))


def _write_trajectory(result, data, path) -> None:
    est = result.positions_world()
    with open(path, "w") as fh:
        fh.write("timestamp,px,py,pz\n")
        for m, p in zip(data.gnss, est):
            fh.write(f"{m.timestamp!r},{p[0]!r},{p[1]!r},{p[2]!r}\n")


# -- commands ----------------------------------------------------------------------


def cmd_init(cfg) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    inp = load_inputs(cfg)
    cfg["_initial_pose"] = inp.initial_pose
    data = associate(inp.imu, inp.gnss, inp.noise)

    forced = cfg.get("activation_index")
    t0 = time.perf_counter()
    staged = run_incremental(data, pipeline_config(cfg, forced))
    runtime = time.perf_counter() - t0
    naive = run_incremental(data, pipeline_config(cfg, 0))

    k_star = staged.trace.k_star
    ate_staged = _ate(staged, data, inp.truth_at_gnss)
    ate_naive = _ate(naive, data, inp.truth_at_gnss)
    record = dio.RunRecord(
        inp.name,
        k_star,
        ate_naive,
        ate_staged,
        runtime,
        {"threshold": cfg["threshold"], "activation_index": staged.activation_index if staged.activation_index is not None else ""},
    )
    dio.write_report([record], out / "report.csv")
    dio.write_report([record], out / "report.json")
    staged.trace.to_csv(out / "trigger.csv")
    _write_trajectory(staged, data, out / "trajectory.csv")

    print(f"sequence            {inp.name}")
    print(f"threshold           {cfg['threshold']:g}")
    print(f"k*                  {k_star if k_star is not None else 'not reached'}")
    print(f"activation index    {staged.activation_index}")
    print(f"ATE full            {ate_naive:.4f} m")
    print(f"ATE from k*         {ate_staged:.4f} m")
    print(f"runtime             {runtime:.2f} s")
    return 0


def cmd_sweep(cfg) -> int:
    if not cfg.get("sweep"):
        print("error: --sweep is required in sweep mode", file=sys.stderr)
        return 2
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    inp = load_inputs(cfg)
    cfg["_initial_pose"] = inp.initial_pose
    data = associate(inp.imu, inp.gnss, inp.noise)
    rows = []
    for idx in parse_indices(cfg["sweep"]):
        res = run_incremental(data, pipeline_config(cfg, idx))
        rows.append((idx, _ate(res, data, inp.truth_at_gnss)))
        print(f"index {idx:4d}  ATE {rows[-1][1]:.4f} m")
    with open(out / "sweep.csv", "w") as fh:
        fh.write("activation_index,ate\n")
        for idx, ate in rows:
            fh.write(f"{idx},{ate!r}\n")
    return 0


def cmd_trigger_only(cfg) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if cfg.get("gnss"):
        gnss = dio.load_gnss(cfg["gnss"], cfg["time_unit"])
    else:
        gnss = load_inputs(cfg).gnss
    trace = TriggerTrace(float(cfg["threshold"]), int(cfg["min_epochs"]))
    for m in range(2, len(gnss) + 1):
        update_trigger(trace, extrinsic_hessian(gnss[:m]), k=m)
    trace.to_csv(out / "trigger.csv")
    print(f"epochs  {len(gnss)}")
    print(f"k*      {trace.k_star if trace.k_star is not None else 'not reached'}")
    return 0


def cmd_observability(cfg) -> int:
    rng = np.random.default_rng(int(cfg["seed"]))
    si, sj, bias, g, dt = random_window(rng)
    O = build_observability_matrix(si, sj, bias, g, dt)
    fixed = O.gauge_fixed()
    reduced = fixed.rate_marginalized()
    np.set_printoptions(precision=4, suppress=True, linewidth=120)
    print(f"O shape {O.shape}")
    print("singular values", singular_values(O.matrix))
    print(f"rank full                          {numerical_rank(O.matrix)}")
    print(f"rank gauge-fixed                   {numerical_rank(fixed.matrix)}")
    print(f"rank gauge-fixed, rates eliminated {numerical_rank(reduced.matrix)}")
    print("nullspace basis (gauge-fixed, rates eliminated), columns:", ", ".join(reduced.col_labels))
    print(nullspace(reduced.matrix).T)
    point = random_tower_point(rng)
    for k in range(0, 4):
        print(f"Lie order {k}: max relative deviation {verify_lie_stack_numerically(k, point):.2e}")
    print(f"rank dG (orders 0..{cfg['max_order']}) {rank_dG(point, int(cfg['max_order']))}")
    return 0


def cmd_lie_check(cfg) -> int:
    rng = np.random.default_rng(int(cfg["seed"]))
    point = random_tower_point(rng)
    top = int(cfg["max_order"])
    for k in range(0, top + 1):
        h = 1e-2 if k <= 3 else 5e-2
        print(f"order {k}: max relative deviation {verify_lie_stack_numerically(k, point, h):.2e}")
    for k in range(4, top + 1):
        print(f"order {k} coefficients {symbolic_rotation_coefficients(k)}")
    print(f"rank dG {rank_dG(point, top)}")
    return 0


def cmd_simulate(cfg) -> int:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    sim = generate(_scenario_model(cfg), _sensor_config(cfg))
    dio.write_imu(sim.imu, out / "imu.csv")
    dio.write_gnss(sim.gnss, out / "gnss.csv")
    tr = sim.truth
    gt = [dio.GroundTruthSample(float(tr.t[k]), tr.p[k], tr.R[k], tr.v[k]) for k in range(len(tr.t))]
    dio.write_groundtruth(gt, out / "groundtruth.csv")
    print(f"wrote {len(sim.imu)} IMU samples and {len(sim.gnss)} GNSS fixes to {out}")
    return 0


COMMANDS = {
    "init": cmd_init,
    "sweep": cmd_sweep,
    "trigger-only": cmd_trigger_only,
    "observability": cmd_observability,
    "lie-check": cmd_lie_check,
    "simulate": cmd_simulate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[cfg["mode"]](cfg)
    except (OSError, ValueError, RuntimeError, IndexError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
