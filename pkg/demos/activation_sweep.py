"""ATE as a function of the activation index on the urban-like profile.

The profile drives straight for three seconds before turning, so the
rotation of the GNSS frame about the direction of travel is unobservable at
first. Each run switches the global terms on after a fixed number of fixes.
With the default seed, activating at the first fix lands in a poor basin,
every later index reaches the same optimum, and never estimating the frame
is worse again; other seeds show only the plateau.

    python3 demos/activation_sweep.py [seed] [step]
"""
import sys

import numpy as np

from gnssinit.pipeline import PipelineConfig, associate, run_incremental
from gnssinit.simulation import SensorConfig, ate_rmse, generate, urban_like

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
step = int(sys.argv[2]) if len(sys.argv) > 2 else 10
cfg = SensorConfig(
    gyro_noise_sigma=1e-3,
    accel_noise_sigma=1e-2,
    gnss_noise_sigma=0.2,
    gyro_bias_true=np.array([0.01, -0.005, 0.008]),
    rng_seed=seed,
)
sim = generate(urban_like(), cfg)
i0 = sim.keyframe_index[0]
pose = (sim.truth.R[i0], sim.truth.p[i0], sim.truth.v[i0])
data = associate(sim.imu, sim.gnss, cfg.noise_model())
truth = sim.truth_positions_gnss_frame()

n = len(sim.gnss)
print(f"{n} fixes; index {n} means the global terms never enter")
for idx in list(range(0, n, step)) + [n]:
    res = run_incremental(data, PipelineConfig(initial_pose=pose, activation_index=idx))
    ate = ate_rmse(res.positions_world(), truth)
    print(f"activation index {idx:3d}   ATE {ate:7.4f} m   " + "#" * min(60, int(ate * 100)))
