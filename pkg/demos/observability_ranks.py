"""Rank structure of the two-keyframe problem and the Lie-derivative tower.

Builds the stacked residual Jacobian at a random window, fixes the first
pose, and shows which directions stay unobservable; then checks the closed
form Lie derivatives against time derivatives along the flow and reports the
rank of the accumulated differential.

    python3 demos/observability_ranks.py [seed]
"""
import sys

import numpy as np

from gnssinit.observability import (
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

rng = np.random.default_rng(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
np.set_printoptions(precision=3, suppress=True, linewidth=110)

O = build_observability_matrix(*random_window(rng))
fixed = O.gauge_fixed()
reduced = fixed.rate_marginalized()
print(f"columns {O.col_labels}")
print(f"rank of O                                 {numerical_rank(O.matrix)} / {O.shape[1]}")
print(f"first pose fixed                          {numerical_rank(fixed.matrix)} / {fixed.shape[1]}")
print(f"first pose fixed, rate rows eliminated    {numerical_rank(reduced.matrix)} / {reduced.shape[1]}")
print(f"same without the relative GNSS row        {numerical_rank(reduced.without_rows(('r_d',)).matrix)}")
print("singular values:", singular_values(reduced.matrix))

N = nullspace(reduced.matrix)
print("\nnullspace (rows: free columns b_g x3, g x2)")
print(N[-5:].T)

point = random_tower_point(rng)
print("\nLie derivatives vs time derivatives along the flow")
for k in range(4):
    print(f"  order {k}: max relative deviation {verify_lie_stack_numerically(k, point):.1e}")
for k in (4, 5, 6):
    print(f"  order {k} rotation coefficients {symbolic_rotation_coefficients(k)}")
print(f"rank(dG) = {rank_dG(point)}")
