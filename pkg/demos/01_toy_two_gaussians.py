#!/usr/bin/env python3
# Walk through the 2-D toy: two Gaussian clusters (one per attribute value),
# a translator trained to move points across, and the three discriminator
# modes compared on where the translated points land.
#
# Run:  python3 demos/01_toy_two_gaussians.py [out_dir]

import sys
import tempfile

import torch

from obfuskit.data import gen_two_gaussians
from obfuskit.train import toy_default_config, train_toy

torch.set_num_threads(1)

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="toy_demo_")

# 256 points per cluster, means at (-1, 0) and (+1, 0). The "attribute" is
# simply which cluster a point belongs to, so a perfect inversion moves a
# point onto the opposite cluster -- axis-aligned, not merely across the
# decision boundary.
pts = gen_two_gaussians(256, std=0.5, seed=0)
print(f"{len(pts.points)} points, labels balanced: {pts.labels.mean():.2f}")

cfg = toy_default_config()
print(f"training all modes for {cfg.iters_stage1} iters (lr {cfg.lr_generator:g}) ...")
report = train_toy(cfg, pts, out)

# The interesting contrast: a plain attribute classifier (d_attr) is happy as
# soon as points cross its boundary, so translations pile up near the
# midpoint between clusters. The bi-directional pair of judges keeps pushing
# until points sit inside the opposite cluster, which shows up as a larger
# mean distance from the midpoint (axial distance) and a higher success rate
# under an oracle that knows the true cluster densities.
print(f"\n{'mode':>16s} {'+ -> -':>8s} {'- -> +':>8s} {'axial dist':>11s}")
for mode, res in report.modes.items():
    print(f"{mode:>16s} {res.success_pos_to_neg:8.2f} {res.success_neg_to_pos:8.2f} "
          f"{res.mean_axial_distance:11.3f}")

print(f"\nper-point translations and confidence grids written under {out}:")
for f in report.files:
    print(f"  {f}")
print("\ncolumns: translated_points.csv has (mode, direction, x, y, tx, ty, "
      "oracle_target_reached); grids are (x, y, confidence) per node.")
