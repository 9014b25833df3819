"""
Canard explosion along a branch of 2-reset cycles
=================================================

Pseudo-arclength continuation in k of the two-reset cycle, started just
above the explosion.  Near k = 0.13055 the branch becomes almost vertical: the canard segment along the repelling
slow manifold grows while k hardly changes.  The branch stops where the
left-zone flight time shrinks to zero.
"""

import sys
import tempfile

import numpy as np

from aifreset import ModelParams, continue_branch, export_branch, shoot_cycle

p = ModelParams(I=0.1, eps=0.05, b=0.0, v_res=0.2, v_thr=1.0, k=0.1306)

branch = continue_branch(shoot_cycle("auto", 2, p), 2, p, s_max=300, direction=-1)
k, norm = branch.k, branch.norms
print(f"{len(branch.points)} points, termination: {branch.termination}")
print(f"k range {k.min():.7f} .. {k.max():.7f}, norm range {norm.min():.4f} .. {norm.max():.4f}")

# how much of the norm range is covered while k stays within 1e-4 of the explosion
near = np.abs(k - 0.130555) < 5e-5
share = (norm[near].max() - norm[near].min()) / (norm.max() - norm.min())
print(f"share of the norm range inside a 1e-4 window: {share:.2f}")

counts = {}
for pt in branch.points:
    counts[pt.classification.name] = counts.get(pt.classification.name, 0) + 1
print("point classes:", counts)

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp()
csv_path, json_path = export_branch(branch, out, "two_reset")
print("written:", csv_path, json_path)
