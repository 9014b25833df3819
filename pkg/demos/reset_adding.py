"""
Reset-adding in a narrow window of k
====================================

At eps = 0.05 the attracting cycle gains a reset as k decreases, and the
transition from two to three resets passes through a four-reset cycle in a
window only a few 1e-5 wide.  The canard cycles computed from the
slow-manifold condition sit just below that window.
"""

import numpy as np

from aifreset import ModelParams, State, find_attractor, solve_k_for_canard

p = ModelParams(I=0.1, eps=0.05, b=0.0, v_res=0.2, v_thr=1.0, k=0.13)

print("   k          resets")
for k in np.arange(0.13050, 0.13060, 0.000005):
    report, _ = find_attractor(State(p.v_res, 0.35), p.with_(k=float(k)))
    print(f"  {k:.6f}   {report.n_resets}")

# canard cycles: the reset point lies exactly on the repelling slow manifold
two = solve_k_for_canard(2, p)
three = solve_k_for_canard(3, p, k_range=(two.k_star - 2e-3, two.k_star + 2e-3))
for n, sol in ((2, two), (3, three)):
    c = sol.cycle
    print(f"{n}-reset canard: k* = {sol.k_star:.12f}, tube time {c.canard_time:.2f}, mu = {c.floquet:.3e}")
