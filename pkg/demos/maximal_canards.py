"""
Headless and with-head maximal canards
======================================

With coupled adaptation (w' = eps (v - b)) the canard families end in
grazing events with the threshold.  On the 2-reset family the orbit turns
back just before the threshold (headless); on the 3-reset family it
touches the threshold and resets (with head).
"""

from aifreset import ModelParams, SlowDynamics, classify_canard_point, continue_branch, shoot_cycle

p = ModelParams(I=0.1, eps=0.05, b=0.05, v_res=0.2, v_thr=1.0, k=0.1, slow=SlowDynamics.COUPLED)

for n, k0, direction in ((2, 0.1, -1), (3, 0.04, 1)):
    q = p.with_(k=k0)
    branch = continue_branch(shoot_cycle("auto", n, q), n, q, s_max=300, direction=direction)
    end = branch.points[-1]
    label = classify_canard_point(end, p)
    print(f"{n}-reset family from k={k0}: ends at k={end.unknowns.k:.12f} ({branch.termination}) -> {label.name}")
