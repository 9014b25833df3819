import csv
import json
import random

import mpmath as mp
import numpy as np
import pytest

from aifreset.continuation import (
    BvpUnknowns,
    PointClass,
    bvp_jacobian,
    bvp_residual,
    classify_canard_point,
    continue_branch,
    export_branch,
    l2_norm,
    segment_layout,
    wellposedness_counts,
)
from aifreset.cycles import shoot_cycle, solve_k_for_canard
from aifreset.hybrid import AttractorKind, find_attractor
from aifreset.model import ModelParams, SlowDynamics, State
from oracles import mp_rk4_segments, mp_slow_line_w

FIG1 = ModelParams(I=0.1, eps=0.01, b=0.0, v_res=0.2, v_thr=1.0, k=0.05)
FIG3 = FIG1.with_(eps=0.05)


@pytest.fixture(scope="module")
def branch2():
    p = FIG3.with_(k=0.16)
    return continue_branch(shoot_cycle("auto", 2, p), 2, p, s_max=300, direction=-1)


def test_residual_at_fig1_cycle():
    u = BvpUnknowns.from_cycle(shoot_cycle("auto", 5, FIG1), FIG1)
    assert len(u.to_vector()) == 2 * (5 + 2) + 1
    assert np.max(np.abs(bvp_residual(u, 5, FIG1))) < 1e-9


def test_residual_at_canard_solution():
    sol = solve_k_for_canard(2, FIG3)
    u = BvpUnknowns.from_cycle(sol.cycle, sol.params)
    assert np.max(np.abs(bvp_residual(u, 2, sol.params))) < 1e-9


def test_end_conditions_are_local():
    u = BvpUnknowns.from_cycle(shoot_cycle("auto", 5, FIG1), FIG1)
    m = 7
    r0 = bvp_residual(u, 5, FIG1)
    for i in range(m):
        times = list(u.times)
        times[i] += 1e-3
        r = bvp_residual(BvpUnknowns(u.offsets, tuple(times), u.k, u.references), 5, FIG1)
        assert abs(r[i] - r0[i]) > 1e-8
        others = [j for j in range(m) if j != i]
        np.testing.assert_array_equal(r[others], r0[others])


def test_jacobian_against_differences():
    p = FIG3.with_(k=0.1306)
    u = BvpUnknowns.from_cycle(shoot_cycle("auto", 2, p), p)
    x = u.to_vector()
    J = bvp_jacobian(u, 2, p)
    h = 1e-7
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        fd = (bvp_residual(BvpUnknowns.from_vector(x + e, p), 2, p) - bvp_residual(BvpUnknowns.from_vector(x - e, p), 2, p)) / (2 * h)
        np.testing.assert_allclose(J[:, j], fd, rtol=1e-5, atol=1e-6)


def test_junction_rule():
    layout = segment_layout(4, FIG1)
    assert [reset for *_, reset in layout] == [True, False, False, True, True, True]
    assert [zone.value for zone, *_ in layout][:3] == ["right", "left", "right"]


@pytest.mark.parametrize("n", range(1, 11))
def test_counting_identity(n):
    c = wellposedness_counts(n)
    assert c["NBC"] - c["NDIM"] + 1 == c["NICP"] == n + 3


def test_branch_points_are_converged_and_positive(branch2):
    assert len(branch2.points) > 10
    for pt in branch2.points:
        r = bvp_residual(pt.unknowns, 2, FIG3)
        assert np.max(np.abs(r)) < 1e-9
        assert min(pt.unknowns.times) > 0
        assert pt.unknowns.n_resets == 2


def test_branch_stops_on_vanishing_time(branch2):
    assert branch2.termination == "stopped_nonpositive_time"


def test_relaxation_point_is_regular(branch2):
    assert classify_canard_point(branch2.points[0], FIG3) is PointClass.REGULAR


def test_extended_system_oracle(branch2):
    rng = random.Random(7)
    pts = rng.sample(branch2.points, 5)
    with mp.workdps(40):
        for pt in pts:
            u = pt.unknowns
            layout = segment_layout(2, FIG3)
            blocks = []
            for (zone, alpha, beta, _), d, T in zip(layout, u.offsets, u.times):
                w0 = mp_slow_line_w(zone, alpha, FIG3) + mp.mpf(d)
                blocks.append((zone, (mp.mpf(alpha), w0), mp.mpf(T)))
            ends = mp_rk4_segments(blocks, FIG3)
            for j, ((zone, alpha, beta, reset), (v_end, w_end)) in enumerate(zip(layout, ends)):
                assert abs(float(v_end) - beta) < 1e-7
                nxt = blocks[(j + 1) % len(blocks)][1][1]
                jump = mp.mpf(u.k) if layout[(j + 1) % len(layout)][3] else 0
                assert abs(float(nxt - w_end - jump)) < 1e-7


def test_branch_agrees_with_simulation(branch2):
    pts = [pt for pt in branch2.points if 0.135 < pt.unknowns.k < 0.15]
    pt = pts[len(pts) // 2]
    p = FIG3.with_(k=pt.unknowns.k)
    w0 = pt.unknowns.w_init[0]
    rep, _ = find_attractor(State(p.v_res, w0 + 1e-3), p)
    assert rep.kind is AttractorKind.PERIODIC and rep.n_resets == 2
    assert rep.anchor_w == pytest.approx(w0, abs=1e-6)


def test_norm_options():
    p = FIG3.with_(k=0.16)
    u = BvpUnknowns.from_cycle(shoot_cycle("auto", 2, p), p)
    assert l2_norm(u, p) > l2_norm(u, p, time_weighted=True) > 0


def test_coupled_endpoints():
    p = FIG1.with_(eps=0.05, b=0.05, k=0.1, slow=SlowDynamics.COUPLED)
    br = continue_branch(shoot_cycle("auto", 2, p), 2, p, s_max=300, direction=-1)
    assert br.points[-1].classification is PointClass.GRAZING_HEADLESS
    assert classify_canard_point(br.points[-1], p) is PointClass.GRAZING_HEADLESS


def test_export(tmp_path, branch2):
    csv_path, json_path = export_branch(branch2, tmp_path, "b2")
    rows = list(csv.reader(open(csv_path)))
    assert rows[0][:3] == ["arclength", "k", "l2_norm"]
    assert rows[0][-1] == "classification"
    assert len(rows) == len(branch2.points) + 1
    assert float(rows[1][1]) == branch2.points[0].unknowns.k
    man = json.load(open(json_path))
    assert man["termination"] == branch2.termination
    assert man["params"]["eps"] == 0.05


def test_start_must_be_admissible():
    p = FIG3.with_(k=0.16)
    u = BvpUnknowns.from_cycle(shoot_cycle("auto", 2, p), p)
    bad = BvpUnknowns(u.offsets, (u.times[0], -1.0) + u.times[2:], u.k, u.references)
    with pytest.raises(Exception):
        continue_branch(bad, 2, p)
