"""Reset cycles as fixed points of the post-reset map.

An ``N``-reset cycle is anchored at the post-reset point ``(v_res, w0)`` from
which the orbit drifts down to the switching line, makes one excursion into
the left zone, returns to the threshold and then performs ``N - 1`` further
reset-to-threshold passes.  With exact flows the whole itinerary is a
deterministic function of ``w0``, so a cycle is a root of the scalar function
``G_N(w0) - w0``.

The derivative of ``G_N`` needs no finite differences.  For a planar flow
carried from one vertical section to another in time ``T`` the induced map on
``w`` has slope ``det(exp(A T)) * f_v(start) / f_v(end)``; resets shift ``w``
by ``k`` and contribute a factor one.  The same product is the nontrivial
Floquet multiplier of the cycle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ConvergenceError, GrazingError, InvalidParameterError, ItineraryError, NumericalError
from .flows import CrossingKind, CrossingQuery, TargetLine, first_crossing, zone_system
from .hybrid import (
    AttractorKind,
    EventKind,
    Segment,
    apply_reset,
    find_attractor,
    segment_tube_time,
    step_hybrid,
)
from .model import ModelParams, SlowDynamics, State, Zone

__all__ = [
    "CanardClass",
    "ItineraryRun",
    "ResetCycle",
    "CanardSolution",
    "PoincareSection",
    "cycle_pattern",
    "run_itinerary",
    "post_reset_map",
    "shoot_cycle",
    "auto_guess",
    "solve_k_for_canard",
    "solve_k_for_maximal_canard",
    "return_map_Pc",
    "return_map_P3RC",
    "corner_grazing_w",
    "floquet_multiplier",
    "monodromy_matrix",
    "recurrence_post_reset_w",
    "classify_cycle_canard",
    "cycle_to_dict",
    "save_cycle_json",
    "load_cycle_json",
]

EXCURSION = (EventKind.SWITCH_TO_LEFT, EventKind.SWITCH_TO_RIGHT, EventKind.RESET)


class CanardClass(str, Enum):
    NONE = "none"
    HEADLESS = "headless"
    WITH_HEAD = "with_head"
    MAXIMAL = "maximal"


@dataclass(frozen=True)
class PoincareSection:
    """Segment ``{v = v_res, |w - center_w| < half_width}``."""

    center_w: float
    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise InvalidParameterError("half_width must be positive")

    def contains(self, w: float) -> bool:
        return abs(w - self.center_w) < self.half_width


@dataclass(frozen=True)
class ItineraryRun:
    segments: tuple[Segment, ...]
    post_reset_w: tuple[float, ...]
    w_end: float
    derivative: float  # d w_end / d w_start along {v = v_res}


@dataclass(frozen=True)
class ResetCycle:
    n_resets: int
    anchor: State
    segment_times: tuple[float, ...]
    period: float
    post_reset_w: tuple[float, ...]
    residual: float
    floquet: float
    monodromy: tuple[tuple[float, float], tuple[float, float]]
    multipliers: tuple[complex, complex]
    canard: CanardClass
    canard_time: float
    segments: tuple[Segment, ...]
    iterations: int = 0

    @property
    def stable(self) -> bool:
        return abs(self.floquet) < 1


@dataclass(frozen=True)
class CanardSolution:
    k_star: float
    cycle: ResetCycle
    params: ModelParams


def cycle_pattern(n_resets: int) -> tuple[EventKind, ...]:
    if n_resets < 1:
        raise InvalidParameterError(f"a cycle needs at least one reset, got N={n_resets}")
    return EXCURSION + (EventKind.RESET,) * (n_resets - 1)


def _fv(zone: Zone, s: State, p: ModelParams) -> float:
    a = 1.0 if zone is Zone.RIGHT else -1.0
    return a * s.v - s.w + p.I


def _split_excursion(seg: Segment, p: ModelParams, index: int, w0: float) -> tuple[Segment, Segment]:
    """Cut a left-zone flight where it meets the attracting branch (``v' = 0``)."""
    c = first_crossing(
        seg.start, CrossingQuery(TargetLine.SLOW_NULLCLINE, seg.flight_time), p, Zone.LEFT
    )
    if c.kind is not CrossingKind.CROSSING or not 0 < c.t < seg.flight_time:
        raise ItineraryError(index, "left excursion does not turn around", w0)
    first = Segment(Zone.LEFT, seg.start, c.t, EventKind.NULLCLINE, c.state, seg.t0)
    second = Segment(
        Zone.LEFT, c.state, seg.flight_time - c.t, seg.end_event, seg.end, seg.t0 + c.t
    )
    return first, second


def _section_derivative(segments: Sequence[Segment], p: ModelParams, strict: bool = False) -> float:
    d = 1.0
    prev = None
    for seg in segments:
        sys_ = zone_system(seg.zone, p)
        d *= math.exp(sys_.trace * seg.flight_time)
        if prev is not EventKind.NULLCLINE:
            d *= _fv(seg.zone, seg.start, p)
        if seg.end_event is not EventKind.NULLCLINE:
            fe = _fv(seg.zone, seg.end, p)
            if strict and abs(fe) <= p.tol.graze_tol:
                raise GrazingError(f"tangential event at the end of a {seg.zone.value} segment")
            d = d / fe if fe != 0 else math.copysign(math.inf, d)
        prev = seg.end_event
    return d


def run_itinerary(
    w0: float,
    pattern: Sequence[EventKind],
    p: ModelParams,
    split_excursions: bool = True,
) -> ItineraryRun:
    """Follow the hybrid flow from ``(v_res, w0)`` through a prescribed event list.

    Raises :class:`ItineraryError` carrying the index of the first segment
    that ends on a different event than prescribed.
    """
    s = State(p.v_res, float(w0)).check()
    segments: list[Segment] = []
    resets: list[float] = []
    t = 0.0
    for ev in pattern:
        idx = len(segments)
        seg = step_hybrid(s, p, t0=t)
        if seg.end_event is not ev:
            raise ItineraryError(idx, f"expected {ev.value}, got {seg.end_event.value}", w0)
        if not seg.flight_time > 0:
            raise ItineraryError(idx, "non-positive flight time", w0)
        if split_excursions and seg.zone is Zone.LEFT:
            segments.extend(_split_excursion(seg, p, idx, w0))
        else:
            segments.append(seg)
        t += seg.flight_time
        if ev is EventKind.RESET:
            s = apply_reset(seg.end, p)
            resets.append(s.w)
        else:
            s = seg.end
    d = _section_derivative(segments, p)
    return ItineraryRun(tuple(segments), tuple(resets), s.w, d)


def post_reset_map(w0: float, n_resets: int, p: ModelParams) -> float:
    """``G_N(w0)``: post-reset ``w`` after one slow excursion and ``N`` resets."""
    return run_itinerary(w0, cycle_pattern(n_resets), p).w_end


# -- Floquet data ----------------------------------------------------------------


def _reset_saltation(pre: State, post: State, p: ModelParams) -> np.ndarray:
    sys_ = zone_system(Zone.RIGHT, p)
    fm = np.array(sys_.rhs(pre))
    fp = np.array(sys_.rhs(post))
    if abs(fm[0]) <= p.tol.graze_tol:
        raise GrazingError("threshold reached tangentially; reset saltation is singular")
    DR = np.array([[0.0, 0.0], [0.0, 1.0]])
    n = np.array([1.0, 0.0])
    return DR + np.outer(fp - DR @ fm, n) / (n @ fm)


def monodromy_matrix(segments: Sequence[Segment], p: ModelParams) -> np.ndarray:
    """Variational matrices and saltation maps multiplied in itinerary order.

    Crossings of the switching line need no correction because the vector
    field is continuous there.
    """
    M = np.eye(2)
    for seg in segments:
        M = zone_system(seg.zone, p).propagator(seg.flight_time) @ M
        if seg.end_event is EventKind.RESET:
            M = _reset_saltation(seg.end, apply_reset(seg.end, p), p) @ M
    return M


def floquet_multiplier(cycle: ResetCycle | Sequence[Segment], p: ModelParams) -> float:
    """Nontrivial Floquet multiplier of a cycle.

    Evaluated as the determinant of the monodromy matrix in product form,
    which keeps full relative precision for strongly contracting or
    expanding cycles.  The trivial multiplier is one.
    """
    segments = cycle.segments if isinstance(cycle, ResetCycle) else cycle
    return _section_derivative(segments, p, strict=True)


# -- cycle assembly --------------------------------------------------------------


def recurrence_post_reset_w(
    w0: float, segment_times: Sequence[float], n_resets: int, p: ModelParams
) -> tuple[float, ...]:
    """Post-reset values rebuilt from flight times (decoupled variant).

    Along every flow ``w`` relaxes as ``b + (w - b) exp(-eps t)``, so
    ``w_1 = b + (w0 - b) exp(-eps (t1 + ... + t4)) + k`` and
    ``w_{j+1} = b + (w_j - b) exp(-eps t_{j+4}) + k``.
    """
    if p.slow is not SlowDynamics.DECOUPLED:
        raise InvalidParameterError("the post-reset recurrence holds for decoupled slow dynamics only")
    if len(segment_times) != n_resets + 3:
        raise InvalidParameterError(f"expected {n_resets + 3} segment times, got {len(segment_times)}")
    b, eps = p.b, p.eps
    w = b + (w0 - b) * math.exp(-eps * sum(segment_times[:4])) + p.k
    out = [w]
    for t in segment_times[4:]:
        w = b + (w - b) * math.exp(-eps * t) + p.k
        out.append(w)
    return tuple(out)


def classify_cycle_canard(segments: Sequence[Segment], p: ModelParams, tube_delta: float = 1e-3):
    """Canard class and total tube time of an itinerary.

    The canard segment is the right-zone flight spending longest within
    ``tube_delta`` of the repelling slow manifold.  It is maximal when it
    leaves the tube within the last quarter of the branch in the direction of
    the slow drift; otherwise it is headless if the flight ends on the
    switching line and has a head if it ends at the threshold.
    """
    best, best_t = None, 0.0
    total = 0.0
    for seg in segments:
        tt = segment_tube_time(seg.zone, seg.start, seg.flight_time, p, tube_delta)
        total += tt
        if tt > best_t:
            best, best_t = seg, tt
    if best is None:
        return CanardClass.NONE, 0.0
    sys_ = zone_system(Zone.RIGHT, p)
    v_in = best.start.v
    exit_ = best.state_at(best_t, p)
    far = 0.0 if sys_.rhs(exit_)[0] < 0 else p.v_thr
    if abs(exit_.v - far) <= 0.25 * abs(v_in - far):
        return CanardClass.MAXIMAL, total
    if best.end_event is EventKind.RESET:
        return CanardClass.WITH_HEAD, total
    return CanardClass.HEADLESS, total


def _assemble(run: ItineraryRun, w0: float, n_resets: int, p: ModelParams, iterations: int = 0) -> ResetCycle:
    times = tuple(seg.flight_time for seg in run.segments)
    M = monodromy_matrix(run.segments, p)
    eig = np.linalg.eigvals(M)
    canard, ctime = classify_cycle_canard(run.segments, p)
    return ResetCycle(
        n_resets=n_resets,
        anchor=State(p.v_res, w0),
        segment_times=times,
        period=sum(times),
        post_reset_w=run.post_reset_w,
        residual=abs(run.w_end - w0),
        floquet=run.derivative,
        monodromy=((M[0, 0], M[0, 1]), (M[1, 0], M[1, 1])),
        multipliers=(complex(eig[0]), complex(eig[1])),
        canard=canard,
        canard_time=ctime,
        segments=run.segments,
        iterations=iterations,
    )


def _lowest_anchor(p: ModelParams) -> float:
    """Smallest post-reset ``w`` from which the orbit can drift to ``v = 0``."""
    try:
        ws = p.w_slow_manifold_at_reset
    except InvalidParameterError:
        ws = p.v_res + p.I
    return max(ws, p.v_res + p.I)


def _fixed_point_brackets(n_resets: int, p: ModelParams, w_lo: float, w_hi: float, n: int):
    pattern = cycle_pattern(n_resets)
    ws = np.linspace(w_lo, w_hi, n)
    vals = []
    for w in ws:
        try:
            r = run_itinerary(float(w), pattern, p)
            vals.append((float(w), r.w_end - w, r.derivative))
        except NumericalError:
            vals.append(None)
    out = []
    for a, b in zip(vals, vals[1:]):
        if a is None or b is None:
            continue
        if a[1] == 0:
            out.append((a[0], a[0], a[2]))
        elif a[1] * b[1] < 0:
            out.append((a[0], b[0], 0.5 * (a[2] + b[2])))
    return out


def auto_guess(n_resets: int, p: ModelParams, span: float | None = None, n_grid: int = 400) -> float:
    """Starting anchor for :func:`shoot_cycle`.

    A simulated attractor with the requested reset count is used when there
    is one; otherwise the fixed-point function is scanned above the slow
    manifold and the first bracketed root with a contracting multiplier (or
    the first root at all) is returned.
    """
    w_lo = _lowest_anchor(p)
    try:
        rep, _ = find_attractor((p.v_res, w_lo + 0.05), p, n_max=max(8, 2 * n_resets))
        if rep.kind is AttractorKind.PERIODIC and rep.n_resets == n_resets:
            return rep.anchor_w
    except NumericalError:
        pass
    if span is None:
        span = 1.0 + 2.0 * n_resets * p.k
    w_lo = w_lo * (1 + 1e-12) + 1e-15
    brackets = _fixed_point_brackets(n_resets, p, w_lo, w_lo + span, n_grid)
    if not brackets:
        raise ConvergenceError(f"no {n_resets}-reset fixed point bracketed in [{w_lo}, {w_lo + span}]")
    stable = [b for b in brackets if abs(b[2]) < 1]
    a, b, _ = (stable or brackets)[0]
    if a == b:
        return a
    pattern = cycle_pattern(n_resets)
    return brentq(lambda w: run_itinerary(w, pattern, p).w_end - w, a, b, xtol=1e-14)


def shoot_cycle(w0_guess: float | str, n_resets: int, p: ModelParams) -> ResetCycle:
    """Newton iteration on ``G_N(w0) = w0`` with the analytic section derivative.

    Steps that break the itinerary are halved.  Iteration stops when the
    fixed-point defect is below ``p.tol.newton_tol`` or the Newton step falls
    below a few ulps of ``w0`` (strongly expanding canard cycles cannot be
    resolved any further in double precision).
    """
    pattern = cycle_pattern(n_resets)
    if isinstance(w0_guess, str):
        if w0_guess != "auto":
            raise InvalidParameterError(f"unknown guess {w0_guess!r}")
        w = auto_guess(n_resets, p)
    else:
        w = float(w0_guess)
    tol = p.tol
    run = run_itinerary(w, pattern, p)
    for it in range(1, tol.max_iter + 1):
        h = run.w_end - w
        if abs(h) < tol.newton_tol:
            return _assemble(run, w, n_resets, p, it - 1)
        d = run.derivative - 1.0
        if not math.isfinite(d) or d == 0:
            raise ConvergenceError(f"singular Newton derivative at w0={w!r}")
        step = -h / d
        if abs(step) <= 4 * np.spacing(w):
            return _assemble(run, w, n_resets, p, it - 1)
        for _ in range(60):
            try:
                new_run = run_itinerary(w + step, pattern, p)
                break
            except ItineraryError:
                step *= 0.5
        else:
            raise ConvergenceError(f"every damped Newton step breaks the itinerary near w0={w!r}")
        w += step
        run = new_run
    h = run.w_end - w
    if abs(h) < tol.newton_tol:
        return _assemble(run, w, n_resets, p, tol.max_iter)
    raise ConvergenceError(f"Newton did not converge in {tol.max_iter} iterations (defect {h:.3e})")


def solve_k_for_canard(
    n_resets: int,
    p: ModelParams,
    k_range: tuple[float, float] | None = None,
    n_scan: int = 400,
) -> CanardSolution:
    """Reset increment for which the ``N``-reset cycle is anchored on the slow manifold.

    The anchor is pinned at ``w_s = (1 + eps)(v_res + I)`` and the scalar
    condition ``G_N(w_s; k) = w_s`` is solved in ``k``: a grid scan finds the
    first sign change, Brent's method refines it.  ``p.k`` is ignored.
    Several roots may exist; narrow ``k_range`` to select one.
    """
    p.require_b_zero("solve_k_for_canard")
    ws = p.w_slow_manifold_at_reset
    return _solve_k(ws, cycle_pattern(n_resets), n_resets, p, k_range, n_scan)


def solve_k_for_maximal_canard(
    n_resets: int,
    p: ModelParams,
    k_range: tuple[float, float] | None = None,
    n_scan: int = 400,
) -> CanardSolution:
    """Reset increment of the ``N``-reset cycle whose anchor orbit grazes the corner.

    The anchor is :func:`corner_grazing_w`; its orbit touches ``v = 0`` at
    ``(0, I)`` without crossing, so the cycle consists of ``N`` passes to
    the threshold.  This is the periodic orbit at the kink of
    :func:`return_map_P3RC` for ``N = 3``.
    """
    wg = corner_grazing_w(p)
    return _solve_k(wg, (EventKind.RESET,) * n_resets, n_resets, p, k_range, n_scan)


def _solve_k(anchor, pattern, n_resets, p, k_range, n_scan) -> CanardSolution:
    if k_range is None:
        k_range = (1e-3 * anchor, anchor)

    def phi(k):
        return run_itinerary(anchor, pattern, p.with_(k=k)).w_end - anchor

    def value(k):
        try:
            return phi(k)
        except NumericalError:
            return None

    def solve(a, b):
        k_star = brentq(phi, a, b, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=400)
        q = p.with_(k=k_star)
        run = run_itinerary(anchor, pattern, q)
        return CanardSolution(k_star, _assemble(run, anchor, n_resets, q), q)

    grid = [float(k) for k in np.linspace(k_range[0], k_range[1], n_scan)]
    vals = [value(k) for k in grid]
    for i in range(len(grid) - 1):
        ka, kb, va, vb = grid[i], grid[i + 1], vals[i], vals[i + 1]
        if va is None and vb is None:
            continue
        if va is not None and vb is not None:
            if va * vb <= 0:
                return solve(ka, kb)
            continue
        # the itinerary breaks inside the cell; a root may hide next to the edge
        if va is not None:
            edge = _valid_edge(value, ka, kb)
            if edge is not None and va * edge[1] <= 0:
                return solve(ka, edge[0])
        else:
            edge = _valid_edge(value, kb, ka)
            if edge is not None and vb * edge[1] <= 0:
                return solve(edge[0], kb)
    raise ConvergenceError(f"no {n_resets}-reset canard condition change of sign for k in {k_range}")


def _valid_edge(value, k_ok: float, k_bad: float):
    """Bisect towards the parameter where an itinerary stops being realisable."""
    v_ok = value(k_ok)
    for _ in range(200):
        mid = 0.5 * (k_ok + k_bad)
        if mid in (k_ok, k_bad):
            break
        v = value(mid)
        if v is None:
            k_bad = mid
        else:
            k_ok, v_ok = mid, v
    return None if v_ok is None else (k_ok, v_ok)


# -- return maps -----------------------------------------------------------------


def return_map_Pc(w: float, p: ModelParams) -> float:
    """Return map of the 2-reset cycle on ``{v = v_res}``."""
    return run_itinerary(w, cycle_pattern(2), p).w_end


def corner_grazing_w(p: ModelParams) -> float:
    """Anchor whose right-zone orbit touches ``v = 0`` tangentially at the corner ``(0, I)``.

    Anchors above it cross into the left zone, anchors below it turn
    towards the threshold.  A backward flight from the corner gives a first
    estimate, which is then moved to the largest double whose forward orbit
    does not cross the switching line.
    """
    sys_ = zone_system(Zone.RIGHT, p)
    if sys_.rhs((0.0, p.I))[1] >= 0:
        raise InvalidParameterError("the right-zone orbit through the corner does not come from v > 0")
    traj = sys_.trajectory((0.0, p.I))

    def g(t):
        return traj.state(-t).v - p.v_res

    hi = 1.0
    while g(hi) < 0:
        hi *= 2
        if hi > p.tol.horizon:
            raise ConvergenceError("backward orbit from the corner never reaches the reset line")
    t = brentq(g, 0.0, hi, xtol=p.tol.time_tol, rtol=4 * np.finfo(float).eps)
    w = traj.state(-t).w

    def crosses(x):
        return step_hybrid((p.v_res, x), p).end_event is EventKind.SWITCH_TO_LEFT

    # bracket the switch in the forward predicate, then bisect on doubles
    step = np.spacing(w)
    if crosses(w):
        lo, hi = w - step, w
        while crosses(lo):
            step *= 2
            hi, lo = lo, lo - step
    else:
        lo, hi = w, w + step
        while not crosses(hi):
            step *= 2
            lo, hi = hi, hi + step
    while np.nextafter(lo, hi) < hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if crosses(mid):
            hi = mid
        else:
            lo = mid
    return float(lo)


def return_map_P3RC(w: float, p: ModelParams, w3r_star: float) -> float:
    """Return map near the periodic point of the 3-reset maximal canard.

    For ``w >= w3r_star`` the orbit crosses into the left zone near the
    corner before its three resets; below it, it turns towards the threshold
    without the excursion.  The two branches meet continuously where the
    excursion shrinks to a tangency at the corner.
    """
    if w >= w3r_star:
        try:
            return run_itinerary(w, cycle_pattern(3), p).w_end
        except ItineraryError as err:
            if err.segment != 0 or w != w3r_star:
                raise
    return run_itinerary(w, (EventKind.RESET,) * 3, p).w_end


# -- export ----------------------------------------------------------------------


def cycle_to_dict(cycle: ResetCycle, p: ModelParams | None = None) -> dict:
    d = {
        "n_resets": cycle.n_resets,
        "anchor": {"v": cycle.anchor.v, "w": cycle.anchor.w},
        "segment_times": list(cycle.segment_times),
        "period": cycle.period,
        "post_reset_w": list(cycle.post_reset_w),
        "residual": cycle.residual,
        "floquet": cycle.floquet,
        "monodromy": [list(r) for r in cycle.monodromy],
        "multipliers": [[z.real, z.imag] for z in cycle.multipliers],
        "canard": cycle.canard.value,
        "canard_time": cycle.canard_time,
        "segments": [
            {
                "zone": s.zone.value,
                "start": [s.start.v, s.start.w],
                "flight_time": s.flight_time,
                "end_event": s.end_event.value,
                "end": [s.end.v, s.end.w],
                "t0": s.t0,
            }
            for s in cycle.segments
        ],
    }
    if p is not None:
        d["params"] = p.as_dict()
    return d


def save_cycle_json(path, cycle: ResetCycle, p: ModelParams) -> None:
    with open(path, "w") as fh:
        json.dump(cycle_to_dict(cycle, p), fh, indent=2)


def load_cycle_json(path) -> tuple[ResetCycle, ModelParams | None]:
    with open(path) as fh:
        d = json.load(fh)
    p = ModelParams.from_dict(d["params"]) if "params" in d else None
    segs = tuple(
        Segment(
            Zone(s["zone"]),
            State(*s["start"]),
            s["flight_time"],
            EventKind(s["end_event"]),
            State(*s["end"]),
            s["t0"],
        )
        for s in d["segments"]
    )
    cyc = ResetCycle(
        n_resets=d["n_resets"],
        anchor=State(d["anchor"]["v"], d["anchor"]["w"]),
        segment_times=tuple(d["segment_times"]),
        period=d["period"],
        post_reset_w=tuple(d["post_reset_w"]),
        residual=d["residual"],
        floquet=d["floquet"],
        monodromy=tuple(tuple(r) for r in d["monodromy"]),
        multipliers=tuple(complex(*z) for z in d["multipliers"]),
        canard=CanardClass(d["canard"]),
        canard_time=d["canard_time"],
        segments=segs,
    )
    return cyc, p
