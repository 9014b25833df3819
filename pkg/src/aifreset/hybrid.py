"""Event-driven simulation of the hybrid system and attractor detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .errors import InvalidStateError
from .flows import (
    CrossingKind,
    CrossingQuery,
    Direction,
    TargetLine,
    first_crossing,
    zone_for_state,
    zone_system,
)
from .model import ModelParams, State, Zone

__all__ = [
    "EventKind",
    "Segment",
    "ResetEvent",
    "HybridTrajectory",
    "AttractorKind",
    "AttractorReport",
    "apply_reset",
    "step_hybrid",
    "simulate",
    "detect_attractor",
    "find_attractor",
    "canard_segment_length",
    "segment_tube_time",
]


class EventKind(str, Enum):
    SWITCH_TO_LEFT = "switch_to_left"
    SWITCH_TO_RIGHT = "switch_to_right"
    RESET = "reset"
    HORIZON_END = "horizon_end"
    EQUILIBRIUM = "equilibrium"
    # bookkeeping split of a left excursion where v' = 0; not a hybrid event
    NULLCLINE = "nullcline"


@dataclass(frozen=True)
class Segment:
    zone: Zone
    start: State
    flight_time: float
    end_event: EventKind
    end: State  # state reached before any reset is applied
    t0: float = 0.0  # absolute start time

    def state_at(self, tau: float, p: ModelParams) -> State:
        """State ``tau`` time units into the segment."""
        return zone_system(self.zone, p).flow(self.start, tau)


@dataclass(frozen=True)
class ResetEvent:
    t: float
    pre_state: State
    post_state: State


@dataclass
class HybridTrajectory:
    segments: list[Segment] = field(default_factory=list)
    resets: list[ResetEvent] = field(default_factory=list)
    total_time: float = 0.0

    @property
    def post_reset_w(self) -> list[float]:
        return [r.post_state.w for r in self.resets]

    @property
    def final_state(self) -> State | None:
        if not self.segments:
            return None
        seg = self.segments[-1]
        if self.resets and seg.end_event is EventKind.RESET:
            return self.resets[-1].post_state
        return seg.end

    def sample(self, p: ModelParams, dt: float | None = None, per_segment: int = 20):
        """Dense samples ``(t, v, w, zone, event)`` for export and plotting.

        The last row of each segment carries its end event; rows inside a
        segment carry an empty event string.
        """
        rows = []
        for seg in self.segments:
            if dt is None:
                n = per_segment
            else:
                n = max(1, int(math.ceil(seg.flight_time / dt)))
            sys_ = zone_system(seg.zone, p)
            traj = sys_.trajectory(seg.start)
            for i in range(n):
                tau = seg.flight_time * i / n
                s = traj.state(tau)
                rows.append((seg.t0 + tau, s.v, s.w, seg.zone.value, ""))
            rows.append((seg.t0 + seg.flight_time, seg.end.v, seg.end.w, seg.zone.value, seg.end_event.value))
        return rows


class AttractorKind(str, Enum):
    PERIODIC = "periodic"
    EQUILIBRIUM = "equilibrium_like"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class AttractorReport:
    kind: AttractorKind
    n_resets: int | None = None
    period: float | None = None
    anchor_w: float | None = None
    transient_resets_discarded: int = 0
    w_sequence: tuple[float, ...] = ()
    diagnostic: str = ""

    def __str__(self):
        if self.kind is AttractorKind.PERIODIC:
            return f"PeriodicNReset({self.n_resets}, period={self.period:.10g}, anchor_w={self.anchor_w:.15g})"
        if self.kind is AttractorKind.EQUILIBRIUM:
            return "EquilibriumLike"
        return f"Undecided({self.diagnostic})"


def apply_reset(s: State, p: ModelParams) -> State:
    return State(p.v_res, s.w + p.k)


def step_hybrid(s, p: ModelParams, horizon: float | None = None, t0: float = 0.0) -> Segment:
    """Flow from ``s`` to the next event.

    The returned segment ends on the switching line, on the threshold (the
    reset is *not* applied to ``segment.end``), at the horizon, or at an
    equilibrium.  A tangential touch of the switching line does not change
    zone; a tangential touch of the threshold fires the reset.
    """
    s = State(float(s[0]), float(s[1])).check()
    tol = p.tol
    if s.v > p.v_thr + tol.root_tol:
        raise InvalidStateError(f"state {tuple(s)} lies beyond the threshold")
    if horizon is None:
        horizon = tol.horizon
    zone = zone_for_state(s, p)
    sys_ = zone_system(zone, p)
    f = sys_.rhs(s)
    if abs(f[0]) < tol.root_tol and abs(f[1]) < tol.root_tol:
        return Segment(zone, s, 0.0, EventKind.EQUILIBRIUM, s, t0)

    if zone is Zone.RIGHT:
        hits = []
        sw = first_crossing(s, CrossingQuery(TargetLine.SWITCHING, horizon, Direction.DECREASING), p, zone)
        if sw.kind is CrossingKind.CROSSING:
            hits.append((sw.t, EventKind.SWITCH_TO_LEFT, sw.state))
        th = first_crossing(s, CrossingQuery(TargetLine.THRESHOLD, horizon, Direction.ANY), p, zone)
        if th.kind is not CrossingKind.NONE:
            hits.append((th.t, EventKind.RESET, th.state))
        if hits:
            t, ev, end = min(hits, key=lambda h: h[0])
            return Segment(zone, s, t, ev, end, t0)
    else:
        sw = first_crossing(s, CrossingQuery(TargetLine.SWITCHING, horizon, Direction.INCREASING), p, zone)
        if sw.kind is CrossingKind.CROSSING:
            return Segment(zone, s, sw.t, EventKind.SWITCH_TO_RIGHT, sw.state, t0)

    t_end = min(horizon, sys_.max_time())
    end = sys_.flow(s, t_end)
    ev = EventKind.HORIZON_END
    if _settles(sys_, zone, p):
        ev = EventKind.EQUILIBRIUM
    return Segment(zone, s, t_end, ev, end, t0)


def _settles(sys_, zone: Zone, p: ModelParams) -> bool:
    """True when the zone's fixed point is a real, attracting, in-zone equilibrium."""
    stable = sys_.max_growth < 0 if sys_.kind == "real" else sys_.m < 0
    if not stable:
        return False
    v = sys_.v_star
    return (v < 0) if zone is Zone.LEFT else (0 <= v <= p.v_thr)


def simulate(
    s0,
    p: ModelParams,
    max_resets: int = 1000,
    max_time: float = math.inf,
    max_segments: int = 1_000_000,
) -> HybridTrajectory:
    """Compose flows and resets from ``s0`` until a stopping bound is hit.

    A state on the threshold is reset at time zero before flowing.
    """
    s = State(float(s0[0]), float(s0[1])).check()
    traj = HybridTrajectory()
    t = 0.0
    if abs(s.v - p.v_thr) <= p.tol.root_tol:
        post = apply_reset(s, p)
        traj.resets.append(ResetEvent(0.0, State(p.v_thr, s.w), post))
        s = post
    while len(traj.resets) < max_resets and len(traj.segments) < max_segments:
        remaining = max_time - t
        if remaining <= 0:
            break
        seg = step_hybrid(s, p, horizon=min(remaining, p.tol.horizon), t0=t)
        if seg.flight_time <= 0:
            if seg.end_event is EventKind.EQUILIBRIUM:
                traj.segments.append(seg)
            break
        traj.segments.append(seg)
        t_new = t + seg.flight_time
        if not t_new > t:
            raise InvalidStateError("simulation time failed to advance")
        t = t_new
        if seg.end_event is EventKind.RESET:
            post = apply_reset(seg.end, p)
            traj.resets.append(ResetEvent(t, seg.end, post))
            s = post
        elif seg.end_event in (EventKind.SWITCH_TO_LEFT, EventKind.SWITCH_TO_RIGHT):
            s = seg.end
        else:
            break
    traj.total_time = t
    return traj


def detect_attractor(
    traj: HybridTrajectory,
    p: ModelParams,
    n_max: int = 64,
    transient_resets: int = 50,
    transient_time: float | None = None,
    tol: float = 1e-9,
) -> AttractorReport:
    """Minimal period of the post-reset ``w`` sequence after a transient.

    The transient prefix ends after ``transient_resets`` resets or at time
    ``transient_time`` (default ``10/eps``), whichever comes first.
    """
    if transient_time is None:
        transient_time = 10.0 / p.eps
    if traj.segments and traj.segments[-1].end_event is EventKind.EQUILIBRIUM:
        return AttractorReport(AttractorKind.EQUILIBRIUM, diagnostic="trajectory settled on an equilibrium")
    resets = traj.resets
    n_early = sum(1 for r in resets if r.t < transient_time)
    j0 = min(transient_resets, n_early)
    tail = [r.post_state.w for r in resets[j0:]]
    if len(tail) < 2:
        return AttractorReport(
            AttractorKind.UNDECIDED,
            transient_resets_discarded=j0,
            w_sequence=tuple(tail),
            diagnostic="not enough resets after the transient",
        )
    for n in range(1, n_max + 1):
        if len(tail) < 2 * n:
            break
        if all(abs(tail[j + n] - tail[j]) < tol for j in range(len(tail) - n)):
            last = resets[-n:]
            period = resets[-1].t - resets[-1 - n].t
            anchor = _anchor_w(traj, p, last)
            return AttractorReport(
                AttractorKind.PERIODIC,
                n_resets=n,
                period=period,
                anchor_w=anchor,
                transient_resets_discarded=j0,
                w_sequence=tuple(tail),
            )
    return AttractorReport(
        AttractorKind.UNDECIDED,
        transient_resets_discarded=j0,
        w_sequence=tuple(tail),
        diagnostic=f"no period <= {n_max} found in {len(tail)} post-transient resets",
    )


def _anchor_w(traj: HybridTrajectory, p: ModelParams, last: list[ResetEvent]) -> float:
    """Post-reset ``w`` after which the orbit leaves towards the switching line."""
    starts = {}
    for seg in traj.segments[-4 * len(last) - 8 :]:
        starts[seg.start] = seg.end_event
    for r in reversed(last):
        if starts.get(r.post_state) is EventKind.SWITCH_TO_LEFT:
            return r.post_state.w
    return max(r.post_state.w for r in last)


def find_attractor(
    s0,
    p: ModelParams,
    n_max: int = 64,
    transient_resets: int = 50,
    tol: float = 1e-9,
    max_resets: int | None = None,
    max_time: float = math.inf,
) -> tuple[AttractorReport, HybridTrajectory]:
    """Simulate long enough for :func:`detect_attractor` and run it.

    The run is extended (doubling the reset budget) while the detector stays
    undecided, up to ``max_resets``.
    """
    budget = transient_resets + 2 * n_max + 8
    if max_resets is None:
        max_resets = 16 * budget
    while True:
        traj = simulate(s0, p, max_resets=budget, max_time=max_time)
        rep = detect_attractor(traj, p, n_max=n_max, transient_resets=transient_resets, tol=tol)
        if rep.kind is not AttractorKind.UNDECIDED or budget >= max_resets or len(traj.resets) < budget:
            return rep, traj
        budget = min(2 * budget, max_resets)
        transient_resets = budget - 2 * n_max - 8


def segment_tube_time(zone: Zone, start, flight_time: float, p: ModelParams, tube_delta: float) -> float:
    """Time a right-zone flight spends within ``tube_delta`` of the repelling slow manifold.

    The slow manifold of the right zone is its slow eigenline, an exact
    invariant line of the linear flow.  The distance to it is carried by the
    fast mode alone and grows monotonically, so the time in the tube is an
    initial interval of the flight.
    """
    if zone is not Zone.RIGHT or flight_time <= 0:
        return 0.0
    sys_ = zone_system(zone, p)
    data = sys_.fast_line_normal()
    if data is None:
        return 0.0
    l_fast, _, gain = data
    c = sys_.trajectory(start).fast_coefficient()
    d0 = abs(c) * gain
    if d0 == 0:
        return flight_time
    if d0 >= tube_delta:
        return 0.0
    return min(flight_time, math.log(tube_delta / d0) / l_fast)


def canard_segment_length(obj, p: ModelParams, tube_delta: float = 1e-3) -> float:
    """Total right-zone flight time spent near the repelling slow manifold.

    ``obj`` is a :class:`HybridTrajectory` or anything exposing ``segments``
    with ``zone``, ``start`` and ``flight_time`` (e.g. a reset cycle).
    """
    return sum(
        segment_tube_time(seg.zone, seg.start, seg.flight_time, p, tube_delta) for seg in obj.segments
    )

