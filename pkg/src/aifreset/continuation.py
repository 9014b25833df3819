"""Pseudo-arclength continuation of N-reset cycles in the reset increment ``k``.

A cycle with ``N`` resets is cut into ``N + 2`` flow segments, each lying in a
single linearity zone:

====  =====  ==========  ==========
seg   zone   start v     end v
====  =====  ==========  ==========
1     right  ``v_res``   0
2     left   0           0
3     right  0           ``v_thr``
4..   right  ``v_res``   ``v_thr``
====  =====  ==========  ==========

The unknowns are the initial ``w`` of every segment, the flight times ``T_i``
and ``k``.  Because each zone flow is known in closed form, the boundary
value problem collapses to an algebraic system of ``2(N + 2)`` equations: one
end condition ``v_i(T_i) = beta_i`` per segment and one junction condition on
``w`` per segment.  Junctions across the switching line are continuous,
junctions after a threshold hit add ``k``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .cycles import ResetCycle
from .errors import ConvergenceError, InvalidParameterError, NumericalError
from .hybrid import EventKind, Segment
from .model import ModelParams, State, Zone
from .flows import zone_system

__all__ = [
    "PointClass",
    "BvpUnknowns",
    "BranchPoint",
    "Branch",
    "wellposedness_counts",
    "segment_layout",
    "bvp_residual",
    "bvp_jacobian",
    "bvp_segments",
    "l2_norm",
    "classify_canard_point",
    "continue_branch",
    "export_branch",
]


class PointClass(str, Enum):
    REGULAR = "regular"
    NEAR_CANARD = "near_canard"
    GRAZING_HEADLESS = "grazing_headless"
    GRAZING_WITH_HEAD = "grazing_with_head"
    STOPPED = "stopped"


@dataclass(frozen=True)
class BvpUnknowns:
    """Initial ``w`` of every segment, flight times and ``k``.

    Each initial ``w`` is held as an offset from a reference point on the
    zone's slow eigenline at the segment's starting ``v``.  Near a canard the
    end condition amplifies errors in the initial ``w`` by ``exp(lam T)``;
    storing the offset keeps its full relative precision, so the fast modal
    coefficient (proportional to the offset) is exact.
    """

    offsets: tuple[float, ...]
    times: tuple[float, ...]
    k: float
    references: tuple[float, ...]

    def __post_init__(self):
        m = len(self.times)
        if m < 3 or len(self.offsets) != m or len(self.references) != m:
            raise InvalidParameterError("offsets, times and references need N + 2 >= 3 entries each")

    @property
    def n_resets(self) -> int:
        return len(self.times) - 2

    @property
    def w_init(self) -> tuple[float, ...]:
        return tuple(r + d for r, d in zip(self.references, self.offsets))

    def to_vector(self) -> np.ndarray:
        return np.array([*self.offsets, *self.times, self.k], dtype=float)

    @classmethod
    def from_vector(cls, u, p: ModelParams) -> BvpUnknowns:
        u = np.asarray(u, dtype=float)
        m = (len(u) - 1) // 2
        if len(u) != 2 * m + 1:
            raise InvalidParameterError("unknown vector must have odd length 2(N+2)+1")
        refs = reference_w(m - 2, p)
        return cls(tuple(map(float, u[:m])), tuple(map(float, u[m : 2 * m])), float(u[-1]), refs)

    @classmethod
    def from_w(cls, w_init: Sequence[float], times: Sequence[float], k: float, p: ModelParams) -> BvpUnknowns:
        refs = reference_w(len(times) - 2, p)
        return cls(tuple(w - r for w, r in zip(w_init, refs)), tuple(map(float, times)), float(k), refs)

    @classmethod
    def from_cycle(cls, cycle: ResetCycle, p: ModelParams) -> BvpUnknowns:
        """Merge the cycle's split left excursion into a single segment."""
        segs = []
        for seg in cycle.segments:
            if segs and segs[-1][0] is Zone.LEFT and seg.zone is Zone.LEFT:
                z, w, t = segs[-1]
                segs[-1] = (z, w, t + seg.flight_time)
            else:
                segs.append((seg.zone, seg.start.w, seg.flight_time))
        if len(segs) != cycle.n_resets + 2:
            raise InvalidParameterError("cycle does not have the N + 2 segment layout")
        return cls.from_w([s[1] for s in segs], [s[2] for s in segs], p.k, p)


@dataclass(frozen=True)
class BranchPoint:
    unknowns: BvpUnknowns
    l2_norm: float
    arclength: float
    classification: PointClass
    residual: float = 0.0


@dataclass
class Branch:
    n_resets: int
    params: ModelParams
    points: list[BranchPoint] = field(default_factory=list)
    termination: str = ""
    events: list[tuple[int, str]] = field(default_factory=list)

    @property
    def k(self) -> np.ndarray:
        return np.array([pt.unknowns.k for pt in self.points])

    @property
    def norms(self) -> np.ndarray:
        return np.array([pt.l2_norm for pt in self.points])


def wellposedness_counts(n_resets: int) -> dict:
    """Boundary-condition bookkeeping of the extended ``2(N+2)``-dimensional ODE form."""
    m = n_resets + 2
    nbc, ndim, nicp = 3 * m, 2 * m, n_resets + 3
    return {"NBC": nbc, "NDIM": ndim, "NICP": nicp, "balanced": nbc - ndim + 1 == nicp}


def segment_layout(n_resets: int, p: ModelParams) -> list[tuple[Zone, float, float, bool]]:
    """``(zone, alpha, beta, reset_before)`` for each segment."""
    out = [
        (Zone.RIGHT, p.v_res, 0.0, True),
        (Zone.LEFT, 0.0, 0.0, False),
        (Zone.RIGHT, 0.0, p.v_thr, False),
    ]
    out += [(Zone.RIGHT, p.v_res, p.v_thr, True)] * (n_resets - 1)
    return out


def reference_w(n_resets: int, p: ModelParams) -> tuple[float, ...]:
    """Slow-eigenline ``w`` at each segment's starting ``v`` (0 when the spectrum is not real)."""
    out = []
    for zone, alpha, _, _ in segment_layout(n_resets, p):
        line = zone_system(zone, p).slow_line()
        out.append(0.0 if line is None else line[1] + line[0] * alpha)
    return tuple(out)


def _trajectory(sys_, alpha: float, ref: float, offset: float):
    """Modal trajectory from ``(alpha, ref + offset)`` with exact fast coefficient."""
    traj = sys_.trajectory((alpha, ref + offset))
    if traj.kind == "real" and sys_.slow_line() is not None:
        l1, l2 = sys_.lam
        dv = alpha - sys_.v_star
        if abs(l1) >= abs(l2):
            c1 = offset / (l2 - l1)
            traj.c = (c1, dv - c1)
        else:
            c2 = offset / (l1 - l2)
            traj.c = (dv - c2, c2)
    return traj


def _offset_gradient(sys_, T: float) -> np.ndarray:
    """Derivative of the end state with respect to the start offset."""
    return sys_.propagator(T)[:, 1]


def _ends(u: BvpUnknowns, p: ModelParams):
    q = p.with_(k=u.k)
    layout = segment_layout(u.n_resets, q)
    ends = []
    for (zone, alpha, _, _), ref, d, T in zip(layout, u.references, u.offsets, u.times):
        sys_ = zone_system(zone, q)
        traj = _trajectory(sys_, alpha, ref, d)
        ends.append((sys_, traj, traj.state(T)))
    return q, layout, ends


def bvp_residual(u: BvpUnknowns, n_resets: int, p: ModelParams) -> np.ndarray:
    if u.n_resets != n_resets:
        raise InvalidParameterError(f"unknowns describe {u.n_resets} resets, expected {n_resets}")
    q, layout, ends = _ends(u, p)
    m = len(layout)
    r = np.empty(2 * m)
    w0 = u.w_init
    for j, ((zone, alpha, beta, reset), (_, _, y)) in enumerate(zip(layout, ends)):
        r[j] = y.v - beta
        r[m + j] = w0[j] - ends[j - 1][2].w - (u.k if reset else 0.0)
    if not np.all(np.isfinite(r)):
        raise NumericalError("non-finite boundary-value residual")
    return r


def bvp_jacobian(u: BvpUnknowns, n_resets: int, p: ModelParams) -> np.ndarray:
    """Analytic Jacobian, ``2(N+2)`` rows by ``2(N+2) + 1`` columns."""
    q, layout, ends = _ends(u, p)
    m = len(layout)
    J = np.zeros((2 * m, 2 * m + 1))
    for j, ((zone, alpha, beta, reset), (sys_, _, y)) in enumerate(zip(layout, ends)):
        J[j, j] = _offset_gradient(sys_, u.times[j])[0]
        J[j, m + j] = sys_.rhs(y)[0]
        i = (j - 1) % m
        sys_i, _, y_i = ends[i]
        J[m + j, j] += 1.0
        J[m + j, i] -= _offset_gradient(sys_i, u.times[i])[1]
        J[m + j, m + i] -= sys_i.rhs(y_i)[1]
        if reset:
            J[m + j, -1] = -1.0
    return J


def bvp_segments(u: BvpUnknowns, p: ModelParams) -> list[Segment]:
    """Flow segments of the orbit encoded by ``u``."""
    q, layout, ends = _ends(u, p)
    out = []
    t0 = 0.0
    for (zone, alpha, beta, _), (_, traj, y), T in zip(layout, ends, u.times):
        ev = EventKind.RESET if beta == q.v_thr else (
            EventKind.SWITCH_TO_LEFT if zone is Zone.RIGHT else EventKind.SWITCH_TO_RIGHT
        )
        out.append(Segment(zone, traj.s0, T, ev, y, t0))
        t0 += T
    return out


def l2_norm(u: BvpUnknowns, p: ModelParams, samples: int = 41, time_weighted: bool = False) -> float:
    """Discrete L2 norm of the orbit over rescaled time ``s in [0, 1]``.

    Every segment is sampled uniformly in ``s`` and the squared norms of the
    segment states are summed, as for the stacked ``2(N+2)``-dimensional
    system.  With ``time_weighted`` each segment is weighted by
    ``T_i / sum(T)`` instead, giving the time average along the orbit.
    """
    q, layout, ends = _ends(u, p)
    total = sum(u.times)
    acc = 0.0
    s = np.linspace(0.0, 1.0, samples)
    for (_, traj, _), T in zip(ends, u.times):
        vals = np.array([sum(c * c for c in traj.state(si * T)) for si in s])
        acc += (T / total if time_weighted else 1.0) * np.trapezoid(vals, s)
    return math.sqrt(acc)


# -- admissibility and canard labels --------------------------------------------


def _monitors(u: BvpUnknowns, p: ModelParams) -> list[tuple[float, int, str]]:
    """Signed margins that must stay positive for the orbit to be admissible.

    Each entry is ``(margin, segment, kind)``; ``kind`` is ``"time"`` for a
    flight time, ``"thr"`` when an interior maximum touches the threshold,
    ``"zero"`` when an interior extremum touches the switching line and
    ``"end"``/``"start"`` for tangential arrival or departure.
    """
    q, layout, ends = _ends(u, p)
    out = []
    for j, ((zone, alpha, beta, _), (sys_, traj, y), T) in enumerate(zip(layout, ends, u.times)):
        out.append((T, j, "time"))
        if T <= 0:
            continue
        x = traj.s0
        crit = [traj.state(t).v for t in traj.critical_times(T)]
        fe = sys_.rhs(y)[0]
        fs = sys_.rhs(x)[0]
        if zone is Zone.LEFT:
            out.append((-fs, j, "start"))
            out.append((fe, j, "end"))
            continue
        if alpha == 0.0:
            out.append((fs, j, "start"))
        out.extend((q.v_thr - v, j, "thr") for v in crit)
        out.extend((v, j, "zero") for v in crit)
        out.append((-fe if beta == 0.0 else fe, j, "end"))
    return out


def classify_canard_point(
    pt: BranchPoint | BvpUnknowns,
    p: ModelParams,
    tube_delta: float = 1e-3,
    graze_tol: float = 1e-6,
) -> PointClass:
    """Label a cycle by its canard segment.

    The canard segment is the right-zone flight that stays longest within
    ``tube_delta`` of the repelling slow manifold.  A near-tangency on it
    (an interior extremum on the threshold or switching line, or a
    tangential arrival at its end line) makes it a grazing point, with head
    when the segment ends in a reset and headless otherwise.
    """
    u = pt.unknowns if isinstance(pt, BranchPoint) else pt
    q, layout, ends = _ends(u, p)
    best, best_t = None, 0.0
    for (zone, _, beta, _), (sys_, traj, y), T in zip(layout, ends, u.times):
        tt = _tube_time(sys_, traj, T, tube_delta) if zone is Zone.RIGHT else 0.0
        if tt > best_t:
            best, best_t = (sys_, traj, y, T, beta), tt
    if best is None:
        return PointClass.REGULAR
    sys_, traj, y, T, beta = best
    crit = [traj.state(t).v for t in traj.critical_times(T)]
    touches = any(abs(v - q.v_thr) <= graze_tol or abs(v) <= graze_tol for v in crit)
    touches = touches or abs(sys_.rhs(y)[0]) <= graze_tol
    if touches:
        return PointClass.GRAZING_WITH_HEAD if beta == q.v_thr else PointClass.GRAZING_HEADLESS
    return PointClass.NEAR_CANARD


def _tube_time(sys_, traj, T: float, tube_delta: float) -> float:
    data = sys_.fast_line_normal()
    cf = traj.fast_coefficient()
    if data is None or cf is None:
        return 0.0
    l_fast, _, gain = data
    dist0 = abs(cf) * gain
    if dist0 == 0:
        return T
    if dist0 >= tube_delta or l_fast <= 0:
        return 0.0
    return min(T, math.log(tube_delta / dist0) / l_fast)


_EVENT_LABEL = {
    ("thr", False): PointClass.GRAZING_HEADLESS,
    ("thr", True): PointClass.GRAZING_WITH_HEAD,
    ("zero", True): PointClass.GRAZING_WITH_HEAD,
    ("zero", False): PointClass.GRAZING_HEADLESS,
    ("end", True): PointClass.GRAZING_WITH_HEAD,
    ("end", False): PointClass.GRAZING_HEADLESS,
    ("start", True): PointClass.GRAZING_WITH_HEAD,
    ("start", False): PointClass.GRAZING_HEADLESS,
}


# -- continuation ----------------------------------------------------------------


def _tangent(J: np.ndarray, prev: np.ndarray | None) -> np.ndarray:
    _, _, vt = np.linalg.svd(J)
    t = vt[-1]
    if prev is not None and t @ prev < 0:
        t = -t
    return t / np.linalg.norm(t)


def _correct(u_pred, tangent, n_resets, p, tol, max_iter):
    """Newton on the residual plus the pseudo-arclength constraint."""
    try:
        return _newton(u_pred, tangent, n_resets, p, tol, max_iter)
    except InvalidParameterError as err:
        raise ConvergenceError(f"corrector left the parameter domain: {err}") from err


def _newton(u_pred, tangent, n_resets, p, tol, max_iter):
    u = u_pred.copy()
    for it in range(1, max_iter + 1):
        x = BvpUnknowns.from_vector(u, p)
        F = bvp_residual(x, n_resets, p)
        g = tangent @ (u - u_pred)
        J = bvp_jacobian(x, n_resets, p)
        A = np.vstack([J, tangent])
        rhs = -np.append(F, g)
        try:
            du = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as err:
            raise ConvergenceError("singular extended Jacobian") from err
        u = u + du
        if not np.all(np.isfinite(u)):
            raise ConvergenceError("corrector produced non-finite values")
        if np.max(np.abs(du)) < 1e-13 * (1 + np.max(np.abs(u))) or np.max(np.abs(F)) < tol * 1e-2:
            x = BvpUnknowns.from_vector(u, p)
            F = bvp_residual(x, n_resets, p)
            if np.max(np.abs(F)) < tol:
                return u, it, float(np.max(np.abs(F)))
    x = BvpUnknowns.from_vector(u, p)
    F = bvp_residual(x, n_resets, p)
    if np.max(np.abs(F)) < tol:
        return u, max_iter, float(np.max(np.abs(F)))
    raise ConvergenceError(f"corrector did not converge (residual {np.max(np.abs(F)):.3e})")


def _first_violation(u: BvpUnknowns, p: ModelParams):
    bad = [m for m in _monitors(u, p) if not m[0] > 0]
    if not bad:
        return None
    # a vanishing flight time coincides with the tangency it causes; report the time
    return min(bad, key=lambda m: m[2] != "time")


def continue_branch(
    start: BvpUnknowns | ResetCycle,
    n_resets: int,
    p: ModelParams,
    ds: float = 1e-3,
    s_max: float = 100.0,
    direction: int = -1,
    ds_min: float = 1e-12,
    ds_max: float = 1.0,
    max_points: int = 20000,
    tol: float = 1e-10,
    max_iter: int = 8,
    locate: bool = True,
) -> Branch:
    """Trace the family of ``N``-reset cycles through ``start``.

    ``direction`` picks the initial sense of ``k`` (``-1`` decreasing).  The
    predictor is the secant through the last two points (the Jacobian
    null vector for the first step).  A failed corrector halves ``ds``; a
    corrector converging in at most three iterations grows it by 1.3.

    The branch stops at ``s_max``, at ``max_points``, when the step falls
    below ``ds_min``, or when the orbit stops being admissible for the
    prescribed itinerary: a flight time reaching zero or a segment touching
    a line it must not touch.  In the latter cases the boundary point is
    located by bisection on the step length and, if admissible, appended
    with its grazing label.
    """
    if isinstance(start, ResetCycle):
        start = BvpUnknowns.from_cycle(start, p)
    u0 = start.to_vector()
    F0 = bvp_residual(start, n_resets, p)
    if np.max(np.abs(F0)) > 1e-8:
        u0, _, _ = _correct(u0, np.eye(len(u0))[-1], n_resets, p, tol, 20)
        start = BvpUnknowns.from_vector(u0, p)
    if _first_violation(start, p) is not None:
        raise InvalidParameterError("start point is not an admissible cycle of the prescribed itinerary")

    branch = Branch(n_resets, p)

    def emit(u_vec, s, res, label=None):
        x = BvpUnknowns.from_vector(u_vec, p)
        cls = label or classify_canard_point(x, p)
        branch.points.append(BranchPoint(x, l2_norm(x, p), s, cls, res))

    res0 = float(np.max(np.abs(bvp_residual(start, n_resets, p))))
    emit(u0, 0.0, res0)
    J = bvp_jacobian(start, n_resets, p)
    tangent = _tangent(J, None)
    if tangent[-1] * direction < 0:
        tangent = -tangent
    u_prev, u_cur, s = None, u0, 0.0

    while True:
        if s >= s_max:
            branch.termination = "s_max"
            break
        if len(branch.points) >= max_points:
            branch.termination = "max_points"
            break
        if ds < ds_min:
            branch.termination = "step_underflow"
            break
        if u_prev is not None:
            sec = u_cur - u_prev
            tangent = sec / np.linalg.norm(sec)
        try:
            u_new, its, res = _correct(u_cur + ds * tangent, tangent, n_resets, p, tol, max_iter)
        except NumericalError:
            ds *= 0.5
            continue
        x_new = BvpUnknowns.from_vector(u_new, p)
        bad = _first_violation(x_new, p)
        if bad is not None:
            if not locate:
                branch.termination = f"inadmissible:{bad[2]}@{bad[1]}"
                break
            hit = _locate(u_cur, tangent, ds, n_resets, p, tol, max(max_iter, 30))
            if hit is not None:
                u_hit, ds_hit, res_hit, bad = hit
            stopped = _is_time_event(bad)
            if hit is not None:
                _, seg, kind = bad
                x_hit = BvpUnknowns.from_vector(u_hit, p)
                if stopped:
                    label = classify_canard_point(x_hit, p)
                else:
                    label = _EVENT_LABEL[(kind, segment_layout(n_resets, p)[seg][2] == p.v_thr)]
                emit(u_hit, s + ds_hit, res_hit, label)
                branch.events.append((len(branch.points) - 1, f"{kind}@{seg + 1}"))
            branch.termination = "stopped_nonpositive_time" if stopped else f"grazing_{bad[2]}@{bad[1] + 1}"
            break
        s += ds
        emit(u_new, s, res)
        u_prev, u_cur = u_cur, u_new
        if its <= 3:
            ds = min(ds * 1.3, ds_max)
    return branch


def _is_time_event(bad) -> bool:
    """A vanishing flight time, or a tangency that forces the left flight time to zero.

    Touching the switching line tangentially means ``v = 0`` and ``v' = 0``,
    i.e. the corner ``(0, I)``; a left flight starting or ending there has
    zero length.
    """
    _, seg, kind = bad
    return kind == "time" or seg == 1 or (seg, kind) in ((0, "end"), (2, "start"))


def _locate(u_cur, tangent, ds, n_resets, p, tol, max_iter):
    """Bisect the step length for the boundary of admissibility.

    Returns the last admissible point found (within a relative step of
    ``1e-12``), the step that reached it, its residual and the monitor that
    fails just beyond it.
    """
    lo, hi = 0.0, ds
    best = None
    culprit = None
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-13 * ds or mid in (lo, hi):
            break
        try:
            u_mid, _, res = _correct(u_cur + mid * tangent, tangent, n_resets, p, tol, max_iter)
        except NumericalError:
            hi = mid
            continue
        bad = _first_violation(BvpUnknowns.from_vector(u_mid, p), p)
        if bad is None:
            lo, best = mid, (u_mid, mid, res)
        else:
            hi, culprit = mid, bad
    if best is None or culprit is None:
        return None
    return (*best, culprit)


# -- export ------------------------------------------------------------------------


def export_branch(branch: Branch, out_dir, stem: str = "branch", extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.json``; numbers use 17 significant digits."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = branch.n_resets + 2
    csv_path = out / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(
            ["arclength", "k", "l2_norm"]
            + [f"T_{i}" for i in range(1, m + 1)]
            + [f"w_{i}_init" for i in range(1, m + 1)]
            + ["classification"]
        )
        for pt in branch.points:
            u = pt.unknowns
            nums = [pt.arclength, u.k, pt.l2_norm, *u.times, *u.w_init]
            wr.writerow([f"{x:.17g}" for x in nums] + [pt.classification.value])
    manifest = {
        "n_resets": branch.n_resets,
        "params": branch.params.as_dict(),
        "termination": branch.termination,
        "n_points": len(branch.points),
        "events": [{"point": i, "monitor": e} for i, e in branch.events],
        "csv": csv_path.name,
    }
    if extra:
        manifest.update(extra)
    json_path = out / f"{stem}.json"
    with open(json_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return csv_path, json_path
