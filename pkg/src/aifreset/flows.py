"""Closed-form zone flows and first-crossing times.

In each linearity zone the vector field is affine, ``x' = A x + c``, so the
flow is ``x(t) = x* + exp(A t) (x0 - x*)`` around the zone's (possibly
virtual) fixed point ``x*``.  The matrix exponential is evaluated in the
eigenbasis, which keeps the expanding and contracting modes separate: the
coefficient of ``exp(t)`` on the right zone is computed once from the initial
condition and never recovered by cancellation.  Near a repeated eigenvalue a
``cosh``/``sinh`` form is used instead.

Because ``v(t) - v*`` is a combination of at most two exponentials (or a
damped cosine), its critical points are available in closed form.  Between
consecutive critical points ``v`` is monotone, which makes bracketing of the
first crossing exact instead of sample based.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidStateError
from .model import ModelParams, SlowDynamics, State, Zone

__all__ = [
    "ZoneSystem",
    "zone_system",
    "zone_for_state",
    "flow",
    "flow_plus",
    "flow_minus",
    "propagator",
    "vector_field",
    "TargetLine",
    "Direction",
    "CrossingQuery",
    "CrossingKind",
    "Crossing",
    "FlowResult",
    "first_crossing",
    "line_value",
]

# largest exponent argument evaluated before a flight counts as divergent
_EXP_CAP = 690.0
# relative eigenvalue gap below which the cosh/sinh form is used
_DEGENERATE_GAP = 1e-4


@dataclass(frozen=True)
class FlowResult:
    state: State
    elapsed: float


class ZoneSystem:
    """Affine vector field ``x' = A x + c`` of one linearity zone.

    ``A`` always has the form ``[[a, -1], [c21, c22]]``, so eigenvectors can
    be written as ``(1, a - lam)``.
    """

    def __init__(self, zone: Zone, a: float, a21: float, a22: float, c1: float, c2: float):
        self.zone = zone
        self.a = a
        self.a21 = a21
        self.a22 = a22
        self.c1 = c1
        self.c2 = c2
        self.A = np.array([[a, -1.0], [a21, a22]])
        det = a * a22 + a21
        if det == 0:
            raise InvalidStateError("singular zone matrix")
        self.det = det
        self.trace = a + a22
        # A x* = -c
        self.v_star = (-c1 * a22 - c2) / det
        self.w_star = (-c2 * a + c1 * a21) / det
        m = 0.5 * self.trace
        s2 = m * m - det
        self.m = m
        self.s2 = s2
        scale = max(abs(m), math.sqrt(abs(det)), 1e-300)
        if s2 >= 0:
            s = math.sqrt(s2)
            self.lam = (m + s, m - s)
            self.kind = "real"
        else:
            s = math.sqrt(-s2)
            self.lam = (complex(m, s), complex(m, -s))
            self.kind = "complex"
        self.gap = 2.0 * s
        if self.gap < _DEGENERATE_GAP * scale:
            self.kind = "degenerate"
        self.max_growth = m + (math.sqrt(s2) if s2 > 0 else 0.0)

    # -- pointwise quantities -------------------------------------------------

    def rhs(self, s) -> tuple[float, float]:
        v, w = s
        return (self.a * v - w + self.c1, self.a21 * v + self.a22 * w + self.c2)

    @property
    def fixed_point(self) -> State:
        return State(self.v_star, self.w_star)

    def slow_line(self) -> tuple[float, float] | None:
        """Slope and intercept of the slow eigenline through ``x*``.

        For a real spectrum the slow direction belongs to the eigenvalue of
        smaller modulus.  Returns ``None`` for complex or repeated spectra.
        """
        if self.kind != "real":
            return None
        lam = min(self.lam, key=abs)
        slope = self.a - lam
        return slope, self.w_star - slope * self.v_star

    def fast_line_normal(self) -> tuple[float, float, float] | None:
        """Data for the signed distance to the slow eigenline.

        Returns ``(lam_fast, lam_slow, gain)`` such that the distance of
        ``x(t)`` from the slow line equals ``|c_fast| * gain * exp(lam_fast t)``.
        """
        if self.kind != "real":
            return None
        l_fast, l_slow = sorted(self.lam, key=abs, reverse=True)
        uf = (1.0, self.a - l_fast)
        us = (1.0, self.a - l_slow)
        cross = abs(uf[0] * us[1] - uf[1] * us[0])
        return l_fast, l_slow, cross / math.hypot(*us)

    # -- trajectories ---------------------------------------------------------

    def trajectory(self, s0) -> _ModalTrajectory:
        return _ModalTrajectory(self, s0)

    def flow(self, s0, t: float) -> State:
        if t == 0:
            return State(float(s0[0]), float(s0[1]))
        return self.trajectory(s0).state(t)

    def propagator(self, t: float) -> np.ndarray:
        """``exp(A t)``, the variational matrix over a flight of length ``t``."""
        if self.kind == "degenerate":
            ch, shs = _cosh_sinh(self.s2, t)
            e = math.exp(self.m * t)
            B = self.A - self.m * np.eye(2)
            return e * (ch * np.eye(2) + shs * B)
        l1, l2 = self.lam
        a = self.a
        d = l2 - l1
        r1 = (-(a - l2) / d, 1.0 / d)
        r2 = (1.0 - r1[0], -r1[1])
        u1 = (1.0, a - l1)
        u2 = (1.0, a - l2)
        if self.kind == "real":
            e1, e2 = math.exp(l1 * t), math.exp(l2 * t)
        else:
            e1, e2 = cmath.exp(l1 * t), cmath.exp(l2 * t)
        P = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                val = u1[i] * e1 * r1[j] + u2[i] * e2 * r2[j]
                P[i, j] = val.real if isinstance(val, complex) else val
        return P

    def max_time(self) -> float:
        """Longest flight before ``exp`` of the growing mode overflows."""
        g = self.max_growth
        if self.kind == "degenerate":
            g = max(g, self.m + math.sqrt(abs(self.s2)))
        return math.inf if g <= 0 else _EXP_CAP / g


def _cosh_sinh(s2: float, t: float) -> tuple[float, float]:
    """``cosh(s t)`` and ``sinh(s t)/s`` for ``s = sqrt(s2)``, any sign of ``s2``."""
    if s2 > 0:
        s = math.sqrt(s2)
        return math.cosh(s * t), math.sinh(s * t) / s
    if s2 < 0:
        om = math.sqrt(-s2)
        return math.cos(om * t), math.sin(om * t) / om
    return 1.0, t


class _ModalTrajectory:
    """Flow from one initial state, with the modal coefficients precomputed."""

    def __init__(self, sys_: ZoneSystem, s0):
        self.sys = sys_
        self.s0 = State(float(s0[0]), float(s0[1]))
        dv = self.s0.v - sys_.v_star
        dw = self.s0.w - sys_.w_star
        self.kind = sys_.kind
        a = sys_.a
        if self.kind == "degenerate":
            # v - v* = exp(m t) (ch p + shs q), likewise for w
            self.p = (dv, dw)
            self.q = ((a - sys_.m) * dv - dw, sys_.a21 * dv + (sys_.a22 - sys_.m) * dw)
            return
        l1, l2 = sys_.lam
        if self.kind == "real":
            # fast coefficient from the distance to the slow eigenline, written
            # exactly as the line is evaluated, so seeds on the line stay on it
            slope, intercept = sys_.slow_line()
            fast = 0 if abs(l1) >= abs(l2) else 1
            l_f, l_s = (l1, l2) if fast == 0 else (l2, l1)
            cf = (self.s0.w - (slope * self.s0.v + intercept)) / (l_s - l_f)
            self.c = (cf, dv - cf) if fast == 0 else (dv - cf, cf)
        else:
            c1 = (dw - (a - l2) * dv) / (l2 - l1)
            self.c = (c1, dv - c1)
        self.u = ((1.0, a - l1), (1.0, a - l2))

    def state(self, t: float) -> State:
        sys_ = self.sys
        if t == 0:
            return self.s0
        if self.kind == "degenerate":
            ch, shs = _cosh_sinh(sys_.s2, t)
            e = math.exp(sys_.m * t)
            return State(
                sys_.v_star + e * (ch * self.p[0] + shs * self.q[0]),
                sys_.w_star + e * (ch * self.p[1] + shs * self.q[1]),
            )
        l1, l2 = sys_.lam
        c1, c2 = self.c
        if self.kind == "real":
            e1 = c1 * math.exp(l1 * t) if c1 else 0.0
            e2 = c2 * math.exp(l2 * t) if c2 else 0.0
            return State(
                sys_.v_star + e1 + e2,
                sys_.w_star + e1 * self.u[0][1] + e2 * self.u[1][1],
            )
        z = c1 * cmath.exp(l1 * t)
        return State(sys_.v_star + 2.0 * z.real, sys_.w_star + 2.0 * (z * self.u[0][1]).real)

    def v(self, t: float) -> float:
        return self.state(t)[0]

    def dv(self, t: float) -> float:
        """Time derivative of ``v`` along the trajectory."""
        return self.sys.rhs(self.state(t))[0]

    def fast_coefficient(self) -> float | None:
        """Modal coefficient of the fast eigendirection (real spectra only)."""
        if self.kind != "real":
            return None
        l1, l2 = self.sys.lam
        return self.c[0] if abs(l1) >= abs(l2) else self.c[1]

    def critical_times(self, t_max: float) -> Iterator[float]:
        """Times in ``(0, t_max)`` where ``v'`` vanishes, in increasing order."""
        sys_ = self.sys
        if self.kind == "real":
            l1, l2 = sys_.lam
            c1, c2 = self.c
            num, den = -c2 * l2, c1 * l1
            if den == 0 or num == 0:
                return
            ratio = num / den
            if ratio <= 0:
                return
            t = math.log(ratio) / (l1 - l2)
            if 0 < t < t_max:
                yield t
            return
        if self.kind == "complex":
            l1 = sys_.lam[0]
            z = self.c[0] * l1
            if z == 0:
                return
            phi = cmath.phase(z)
            om = l1.imag
            # v' is proportional to cos(om t + phi)
            n = math.ceil((phi - 0.5 * math.pi) / math.pi)
            while True:
                t = (0.5 * math.pi + n * math.pi - phi) / om
                if t >= t_max:
                    return
                if t > 0:
                    yield t
                n += 1
        # degenerate: v' = exp(m t) (ch A + shs B)
        m, s2 = sys_.m, sys_.s2
        A = m * self.p[0] + self.q[0]
        B = m * self.q[0] + s2 * self.p[0]
        if B == 0:
            return
        if s2 == 0:
            t = -A / B
            if 0 < t < t_max:
                yield t
            return
        if s2 > 0:
            s = math.sqrt(s2)
            x = -A * s / B
            if abs(x) < 1:
                t = math.atanh(x) / s
                if 0 < t < t_max:
                    yield t
            return
        om = math.sqrt(-s2)
        # A cos(om t) + (B/om) sin(om t) = R cos(om t - psi)
        psi = math.atan2(B / om, A)
        n = math.ceil((psi + 0.5 * math.pi) / math.pi) - 1
        while True:
            t = (0.5 * math.pi + n * math.pi + psi) / om
            if t >= t_max:
                return
            if t > 0:
                yield t
            n += 1


def zone_system(zone: Zone, p: ModelParams) -> ZoneSystem:
    if zone not in (Zone.LEFT, Zone.RIGHT):
        raise ValueError(f"no vector field attached to zone {zone}")
    a = 1.0 if zone is Zone.RIGHT else -1.0
    if p.slow is SlowDynamics.DECOUPLED:
        return ZoneSystem(zone, a, 0.0, -p.eps, p.I, p.eps * p.b)
    return ZoneSystem(zone, a, p.eps, 0.0, p.I, -p.eps * p.b)


def zone_for_state(s, p: ModelParams) -> Zone:
    """Zone whose flow governs the motion leaving ``s``.

    On the switching line both fields agree, so the sign of ``v'`` decides;
    at the corner the sign of ``v''`` does.
    """
    v, w = s
    if not (math.isfinite(v) and math.isfinite(w)):
        raise InvalidStateError(f"non-finite state {(v, w)}")
    if v < 0:
        return Zone.LEFT
    if v > 0:
        return Zone.RIGHT
    dv = p.I - w
    if dv > 0:
        return Zone.RIGHT
    if dv < 0:
        return Zone.LEFT
    dw = zone_system(Zone.RIGHT, p).rhs(s)[1]
    return Zone.RIGHT if -dw >= 0 else Zone.LEFT


def vector_field(s, p: ModelParams) -> tuple[float, float]:
    v, w = s
    if p.slow is SlowDynamics.DECOUPLED:
        dw = p.eps * (p.b - w)
    else:
        dw = p.eps * (v - p.b)
    return (abs(v) - w + p.I, dw)


def flow(s0, t: float, p: ModelParams, zone: Zone | None = None) -> State:
    if zone is None:
        zone = zone_for_state(s0, p)
    return zone_system(zone, p).flow(s0, t)


def flow_plus(s0, t: float, p: ModelParams) -> State:
    """Right-zone flow (``v >= 0``) evaluated at time ``t``; no zone checks."""
    return zone_system(Zone.RIGHT, p).flow(s0, t)


def flow_minus(s0, t: float, p: ModelParams) -> State:
    """Left-zone flow (``v < 0``) evaluated at time ``t``; no zone checks."""
    return zone_system(Zone.LEFT, p).flow(s0, t)


def propagator(zone: Zone, t: float, p: ModelParams) -> np.ndarray:
    return zone_system(zone, p).propagator(t)


# -- crossings -----------------------------------------------------------------


class TargetLine(str, Enum):
    SWITCHING = "switching"
    THRESHOLD = "threshold"
    RESET_LINE = "reset_line"
    SLOW_NULLCLINE = "slow_nullcline"  # v' = 0, i.e. the critical manifold


class Direction(str, Enum):
    ANY = "any"
    INCREASING = "increasing"
    DECREASING = "decreasing"


class CrossingKind(str, Enum):
    CROSSING = "crossing"
    GRAZING = "grazing"
    NONE = "none"


@dataclass(frozen=True)
class CrossingQuery:
    target: TargetLine
    t_max: float = math.inf
    direction: Direction = Direction.ANY

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")


@dataclass(frozen=True)
class Crossing:
    kind: CrossingKind
    t: float = math.nan
    state: State | None = None
    # True when the search stopped because the growing mode would overflow
    diverged: bool = False

    @property
    def found(self) -> bool:
        return self.kind is CrossingKind.CROSSING


def line_value(target: TargetLine, p: ModelParams) -> float:
    if target is TargetLine.SWITCHING:
        return 0.0
    if target is TargetLine.THRESHOLD:
        return p.v_thr
    if target is TargetLine.RESET_LINE:
        return p.v_res
    raise ValueError(f"{target} is not a vertical line")


def first_crossing(s0, q: CrossingQuery, p: ModelParams, zone: Zone | None = None) -> Crossing:
    """First time in ``(0, t_max]`` at which the zone flow reaches a line.

    The zone is inferred from ``s0`` unless given.  The state of a
    crossing is snapped onto the target line exactly.  A critical point of
    ``v(t)`` lying within ``graze_tol`` of the line is reported as grazing.
    """
    s0 = State(float(s0[0]), float(s0[1]))
    s0.check()
    if zone is None:
        zone = zone_for_state(s0, p)
    sys_ = zone_system(zone, p)
    traj = sys_.trajectory(s0)
    t_cap = sys_.max_time()
    t_max = min(q.t_max, p.tol.horizon, t_cap)
    diverged = min(q.t_max, p.tol.horizon) > t_cap

    if q.target is TargetLine.SLOW_NULLCLINE:
        for tc in traj.critical_times(t_max):
            return Crossing(CrossingKind.CROSSING, tc, traj.state(tc))
        return Crossing(CrossingKind.NONE, diverged=diverged)

    target = line_value(q.target, p)
    tol = p.tol

    def g(t):
        return traj.v(t) - target

    a = 0.0
    ga = s0.v - target
    on_line = abs(ga) <= tol.root_tol
    bounds = _interval_ends(traj, t_max)
    for b, is_crit in bounds:
        gb = g(b)
        if not math.isfinite(gb):
            return Crossing(CrossingKind.NONE, diverged=True)
        if is_crit and abs(gb) <= tol.graze_tol:
            return Crossing(CrossingKind.GRAZING, b, State(target, traj.state(b).w))
        skip = a == 0.0 and on_line
        if not skip and ga * gb < 0:
            rising = gb > ga
            if (
                q.direction is Direction.ANY
                or (q.direction is Direction.INCREASING and rising)
                or (q.direction is Direction.DECREASING and not rising)
            ):
                t = brentq(g, a, b, xtol=tol.time_tol, rtol=4 * np.finfo(float).eps, maxiter=200)
                return Crossing(CrossingKind.CROSSING, t, State(target, traj.state(t).w))
        elif not skip and gb == 0.0 and not is_crit:
            return Crossing(CrossingKind.CROSSING, b, State(target, traj.state(b).w))
        a, ga = b, gb
    return Crossing(CrossingKind.NONE, diverged=diverged)


def _interval_ends(traj: _ModalTrajectory, t_max: float) -> Iterator[tuple[float, bool]]:
    """Right ends of the monotone pieces of ``v(t)`` on ``(0, t_max]``."""
    for tc in traj.critical_times(t_max):
        yield tc, True
    yield t_max, False
