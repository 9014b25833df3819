"""Piecewise-linear adaptive integrate-and-fire model.

The subthreshold dynamics is

    v' = |v| - w + I
    w' = eps * F(v, w)

with the reset ``(v, w) -> (v_res, w + k)`` applied as soon as ``v`` reaches
``v_thr``.  Two linear choices of ``F`` are supported, see
:class:`SlowDynamics`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple

from .errors import InvalidParameterError, InvalidStateError

__all__ = [
    "SlowDynamics",
    "Tolerances",
    "ModelParams",
    "State",
    "Zone",
    "Stability",
    "Equilibrium",
    "FastBifurcations",
    "ManifoldGeometry",
    "classify_zone",
    "fast_subsystem_equilibria",
    "fast_subsystem_bifurcations",
    "slow_flow_equilibria",
    "manifold_geometry",
]


class SlowDynamics(str, Enum):
    """Choice of the adaptation dynamics ``F``."""

    DECOUPLED = "decoupled"  # F(v, w) = b - w
    COUPLED = "coupled"  # F(v, w) = v - b


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by all solvers.

    root_tol
        Boundary membership and crossing residual in ``v``.
    time_tol
        Absolute tolerance on located crossing times.
    graze_tol
        A critical point of ``v(t)`` within this distance of a line is a
        tangency.
    newton_tol
        Convergence threshold of the Newton solvers.
    max_iter
        Iteration cap of the Newton solvers.
    horizon
        Longest flight considered for a single flow segment.
    """

    root_tol: float = 1e-10
    time_tol: float = 1e-12
    graze_tol: float = 1e-10
    newton_tol: float = 1e-11
    max_iter: int = 60
    horizon: float = 1e5

    def __post_init__(self):
        for name in ("root_tol", "time_tol", "graze_tol", "newton_tol", "horizon"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidParameterError(f"tolerance {name} must be positive, got {val!r}")
        if self.max_iter < 1:
            raise InvalidParameterError("max_iter must be at least 1")


@dataclass(frozen=True)
class ModelParams:
    """Scalar parameters of the AIF model.

    ``I`` is the applied current, ``eps`` the timescale ratio, ``b`` the
    offset of the adaptation dynamics, ``k`` the adaptation increment at each
    reset.
    """

    I: float = 0.1
    eps: float = 0.01
    b: float = 0.0
    v_res: float = 0.2
    v_thr: float = 1.0
    k: float = 0.05
    slow: SlowDynamics = SlowDynamics.DECOUPLED
    tol: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        object.__setattr__(self, "slow", SlowDynamics(self.slow))
        for name in ("I", "eps", "b", "v_res", "v_thr", "k"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise InvalidParameterError(f"parameter {name} must be finite, got {val!r}")
        if self.eps <= 0:
            raise InvalidParameterError(f"eps must be positive, got {self.eps}")
        if self.v_res <= 0:
            raise InvalidParameterError(f"v_res must be positive, got {self.v_res}")
        if self.v_thr <= self.v_res:
            raise InvalidParameterError(
                f"v_thr must exceed v_res, got v_thr={self.v_thr}, v_res={self.v_res}"
            )
        if self.k < 0:
            raise InvalidParameterError(f"k must be non-negative, got {self.k}")

    def with_(self, **changes) -> ModelParams:
        return replace(self, **changes)

    def require_b_zero(self, what: str = "this analysis"):
        if self.slow is not SlowDynamics.DECOUPLED or self.b != 0.0:
            raise InvalidParameterError(f"{what} requires decoupled slow dynamics with b = 0")

    @property
    def w_slow_manifold_at_reset(self) -> float:
        """``w`` where the repelling slow manifold meets ``{v = v_res}``."""
        return manifold_geometry(self).s_eps_plus(self.v_res)

    def as_dict(self) -> dict:
        return {
            "I": self.I,
            "eps": self.eps,
            "b": self.b,
            "v_res": self.v_res,
            "v_thr": self.v_thr,
            "k": self.k,
            "slow": self.slow.value,
            "tol": {
                "root_tol": self.tol.root_tol,
                "time_tol": self.tol.time_tol,
                "graze_tol": self.tol.graze_tol,
                "newton_tol": self.tol.newton_tol,
                "max_iter": self.tol.max_iter,
                "horizon": self.tol.horizon,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> ModelParams:
        d = dict(d)
        tol = d.pop("tol", None)
        if tol is not None and not isinstance(tol, Tolerances):
            tol = Tolerances(**tol)
        if tol is not None:
            d["tol"] = tol
        return cls(**d)


class State(NamedTuple):
    """A point ``(v, w)`` of the phase plane."""

    v: float
    w: float

    def check(self) -> State:
        if not (math.isfinite(self.v) and math.isfinite(self.w)):
            raise InvalidStateError(f"non-finite state {tuple(self)}")
        return self


class Zone(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    ON_SWITCHING = "on_switching"
    ON_THRESHOLD = "on_threshold"


class Stability(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    SEMISTABLE = "semistable"


@dataclass(frozen=True)
class Equilibrium:
    state: State
    stability: Stability
    admissible: bool = True  # False when v lies beyond the threshold


@dataclass(frozen=True)
class FastBifurcations:
    saddle_node_w: float
    homoclinic_w: float
    # w-interval on which the fast subsystem has its stable reset-induced cycle
    limit_cycle_interval: tuple[float, float]


@dataclass(frozen=True)
class ManifoldGeometry:
    """Critical manifold branches and the slow manifolds as lines ``w(v)``.

    The slow manifolds are the slow eigenlines of each linear zone.  They
    exist only when the zone matrix has real eigenvalues; otherwise the
    corresponding slope is ``None``.
    """

    I: float
    plus_slope: float | None
    plus_intercept: float | None
    minus_slope: float | None
    minus_intercept: float | None

    def s0_plus(self, v):
        return v + self.I

    def s0_minus(self, v):
        return -v + self.I

    def s_eps_plus(self, v):
        if self.plus_slope is None:
            raise InvalidParameterError("right zone has no real slow eigenline")
        return self.plus_slope * v + self.plus_intercept

    def s_eps_minus(self, v):
        if self.minus_slope is None:
            raise InvalidParameterError("left zone has no real slow eigenline")
        return self.minus_slope * v + self.minus_intercept

    @property
    def corner(self) -> State:
        return State(0.0, self.I)


def classify_zone(s: State, p: ModelParams) -> Zone:
    State(*s).check()
    tol = p.tol.root_tol
    if abs(s[0]) <= tol:
        return Zone.ON_SWITCHING
    if abs(s[0] - p.v_thr) <= tol:
        return Zone.ON_THRESHOLD
    return Zone.LEFT if s[0] < 0 else Zone.RIGHT


def fast_subsystem_equilibria(w: float, p: ModelParams) -> list[Equilibrium]:
    """Equilibria of ``v' = |v| - w + I`` with ``w`` frozen.

    On the corner ``w = I`` the single equilibrium attracts from the left and
    repels to the right; it is reported as semistable.
    """
    d = w - p.I
    if d < 0:
        return []
    if d == 0:
        return [Equilibrium(State(0.0, w), Stability.SEMISTABLE)]
    return [
        Equilibrium(State(-d, w), Stability.STABLE),
        Equilibrium(State(d, w), Stability.UNSTABLE, admissible=d <= p.v_thr),
    ]


def fast_subsystem_bifurcations(p: ModelParams) -> FastBifurcations:
    hom = p.v_res + p.I
    return FastBifurcations(
        saddle_node_w=p.I,
        homoclinic_w=hom,
        limit_cycle_interval=(-math.inf, hom),
    )


def slow_flow_equilibria(p: ModelParams) -> list[Equilibrium]:
    """Equilibria of the reduced flow on the critical manifold."""
    if p.slow is SlowDynamics.DECOUPLED:
        # w' = b - w restricted to w = |v| + I
        d = p.b - p.I
        if d < 0:
            return []
        if d == 0:
            return [Equilibrium(State(0.0, p.I), Stability.SEMISTABLE)]
        return [
            Equilibrium(State(-d, p.b), Stability.STABLE),
            Equilibrium(State(d, p.b), Stability.STABLE, admissible=d <= p.v_thr),
        ]
    # w' = v - b on w = |v| + I; on the repelling branch dv/dt has the sign
    # of (v - b), so the point moves away from v = b when b > 0
    v = p.b
    if v > 0:
        stab = Stability.UNSTABLE
    elif v < 0:
        stab = Stability.STABLE
    else:
        stab = Stability.SEMISTABLE
    return [Equilibrium(State(v, abs(v) + p.I), stab, admissible=v <= p.v_thr)]


def manifold_geometry(p: ModelParams) -> ManifoldGeometry:
    # imported here to keep the module import graph acyclic
    from .flows import zone_system

    lines = []
    for zone in (Zone.RIGHT, Zone.LEFT):
        sys_ = zone_system(zone, p)
        line = sys_.slow_line()
        lines.append(line if line is not None else (None, None))
    (ps, pi), (ms, mi) = lines
    return ManifoldGeometry(p.I, ps, pi, ms, mi)
