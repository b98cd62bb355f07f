"""Event-driven billiards with sliding friction and restitution.

Balls are equal-mass discs on an axis-aligned table. Between events every
moving ball decelerates at mu*g along its direction of travel, so positions
are quadratic in time and each event time is a polynomial root:

* wall contact: quadratic in t per axis
* ball-ball contact: |d(t)|^2 = (2r)^2 is a quartic in t (the two balls
  decelerate along different directions)
* a ball coming to rest: linear in t

Key states (all positions and velocities) are recorded at launch, after
each collision, and at final rest, then padded with the rest state or
truncated to ``keyframe_count`` frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ControlParams, SimulationError, Trajectory

SYSTEM_ID_2D = "billiards2d"
SYSTEM_ID_4D = "billiards4d"

TIE_TOL = 1e-9
_MAX_EVENTS = 2000


def _triangle(apex=(1.5, 0.5), radius=0.03, gap=0.004):
    d = 2.0 * radius + gap
    ax, ay = apex
    return (
        (ax, ay),
        (ax + d * math.sqrt(3.0) / 2.0, ay - d / 2.0),
        (ax + d * math.sqrt(3.0) / 2.0, ay + d / 2.0),
    )


@dataclass(frozen=True)
class BilliardsSpec:
    table: tuple[float, float, float, float] = (0.0, 2.0, 0.0, 1.0)  # xmin, xmax, ymin, ymax
    ball_radius: float = 0.03
    fixed_ball_positions: tuple[tuple[float, float], ...] = _triangle()
    friction_mu: float = 0.5
    restitution_e: float = 0.8
    gravity: float = 1.0
    keyframe_count: int = 10
    dims: int = 2
    cue_x: float = 0.2  # fixed in the 2-D problem
    cue_speed: float = 2.0  # fixed in the 2-D problem
    alpha_bounds: tuple[float, float] = (-0.3, 0.5)
    y_bounds: tuple[float, float] = (0.2, 0.8)
    x_bounds: tuple[float, float] = (0.1, 0.5)
    speed_bounds: tuple[float, float] = (1.0, 3.0)

    def __post_init__(self):
        for name in ("table", "alpha_bounds", "y_bounds", "x_bounds", "speed_bounds"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        fixed = tuple(tuple(float(c) for c in p) for p in self.fixed_ball_positions)
        object.__setattr__(self, "fixed_ball_positions", fixed)
        x0, x1, y0, y1 = self.table
        r = self.ball_radius
        if not (x0 < x1 and y0 < y1) or r <= 0:
            raise ValueError("table must be a proper rectangle and ball_radius positive")
        if not 0.0 < self.restitution_e <= 1.0:
            raise ValueError("restitution_e must lie in (0, 1]")
        if self.friction_mu < 0 or self.gravity <= 0:
            raise ValueError("friction_mu must be >= 0 and gravity > 0")
        if self.dims not in (2, 4):
            raise ValueError("dims must be 2 or 4")
        if self.keyframe_count < 2:
            raise ValueError("keyframe_count must be at least 2")
        pts = np.array(fixed).reshape(-1, 2)
        if np.any(pts[:, 0] < x0 + r) or np.any(pts[:, 0] > x1 - r) or np.any(pts[:, 1] < y0 + r) or np.any(pts[:, 1] > y1 - r):
            raise ValueError("fixed balls must lie inside the table")
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.hypot(*(pts[i] - pts[j])) < 2 * r:
                    raise ValueError(f"fixed balls {i} and {j} overlap")

    @property
    def system_id(self) -> str:
        return SYSTEM_ID_2D if self.dims == 2 else SYSTEM_ID_4D

    @property
    def ball_count(self) -> int:
        return 1 + len(self.fixed_ball_positions)

    @property
    def state_size(self) -> int:
        return 4 * self.ball_count

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("alpha", "y0") if self.dims == 2 else ("y0", "x0", "alpha", "v0")

    @property
    def bounds(self) -> list[list[float]]:
        if self.dims == 2:
            return [list(self.alpha_bounds), list(self.y_bounds)]
        return [list(self.y_bounds), list(self.x_bounds), list(self.alpha_bounds), list(self.speed_bounds)]

    def cue_state(self, values) -> tuple[np.ndarray, np.ndarray]:
        """Cue (position, velocity) from a parameter vector."""
        v = np.asarray(values, dtype=np.float64)
        if self.dims == 2:
            alpha, y, x, speed = v[0], v[1], self.cue_x, self.cue_speed
        else:
            y, x, alpha, speed = v
        return np.array([x, y]), speed * np.array([math.cos(alpha), math.sin(alpha)])

    def to_dict(self) -> dict:
        return {
            "table": list(self.table),
            "ball_radius": self.ball_radius,
            "fixed_ball_positions": [list(p) for p in self.fixed_ball_positions],
            "friction_mu": self.friction_mu,
            "restitution_e": self.restitution_e,
            "gravity": self.gravity,
            "keyframe_count": self.keyframe_count,
            "dims": self.dims,
            "cue_x": self.cue_x,
            "cue_speed": self.cue_speed,
            "alpha_bounds": list(self.alpha_bounds),
            "y_bounds": list(self.y_bounds),
            "x_bounds": list(self.x_bounds),
            "speed_bounds": list(self.speed_bounds),
        }


def _roots_in(coeffs, lo: float, hi: float) -> list[float]:
    """Real roots of a polynomial inside [lo, hi], ascending, Newton-polished."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=np.float64), "f")
    if c.size <= 1:
        return []
    if c.size == 2:
        cand = [-c[1] / c[0]]
    elif c.size == 3:
        a, b, cc = c
        disc = b * b - 4 * a * cc
        if disc < 0:
            if disc > -1e-14 * max(b * b, 1e-300):
                disc = 0.0
            else:
                return []
        sq = math.sqrt(disc)
        qq = -0.5 * (b + math.copysign(sq, b))
        cand = []
        if qq != 0:
            cand.append(cc / qq)
        if a != 0 and qq != 0:
            cand.append(qq / a)
        elif qq == 0:
            cand.append(-b / (2 * a))
    else:
        roots = np.roots(c)
        cand = [r.real for r in roots if abs(r.imag) <= 1e-6 * max(1.0, abs(r.real))]
    dc = np.polyder(c)
    out = []
    for t in cand:
        for _ in range(3):
            d = np.polyval(dc, t)
            if d == 0:
                break
            t = t - np.polyval(c, t) / d
        if lo <= t <= hi:
            out.append(float(t))
    return sorted(out)


class _Table:
    """Mutable simulation state for one shot."""

    def __init__(self, spec: BilliardsSpec, pos: np.ndarray, vel: np.ndarray):
        self.spec = spec
        self.pos = pos
        self.vel = vel
        self.t = 0.0
        self.decel = spec.friction_mu * spec.gravity
        self.events: list[dict] = []

    def speed(self, i: int) -> float:
        return math.hypot(self.vel[i, 0], self.vel[i, 1])

    def acc(self, i: int) -> np.ndarray:
        s = self.speed(i)
        if s == 0.0 or self.decel == 0.0:
            return np.zeros(2)
        return -self.decel * self.vel[i] / s

    def stop_time(self, i: int) -> float:
        s = self.speed(i)
        if s == 0.0:
            return math.inf
        return math.inf if self.decel == 0.0 else s / self.decel

    def next_event(self):
        n = self.pos.shape[0]
        spec = self.spec
        r = spec.ball_radius
        xmin, xmax, ymin, ymax = spec.table
        accs = [self.acc(i) for i in range(n)]
        stops = [self.stop_time(i) for i in range(n)]
        cands = []  # (time, order key, kind, i, j/axis info)
        for i in range(n):
            if stops[i] < math.inf:
                cands.append((stops[i], (2, i, 0), "stop", i, None))
        for i in range(n):
            if self.speed(i) == 0.0:
                continue
            for axis, lo, hi in ((0, xmin + r, xmax - r), (1, ymin + r, ymax - r)):
                v = self.vel[i, axis]
                if v == 0.0:
                    continue
                wall = lo if v < 0 else hi
                a = accs[i][axis]
                roots = _roots_in([0.5 * a, v, self.pos[i, axis] - wall], 0.0, stops[i])
                if roots:
                    cands.append((roots[0], (1, i, axis), "wall", i, (axis, wall)))
        diam2 = (2 * r) ** 2
        for i in range(n):
            for j in range(i + 1, n):
                if self.speed(i) == 0.0 and self.speed(j) == 0.0:
                    continue
                horizon = min(stops[i], stops[j])
                d0 = self.pos[j] - self.pos[i]
                dv = self.vel[j] - self.vel[i]
                da = 0.5 * (accs[j] - accs[i])
                if horizon < math.inf:
                    reach = math.hypot(*dv) * horizon + math.hypot(*da) * horizon**2
                    if math.hypot(*d0) - reach > 2 * r:
                        continue
                coeffs = [
                    da @ da,
                    2.0 * (da @ dv),
                    dv @ dv + 2.0 * (da @ d0),
                    2.0 * (dv @ d0),
                    d0 @ d0 - diam2,
                ]
                for t in _roots_in(coeffs, -1e-12, horizon):
                    dt_ = max(t, 0.0)
                    d = d0 + dv * dt_ + da * dt_**2
                    ddot = dv + 2.0 * da * dt_
                    if d @ ddot < 0.0:
                        cands.append((dt_, (0, i, j), "ball", i, j))
                        break
        if not cands:
            return None
        tmin = min(c[0] for c in cands)
        ties = [c for c in cands if c[0] <= tmin + TIE_TOL]
        return min(ties, key=lambda c: c[1])

    def advance(self, dt: float) -> None:
        if dt <= 0.0:
            return
        n = self.pos.shape[0]
        for i in range(n):
            s = self.speed(i)
            if s == 0.0:
                continue
            a = self.acc(i)
            self.pos[i] = self.pos[i] + self.vel[i] * dt + 0.5 * a * dt * dt
            new_speed = s - self.decel * dt
            self.vel[i] = self.vel[i] * (max(new_speed, 0.0) / s)
        self.t += dt

    def resolve(self, event) -> bool:
        """Apply the event; True if it is a collision (key state)."""
        _, _, kind, i, extra = event
        e = self.spec.restitution_e
        if kind == "stop":
            self.vel[i] = 0.0
            return False
        if kind == "wall":
            axis, wall = extra
            self.pos[i, axis] = wall
            pre = self.vel[i].copy()
            self.vel[i, axis] = -e * self.vel[i, axis]
            self.events.append({"t": self.t, "kind": "wall", "i": i, "axis": axis, "pre": pre, "post": self.vel[i].copy()})
            return True
        j = extra
        normal = self.pos[j] - self.pos[i]
        normal = normal / math.hypot(*normal)
        vi, vj = self.vel[i].copy(), self.vel[j].copy()
        a_n, b_n = vi @ normal, vj @ normal
        new_a = 0.5 * ((1.0 - e) * a_n + (1.0 + e) * b_n)
        new_b = 0.5 * ((1.0 + e) * a_n + (1.0 - e) * b_n)
        self.vel[i] = vi + (new_a - a_n) * normal
        self.vel[j] = vj + (new_b - b_n) * normal
        self.events.append(
            {
                "t": self.t,
                "kind": "ball",
                "i": i,
                "j": j,
                "normal": normal,
                "pre": (vi, vj),
                "post": (self.vel[i].copy(), self.vel[j].copy()),
            }
        )
        return True

    def key_state(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel], axis=1).ravel()


def initial_table(spec: BilliardsSpec, values) -> tuple[np.ndarray, np.ndarray]:
    cue_pos, cue_vel = spec.cue_state(values)
    fixed = np.array(spec.fixed_ball_positions, dtype=np.float64).reshape(-1, 2)
    for k, p in enumerate(fixed):
        if math.hypot(*(p - cue_pos)) < 2.0 * spec.ball_radius:
            raise SimulationError(f"cue ball at {cue_pos.tolist()} overlaps fixed ball {k}")
    xmin, xmax, ymin, ymax = spec.table
    r = spec.ball_radius
    if not (xmin + r <= cue_pos[0] <= xmax - r and ymin + r <= cue_pos[1] <= ymax - r):
        raise SimulationError(f"cue ball at {cue_pos.tolist()} is not on the table")
    pos = np.vstack([cue_pos, fixed])
    vel = np.zeros_like(pos)
    vel[0] = cue_vel
    return pos, vel


def billiards_simulate(spec: BilliardsSpec, cue: ControlParams | np.ndarray) -> Trajectory:
    values = cue.values if isinstance(cue, ControlParams) else np.asarray(cue, dtype=np.float64)
    if isinstance(cue, ControlParams):
        cue.require_within()
    if values.shape != (spec.dims,):
        raise SimulationError(f"expected {spec.dims} cue parameters, got {values.shape}")
    pos, vel = initial_table(spec, values)
    table = _Table(spec, pos, vel)
    frames = [table.key_state()]
    times = [0.0]
    at_rest = False
    for _ in range(_MAX_EVENTS):
        if len(frames) >= spec.keyframe_count:
            break
        ev = table.next_event()
        if ev is None:
            at_rest = True
            break
        table.advance(ev[0])
        if table.resolve(ev):
            if table.t - times[-1] <= 1e-12:
                frames[-1] = table.key_state()  # simultaneous collisions share one key state
            else:
                frames.append(table.key_state())
                times.append(table.t)
    else:
        raise SimulationError("billiards event budget exhausted")
    if at_rest and len(frames) < spec.keyframe_count:
        if table.t > times[-1]:
            frames.append(table.key_state())
            times.append(table.t)
        else:
            frames[-1] = table.key_state()
    key_count = len(frames)
    while len(frames) < spec.keyframe_count:
        frames.append(frames[-1].copy())
        times.append(times[-1] + 1.0)
    return Trajectory(
        np.array(frames),
        np.array(times),
        spec.system_id,
        {"key_states": key_count, "events": table.events, "rest_time": table.t if at_rest else None},
    )
