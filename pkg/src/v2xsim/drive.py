"""Rule-based waypoint planner and lateral/longitudinal PID control."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import wrap_angle

T_F = 10
T_D = 5


class RouteLostError(RuntimeError):
    """Ego drifted further from the route than the planner tolerates."""


class Route:
    """Polyline with arc-length parametrisation."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError("route needs at least two points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], seg_len > 0])
        pts = pts[keep]
        self.points = pts
        self._seg = np.diff(pts, axis=0)
        self._seg_len = np.hypot(self._seg[:, 0], self._seg[:, 1])
        self._s = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def length(self):
        return float(self._s[-1])

    def project(self, x, y):
        """Arc length of the closest route point and the (unsigned) distance to it."""
        p = np.array([x, y])
        rel = p - self.points[:-1]
        t = np.clip((rel * self._seg).sum(axis=1) / self._seg_len ** 2, 0.0, 1.0)
        closest = self.points[:-1] + t[:, None] * self._seg
        d = np.hypot(*(closest - p).T)
        i = int(np.argmin(d))
        return float(self._s[i] + t[i] * self._seg_len[i]), float(d[i])

    def project_many(self, xy):
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        rel = xy[:, None, :] - self.points[None, :-1, :]
        t = np.clip((rel * self._seg[None]).sum(axis=2) / self._seg_len ** 2, 0.0, 1.0)
        closest = self.points[None, :-1, :] + t[..., None] * self._seg[None]
        d = np.hypot(closest[..., 0] - xy[:, None, 0], closest[..., 1] - xy[:, None, 1])
        i = np.argmin(d, axis=1)
        rows = np.arange(len(xy))
        return self._s[i] + t[rows, i] * self._seg_len[i], d[rows, i]

    def point_at(self, s):
        s = min(max(float(s), 0.0), self.length)
        i = int(np.searchsorted(self._s, s, side="right") - 1)
        i = min(max(i, 0), len(self._seg_len) - 1)
        t = (s - self._s[i]) / self._seg_len[i]
        return self.points[i] + t * self._seg[i]


@dataclass(frozen=True)
class Plan:
    waypoints: np.ndarray  # (T_f, 2)
    dt: float = 0.1
    blocked: bool = False
    block_distance: float = math.inf

    @property
    def implied_speed(self):
        w = self.waypoints
        if len(w) < 2:
            return 0.0
        return float(np.hypot(*(w[-1] - w[0])) / ((len(w) - 1) * self.dt))


@dataclass(frozen=True)
class Action:
    steer: float = 0.0
    throttle: float = 0.0
    brake: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steer", float(min(max(self.steer, -1.0), 1.0)))
        object.__setattr__(self, "brake", 1 if self.brake else 0)
        thr = 0.0 if self.brake else float(min(max(self.throttle, 0.0), 1.0))
        object.__setattr__(self, "throttle", thr)


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.7
    max_steer_rad: float = 0.6
    max_accel: float = 3.0
    max_brake: float = 7.0
    drag: float = 0.05  # 1/s, linear speed damping when coasting or driving


def bicycle_step(agent, action: Action | None, dt, p: VehicleParams = VehicleParams()):
    """Kinematic bicycle update of ``agent`` in place; ``None`` holds speed."""
    if action is None:
        a = 0.0
        delta = 0.0
    else:
        a = action.throttle * p.max_accel - p.drag * agent.speed
        if action.brake:
            a = -p.max_brake
        delta = action.steer * p.max_steer_rad
    agent.speed = max(0.0, agent.speed + a * dt)
    agent.yaw = wrap_angle(agent.yaw + agent.speed / p.wheelbase * math.tan(delta) * dt)
    agent.x += agent.speed * math.cos(agent.yaw) * dt
    agent.y += agent.speed * math.sin(agent.yaw) * dt


@dataclass(frozen=True)
class PlannerConfig:
    t_f: int = T_F
    t_d: int = T_D
    dt_s: float = 0.1
    ego_width: float = 1.8
    corridor_margin: float = 0.5  # m beyond half the ego width
    corridor_length: float = 15.0  # m ahead of the ego centre
    max_route_offset: float = 6.0


def occupied_points(occupancy, spec):
    """World coordinates of occupied cell centres."""
    ys, xs = np.nonzero(occupancy.values[:, :, 0] > 0.5)
    return np.stack([spec.origin_x + (xs + 0.5) * spec.resolution,
                     spec.origin_y + (ys + 0.5) * spec.resolution], axis=1)


def corridor_block(occupancy, spec, route: Route, s_ego, cfg: PlannerConfig):
    """Distance along the route to the nearest occupied cell inside the corridor, else inf."""
    pts = occupied_points(occupancy, spec)
    if len(pts) == 0:
        return math.inf
    near = np.hypot(*(pts - route.point_at(s_ego)).T) <= cfg.corridor_length + cfg.ego_width + cfg.corridor_margin
    pts = pts[near]
    if len(pts) == 0:
        return math.inf
    s, d = route.project_many(pts)
    half = 0.5 * cfg.ego_width + cfg.corridor_margin + 0.5 * spec.resolution
    ahead = s - s_ego
    hit = (d <= half) & (ahead >= 0.0) & (ahead <= cfg.corridor_length)
    return float(ahead[hit].min()) if hit.any() else math.inf


def plan(occupancy_frames, route: Route, ego_pose, target_speed, spec, cfg: PlannerConfig = PlannerConfig()) -> Plan:
    """T_f waypoints along the route, or a braking plan if the corridor ahead is occupied.

    Only the latest of the occupancy frames is checked.
    """
    x, y = ego_pose[0], ego_pose[1]
    s_ego, off = route.project(x, y)
    if off > cfg.max_route_offset:
        raise RouteLostError(f"ego is {off:.2f} m from the route (limit {cfg.max_route_offset} m)")
    frames = list(occupancy_frames)
    block = corridor_block(frames[-1], spec, route, s_ego, cfg) if frames else math.inf
    speed = 0.0 if math.isfinite(block) else float(target_speed)
    spacing = speed * cfg.dt_s
    wps = np.array([route.point_at(s_ego + k * spacing) for k in range(1, cfg.t_f + 1)])
    return Plan(wps, cfg.dt_s, blocked=math.isfinite(block), block_distance=block)


@dataclass
class PidState:
    kp: float
    ki: float
    kd: float
    i_limit: float = 2.0
    integral: float = 0.0
    prev_error: float | None = None

    def update(self, error, dt):
        self.integral = min(max(self.integral + error * dt, -self.i_limit), self.i_limit)
        deriv = 0.0 if self.prev_error is None else (error - self.prev_error) / dt
        self.prev_error = error
        return self.kp * error + self.ki * self.integral + self.kd * deriv


@dataclass
class ControllerState:
    lateral: PidState = field(default_factory=lambda: PidState(1.0, 0.0, 0.2))
    longitudinal: PidState = field(default_factory=lambda: PidState(0.5, 0.05, 0.0))
    lookahead_m: float = 3.0
    brake_threshold: float = 0.3  # demanded deceleration (PID units) before braking


def control(plan: Plan, ego_pose, ego_speed, pid: ControllerState, dt) -> Action:
    """Steer toward a lookahead waypoint; track the plan's implied speed."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, y, yaw = ego_pose
    heading_err = 0.0
    wps = plan.waypoints
    dists = np.hypot(wps[:, 0] - x, wps[:, 1] - y)
    far = np.nonzero(dists >= pid.lookahead_m)[0]
    k = int(far[0]) if len(far) else len(wps) - 1
    if dists[k] > 0.5:
        heading_err = wrap_angle(math.atan2(wps[k, 1] - y, wps[k, 0] - x) - yaw)
    steer = pid.lateral.update(heading_err, dt)

    v_ref = plan.implied_speed
    u = pid.longitudinal.update(v_ref - ego_speed, dt)
    brake = u < -pid.brake_threshold or (v_ref == 0.0 and ego_speed > 0.05)
    if brake:
        return Action(steer=steer, throttle=0.0, brake=1)
    return Action(steer=steer, throttle=max(u, 0.0), brake=0)
