"""Scenario state, kinematics and the oracle sensor.

The sensor stands in for a learned encoder/decoder: it rasterises the
objects an agent can actually see into per-class heatmaps, a regression map
and a pseudo-feature grid whose layout the fusion decoder inverts exactly.

Feature layout for ``C`` classes and depth ``D``::

    [0, C)          heatmap, one channel per class
    [C, 9C)         8 regression channels per class, each multiplied by the
                    cell's heat: dx, dy (m, object centre minus cell centre),
                    log length, log width, cos yaw, sin yaw, vx, vy
    [9C, D)         zero
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import box_corners, segment_hits_box, wrap_angle
from .grids import DEFAULT_RESOLUTION, Grid

CLASSES = ("vehicle", "bicycle", "pedestrian")
NUM_CLASSES = len(CLASSES)
REG_PER_CLASS = 8
FEATURE_DIM = 64
ROLES = ("ego", "vehicle", "rsu")


def class_index(name):
    try:
        return CLASSES.index(name)
    except ValueError:
        raise ValueError(f"unknown object class {name!r}; expected one of {CLASSES}") from None


def reg_slice(c, num_classes=NUM_CLASSES):
    lo = num_classes + REG_PER_CLASS * c
    return slice(lo, lo + REG_PER_CLASS)


@dataclass(frozen=True)
class GridSpec:
    """Placement of the shared global BEV grid; cell (0, 0) has its lower-left corner at origin."""

    height: int
    width: int
    resolution: float = DEFAULT_RESOLUTION
    origin_x: float = 0.0
    origin_y: float = 0.0

    def cell_of(self, x, y):
        return (int(math.floor((x - self.origin_x) / self.resolution)),
                int(math.floor((y - self.origin_y) / self.resolution)))

    def cell_center(self, ix, iy):
        return (self.origin_x + (ix + 0.5) * self.resolution,
                self.origin_y + (iy + 0.5) * self.resolution)

    def in_grid(self, ix, iy):
        return 0 <= ix < self.width and 0 <= iy < self.height

    def contains(self, x, y):
        return self.in_grid(*self.cell_of(x, y))

    @property
    def origin(self):
        return (self.origin_x, self.origin_y)

    def zeros(self, channels=1):
        return Grid.zeros(self.height, self.width, channels, self.resolution)


@dataclass
class WorldObject:
    id: int
    cls: str
    x: float
    y: float
    yaw: float = 0.0
    length: float = 4.5
    width: float = 1.8
    vx: float = 0.0
    vy: float = 0.0

    def __post_init__(self):
        class_index(self.cls)
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"object {self.id}: extent must be positive")

    @property
    def box(self):
        return (self.x, self.y, self.length, self.width, self.yaw)


@dataclass
class AgentState:
    id: int
    role: str
    x: float
    y: float
    yaw: float = 0.0
    speed: float = 0.0
    sensing_range: float = 50.0
    fov: float = 2.0 * math.pi
    length: float = 4.5
    width: float = 1.8

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}; expected one of {ROLES}")
        if not self.sensing_range > 0:
            raise ValueError("sensing range must be positive")
        if self.role == "rsu":
            self.speed = 0.0

    @property
    def pose(self):
        return (self.x, self.y, self.yaw)

    @property
    def box(self):
        return (self.x, self.y, self.length, self.width, self.yaw)


@dataclass(frozen=True)
class PoseNoise:
    sigma_p: float = 0.0  # m
    sigma_r: float = 0.0  # degrees

    def __post_init__(self):
        if self.sigma_p < 0 or self.sigma_r < 0:
            raise ValueError("pose noise must be non-negative")

    @property
    def concentration(self):
        """von Mises concentration whose normal approximation has std sigma_r degrees."""
        if self.sigma_r == 0:
            return math.inf
        return (180.0 / (math.pi * self.sigma_r)) ** 2


@dataclass
class Event:
    """Set an object's velocity once a time or ego-progress trigger fires."""

    object_id: int
    velocity: tuple
    at_time_s: float | None = None
    ego_x_ge: float | None = None
    fired: bool = False


@dataclass
class World:
    objects: list = field(default_factory=list)
    agents: list = field(default_factory=list)
    occluders: list = field(default_factory=list)
    events: list = field(default_factory=list)
    time_s: float = 0.0

    def agent(self, agent_id):
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"no agent with id {agent_id}")

    def obj(self, object_id):
        for o in self.objects:
            if o.id == object_id:
                return o
        raise KeyError(f"no object with id {object_id}")

    def _fire_events(self, ego):
        for ev in self.events:
            if ev.fired:
                continue
            hit = ev.at_time_s is not None and self.time_s >= ev.at_time_s - 1e-9
            hit = hit or (ev.ego_x_ge is not None and ego is not None and ego.x >= ev.ego_x_ge)
            if hit:
                o = self.obj(ev.object_id)
                o.vx, o.vy = float(ev.velocity[0]), float(ev.velocity[1])
                if o.vx or o.vy:
                    o.yaw = math.atan2(o.vy, o.vx)
                ev.fired = True

    def step(self, dt, actions=None, vehicle_params=None):
        """Advance objects at constant velocity and agents by the kinematic bicycle model.

        Agents without an action hold speed with zero steering; RSUs never move.
        """
        from .drive import VehicleParams, bicycle_step

        if not dt > 0:
            raise ValueError("dt must be positive")
        actions = actions or {}
        params = vehicle_params or VehicleParams()
        ego = next((a for a in self.agents if a.role == "ego"), None)
        self._fire_events(ego)
        for o in self.objects:
            o.x += o.vx * dt
            o.y += o.vy * dt
        for a in self.agents:
            if a.role == "rsu":
                continue
            bicycle_step(a, actions.get(a.id), dt, params)
        self.time_s += dt
        self._fire_events(ego)

    def ground_truth(self, spec: GridSpec):
        """Boxes (class index, cx, cy, length, width, yaw) of objects centred in the grid."""
        return [(class_index(o.cls), o.x, o.y, o.length, o.width, o.yaw)
                for o in sorted(self.objects, key=lambda o: o.id) if spec.contains(o.x, o.y)]


# ---------------------------------------------------------------------------
# visibility
# ---------------------------------------------------------------------------

def visible_objects(world: World, agent: AgentState, exclude=()):
    """Ids of objects the agent can see: in range, inside the FOV, and not occluded.

    An object is occluded only if every ray from the agent to its centre and
    to its four corners crosses another object's footprint or an occluder.
    """
    origin = (agent.x, agent.y)
    seen = []
    for o in world.objects:
        if o.id in exclude:
            continue
        dx, dy = o.x - agent.x, o.y - agent.y
        if math.hypot(dx, dy) > agent.sensing_range:
            continue
        if agent.fov < 2.0 * math.pi and abs(wrap_angle(math.atan2(dy, dx) - agent.yaw)) > 0.5 * agent.fov:
            continue
        blockers = [b.box for b in world.objects if b.id != o.id and b.id not in exclude]
        blockers += list(world.occluders)
        targets = [(o.x, o.y)] + box_corners(*o.box)
        if any(not any(segment_hits_box(origin, t, b) for b in blockers) for t in targets):
            seen.append(o.id)
    return seen


# ---------------------------------------------------------------------------
# oracle sensor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorConfig:
    feature_dim: int = FEATURE_DIM
    blob_sigma_scale: float = 1.0  # sigma = scale * half the smaller extent, in cells
    min_blob_sigma: float = 0.5
    support_eps: float = 0.1  # blob cells below this value are dropped

    def __post_init__(self):
        if self.feature_dim < NUM_CLASSES * (1 + REG_PER_CLASS):
            raise ValueError(f"feature_dim must be >= {NUM_CLASSES * (1 + REG_PER_CLASS)}")


@dataclass(frozen=True, eq=False)
class SensorFrame:
    heatmap: Grid
    regression: Grid
    features: Grid
    labels: np.ndarray  # owner object id per cell, -1 where empty
    visible: tuple
    estimates: dict  # object id -> estimated (x, y, yaw, vx, vy)


def blob_sigma(length, width, resolution, cfg: SensorConfig):
    return max(cfg.min_blob_sigma, cfg.blob_sigma_scale * 0.5 * min(length, width) / resolution)


def noisy_estimates(world: World, agent: AgentState, ids, noise: PoseNoise, rng):
    """Project visible objects into the global frame through a perturbed agent pose."""
    ex = rng.normal(0.0, noise.sigma_p)
    ey = rng.normal(0.0, noise.sigma_p)
    eyaw = rng.normal(0.0, math.radians(noise.sigma_r))
    c, s = math.cos(eyaw), math.sin(eyaw)
    out = {}
    for oid in ids:
        o = world.obj(oid)
        if eyaw == 0.0:
            x, y, vx, vy = o.x + ex, o.y + ey, o.vx, o.vy
        else:
            rx, ry = o.x - agent.x, o.y - agent.y
            x = agent.x + ex + c * rx - s * ry
            y = agent.y + ey + s * rx + c * ry
            vx, vy = c * o.vx - s * o.vy, s * o.vx + c * o.vy
        out[oid] = (x, y, o.yaw + eyaw, vx, vy)
    return out


def rasterize(objects, spec: GridSpec, cfg: SensorConfig = SensorConfig()):
    """Rasterise ``objects`` = [(id, cls, x, y, yaw, length, width, vx, vy)].

    Returns (heatmap (H, W, C), regression (H, W, 8C), labels (H, W)).
    """
    h, w, res = spec.height, spec.width, spec.resolution
    heat = np.zeros((h, w, NUM_CLASSES))
    reg = np.zeros((h, w, NUM_CLASSES * REG_PER_CLASS))
    best = np.zeros((h, w))
    labels = np.full((h, w), -1, dtype=np.int64)
    for oid, cls, x, y, yaw, ln, wd, vx, vy in sorted(objects, key=lambda t: t[0]):
        c = class_index(cls)
        ix, iy = spec.cell_of(x, y)
        sig = blob_sigma(ln, wd, res, cfg)
        r = int(math.floor(sig * math.sqrt(2.0 * math.log(1.0 / cfg.support_eps))))
        x0, x1 = max(0, ix - r), min(w - 1, ix + r)
        y0, y1 = max(0, iy - r), min(h - 1, iy + r)
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1)
        ys = np.arange(y0, y1 + 1)
        d2 = (xs[None, :] - ix) ** 2 + (ys[:, None] - iy) ** 2
        blob = np.exp(-d2 / (2.0 * sig * sig))
        blob[blob < cfg.support_eps] = 0.0
        win = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        heat[win + (c,)] = np.maximum(heat[win + (c,)], blob)
        own = blob > best[win]
        if not own.any():
            continue
        best[win] = np.where(own, blob, best[win])
        labels[win] = np.where(own, oid, labels[win])
        cx = spec.origin_x + (xs + 0.5) * res
        cy = spec.origin_y + (ys + 0.5) * res
        vals = np.empty((len(ys), len(xs), REG_PER_CLASS))
        vals[..., 0] = x - cx[None, :]
        vals[..., 1] = y - cy[:, None]
        vals[..., 2] = math.log(ln)
        vals[..., 3] = math.log(wd)
        vals[..., 4] = math.cos(yaw)
        vals[..., 5] = math.sin(yaw)
        vals[..., 6] = vx
        vals[..., 7] = vy
        vals *= blob[..., None]
        sub = reg[win]
        sub[own] = 0.0
        sub[own, REG_PER_CLASS * c:REG_PER_CLASS * (c + 1)] = vals[own]
        reg[win] = sub
    return heat, reg, labels


def features_from(heat, reg, depth):
    h, w, _ = heat.shape
    f = np.zeros((h, w, depth))
    f[..., :NUM_CLASSES] = heat
    f[..., NUM_CLASSES:NUM_CLASSES + reg.shape[2]] = reg
    return f


def sense(world: World, agent: AgentState, spec: GridSpec, noise: PoseNoise = PoseNoise(),
          rng=None, cfg: SensorConfig = SensorConfig(), exclude=()) -> SensorFrame:
    """Oracle perception for one agent at the current world time."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    ids = visible_objects(world, agent, exclude)
    est = noisy_estimates(world, agent, ids, noise, rng)
    objs = []
    for oid in ids:
        o = world.obj(oid)
        x, y, yaw, vx, vy = est[oid]
        objs.append((oid, o.cls, x, y, yaw, o.length, o.width, vx, vy))
    heat, reg, labels = rasterize(objs, spec, cfg)
    res = spec.resolution
    return SensorFrame(
        heatmap=Grid(heat, res),
        regression=Grid(reg, res),
        features=Grid(features_from(heat, reg, cfg.feature_dim), res),
        labels=labels,
        visible=tuple(ids),
        estimates=est,
    )
