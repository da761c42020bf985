"""Scenario files: JSON layout, bundled scenes and per-seed generators.

A scenario is plain data. ``build_world(seed)`` turns it into a fresh
:class:`World`, so every run starts from the same initial state.

Top-level keys::

    name, duration_s, dt_ms, target_speed, ego_mode ("closed_loop" | "scripted")
    grid        {height, width, resolution, origin: [x, y]}
    ego         agent fields (id, x, y, yaw, speed, sensing_range, fov, length, width)
    supporters  list of agent fields plus role ("rsu" | "vehicle")
    objects     list of object fields (id, cls, x, y, yaw, length, width, vx, vy)
    occluders   list of [cx, cy, length, width, yaw]
    events      list of {object_id, velocity, at_time_s | ego_x_ge}
    route       list of [x, y]
    planner     PlannerConfig overrides
    link        LinkConfig overrides
    sim         SimParams overrides
    generator   optional {kind: "cv_traffic", ...} adding objects per seed
    randomize   optional {event_speed_jitter, event_trigger_jitter_m}
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .seeding import rng_for
from .world import AgentState, Event, GridSpec, World, WorldObject

BUNDLED = ("blind_spot", "cv_benchmark", "apc_benchmark")


class ScenarioError(ValueError):
    """Malformed scenario file."""


@dataclass(frozen=True, eq=False)
class Scenario:
    data: dict

    @property
    def name(self):
        return self.data.get("name", "unnamed")

    @property
    def grid(self) -> GridSpec:
        g = self.data["grid"]
        ox, oy = g.get("origin", (0.0, 0.0))
        return GridSpec(int(g["height"]), int(g["width"]), float(g.get("resolution", 0.25)),
                        float(ox), float(oy))

    @property
    def duration_s(self):
        return float(self.data.get("duration_s", 5.0))

    @property
    def dt_ms(self):
        return float(self.data.get("dt_ms", 100.0))

    @property
    def route(self):
        return self.data["route"]

    def section(self, key):
        return dict(self.data.get(key, {}))

    def with_overrides(self, **sections):
        """Copy with ``section={key: value}`` dicts merged into the top-level sections."""
        d = copy.deepcopy(self.data)
        for key, vals in sections.items():
            if isinstance(vals, dict):
                d.setdefault(key, {}).update(vals)
            else:
                d[key] = vals
        return Scenario(d)

    def build_world(self, seed=0) -> World:
        d = self.data
        ego = AgentState(role="ego", **_agent_fields(d["ego"]))
        agents = [ego]
        for s in d.get("supporters", []):
            s = dict(s)
            role = s.pop("role", "rsu")
            agents.append(AgentState(role=role, **_agent_fields(s)))
        objects = [WorldObject(**o) for o in d.get("objects", [])]
        gen = d.get("generator")
        if gen:
            objects += generate_objects(gen, self.grid, seed, first_id=1 + max([o.id for o in objects], default=0))
        events = [Event(object_id=e["object_id"], velocity=tuple(e["velocity"]),
                        at_time_s=e.get("at_time_s"), ego_x_ge=e.get("ego_x_ge"))
                  for e in d.get("events", [])]
        rnd = d.get("randomize")
        if rnd and events:
            rng = rng_for(seed, 0, "scenario-randomize")
            sj = float(rnd.get("event_speed_jitter", 0.0))
            tj = float(rnd.get("event_trigger_jitter_m", 0.0))
            for ev in events:
                k = 1.0 + rng.uniform(-sj, sj)
                ev.velocity = (ev.velocity[0] * k, ev.velocity[1] * k)
                dx = rng.uniform(-tj, tj)
                if ev.ego_x_ge is not None:
                    ev.ego_x_ge += dx
        occ = [tuple(map(float, b)) for b in d.get("occluders", [])]
        ids = [o.id for o in objects]
        if len(set(ids)) != len(ids):
            raise ScenarioError("object ids must be unique")
        return World(objects=objects, agents=agents, occluders=occ, events=events)


_AGENT_KEYS = ("id", "x", "y", "yaw", "speed", "sensing_range", "fov", "length", "width")


def _agent_fields(d):
    unknown = set(d) - set(_AGENT_KEYS)
    if unknown:
        raise ScenarioError(f"unknown agent fields {sorted(unknown)}")
    out = dict(d)
    if isinstance(out.get("fov"), str) and out["fov"] == "full":
        out["fov"] = 2.0 * math.pi
    return out


def generate_objects(gen, spec: GridSpec, seed, first_id=1):
    """Seeded object placement. ``cv_traffic``: lanes along x, one velocity per lane.

    Parameters: ``lanes`` = list of {y, cls, speed (m/s, signed), count,
    min_gap_m}; positions are drawn on cell centres so integer-cell speeds
    keep objects on cell centres frame after frame.
    """
    kind = gen.get("kind")
    if kind != "cv_traffic":
        raise ScenarioError(f"unknown generator kind {kind!r}; expected 'cv_traffic'")
    rng = rng_for(seed, 0, "scenario-objects")
    res = spec.resolution
    x_lo = spec.origin_x + float(gen.get("x_margin_m", 2.0))
    x_hi = spec.origin_x + spec.width * res - float(gen.get("x_margin_m", 2.0))
    dims = {"vehicle": (4.5, 1.8), "bicycle": (1.8, 0.6), "pedestrian": (0.6, 0.6)}
    objs, oid = [], first_id
    for lane in gen["lanes"]:
        cls = lane["cls"]
        ln, wd = lane.get("length", dims[cls][0]), lane.get("width", dims[cls][1])
        speed = float(lane["speed"])
        gap = float(lane.get("min_gap_m", 10.0))
        count = int(lane.get("count", 1))
        placed = []
        for _ in range(200):
            if len(placed) >= count:
                break
            ix = int(rng.integers(int((x_lo - spec.origin_x) / res), int((x_hi - spec.origin_x) / res)))
            x = spec.origin_x + (ix + 0.5) * res
            if all(abs(x - p) >= gap for p in placed):
                placed.append(x)
        iy = int(math.floor((float(lane["y"]) - spec.origin_y) / res))
        y = spec.origin_y + (iy + 0.5) * res
        for x in sorted(placed):
            yaw = 0.0 if speed >= 0 else math.pi
            objs.append(WorldObject(oid, cls, x, y, yaw, ln, wd, speed, 0.0))
            oid += 1
    return objs


def load_scenario(name_or_path) -> Scenario:
    """Load a bundled scenario by name or any JSON file by path."""
    p = Path(str(name_or_path))
    if p.suffix != ".json" and str(name_or_path) in BUNDLED:
        text = resources.files("v2xsim").joinpath("scenarios", f"{name_or_path}.json").read_text()
    elif p.exists():
        text = p.read_text()
    else:
        raise ScenarioError(f"scenario {name_or_path!r} not found; bundled: {', '.join(BUNDLED)}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"scenario {name_or_path!r} is not valid JSON: {e}") from None
    for key in ("grid", "ego", "route"):
        if key not in data:
            raise ScenarioError(f"scenario {name_or_path!r} lacks required key {key!r}")
    return Scenario(data)
