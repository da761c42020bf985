"""Episode runner: sense, request, predict, pack, deliver, fuse, decode, plan, act.

One call to :func:`run_episode` builds a fresh world from the scenario and
steps it at the decision interval. Every random draw comes from a stream
keyed by (seed, agent, purpose, frame), so runs are reproducible and methods
compared on the same seed see the same channel and noise draws.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .channel import (LatencyBreakdown, LinkConfig, SlotSchedule, delivery_time, expected_latency,
                      inject_loss_and_jitter, sample_overall_latency)
from .dpp import PREDICTORS, HeatmapHistory, OraclePredictor, dpp_pipeline, peak_errors
from .drive import (ControllerState, PidState, PlannerConfig, Route, RouteLostError, VehicleParams,
                    control, plan)
from .fusion import decode, fuse, nms, rasterize_occupancy, sweep_detections
from .geometry import boxes_overlap
from .grids import Grid
from .metrics import APAccumulator, driving_result
from .pragcomm import (aoim_request_map, baseline_request_map, comm_volume, confidence_map,
                      pack_apc, pack_baseline)
from .scenario import Scenario
from .seeding import rng_for
from .world import PoseNoise, SensorConfig, World, rasterize, sense

METHODS = ("no_fusion", "baseline", "dpp", "dpp_apc")
METHOD_ALIASES = {
    "no-fusion": "no_fusion", "nofusion": "no_fusion", "none": "no_fusion",
    "baseline-packing": "baseline", "baseline_packing": "baseline",
    "dpp+apc": "dpp_apc", "dpp-apc": "dpp_apc", "apc": "dpp_apc",
}


class ConfigError(ValueError):
    """Invalid experiment or simulation configuration."""


def canonical_method(name: str) -> str:
    key = str(name).strip().lower()
    key = METHOD_ALIASES.get(key, key)
    if key not in METHODS:
        raise ConfigError(f"unknown method {name!r}; valid: {', '.join(METHODS)}")
    return key


@dataclass(frozen=True)
class SimParams:
    p_thre: float = 0.05
    sigma_f_m: float = 15.0
    aoim_normalize: bool = True
    conf_sigma: float = 1.0
    packet_loss: float = 0.05
    extra_jitter_ms: float = 0.0
    sigma_p: float = 0.0
    sigma_r: float = 0.0
    predictor: str = "cv"
    peak_thresh: float = 0.3
    nms_iou: float = 0.5
    heads: int = 1
    max_message_age_ms: float = 1000.0
    share_bandwidth: bool = True
    occupancy_horizon_s: float = 0.0  # planner sees detections swept along their velocity
    comfort_decel: float = 4.0  # m/s^2; harder braking at onset counts as a late brake
    finish_tolerance_m: float = 1.0
    feature_dim: int = 64

    def __post_init__(self):
        if not 0.0 <= self.packet_loss <= 1.0:
            raise ConfigError(f"packet_loss must be in [0, 1], got {self.packet_loss}")
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"unknown predictor {self.predictor!r}; valid: {', '.join(PREDICTORS)}")
        if self.sigma_f_m <= 0:
            raise ConfigError("sigma_f_m must be positive")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown sim parameters {sorted(unknown)}; valid: {sorted(names)}")
        return cls(**d)


def link_from_dict(d) -> LinkConfig:
    names = {f.name for f in fields(LinkConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown link parameters {sorted(unknown)}; valid: {sorted(names)}")
    return LinkConfig(**d)


@dataclass(eq=False)
class EpisodeResult:
    method: str
    seed: int
    metrics: dict
    frame_mask_cards: list = field(default_factory=list)
    frame_baseline_cards: list = field(default_factory=list)
    latency_rows: list = field(default_factory=list)
    volume_rows: list = field(default_factory=list)
    detection_rows: list = field(default_factory=list)
    trajectory_rows: list = field(default_factory=list)
    prediction_rows: list = field(default_factory=list)


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else 0.0


def _route_heading(route: Route, s):
    a = route.point_at(max(0.0, s - 0.05))
    b = route.point_at(min(route.length, s + 0.05))
    return math.atan2(b[1] - a[1], b[0] - a[0])


def _oracle_source(frame, world: World, spec, cfg, dt_s):
    objs = {o.id: o for o in world.objects}

    def source(k):
        rows = []
        for oid, (x, y, yaw, vx, vy) in frame.estimates.items():
            o = objs[oid]
            rows.append((oid, o.cls, x + vx * k * dt_s, y + vy * k * dt_s, yaw, o.length, o.width, vx, vy))
        heat, _, _ = rasterize(rows, spec, cfg)
        return Grid(heat, spec.resolution)

    return source


def run_episode(scenario: Scenario, method: str, seed: int, collect_logs=True) -> EpisodeResult:
    method = canonical_method(method)
    spec = scenario.grid
    params = SimParams.from_dict(scenario.section("sim"))
    link = link_from_dict(scenario.section("link"))
    pcfg = PlannerConfig(**scenario.section("planner"))
    vparams = VehicleParams(**scenario.section("vehicle"))
    ctrl_cfg = scenario.section("controller")
    ctrl = ControllerState(
        lateral=PidState(*ctrl_cfg.get("lateral", (1.0, 0.0, 0.2))),
        longitudinal=PidState(*ctrl_cfg.get("longitudinal", (0.5, 0.05, 0.0))),
    )
    sensor_cfg = SensorConfig(feature_dim=params.feature_dim)
    schedule = SlotSchedule(scenario.dt_ms / 2.0)
    dt_ms = scenario.dt_ms
    dt_s = dt_ms / 1000.0
    route = Route(scenario.route)
    target_speed = float(scenario.data.get("target_speed", 0.0))
    ego_mode = scenario.data.get("ego_mode", "closed_loop")
    if ego_mode not in ("closed_loop", "scripted"):
        raise ConfigError(f"ego_mode must be 'closed_loop' or 'scripted', got {ego_mode!r}")

    world = scenario.build_world(seed)
    ego = next(a for a in world.agents if a.role == "ego")
    supporters = [a for a in world.agents if a.role != "ego"] if method != "no_fusion" else []
    noise = PoseNoise(params.sigma_p, params.sigma_r)
    if supporters and params.share_bandwidth:
        link_j = link.replace(bandwidth_hz=link.bandwidth_hz / len(supporters))
    else:
        link_j = link
    predictive = method in ("dpp", "dpp_apc")

    histories = {a.id: HeatmapHistory(2) for a in supporters}
    last_size = {a.id: 0 for a in supporters}
    pending, inbox = [], {}
    occ_frames = deque(maxlen=pcfg.t_d)
    acc = APAccumulator()
    prev_plan = None
    prev_blocked = False
    s_scripted, _ = route.project(ego.x, ego.y)
    hit_objects, hit_occluders = set(), set()
    infractions = {"collision_pedestrian": 0, "collision_vehicle": 0, "collision_layout": 0}
    late_brakes = 0
    brake_gaps = []
    route_lost = False
    finished = False
    res = EpisodeResult(method, int(seed), {})
    msg_stats = {"tau_pr": [], "total": [], "tau_est": [], "n": [], "vol": [], "vol_bytes": [],
                 "card": [], "lost": 0, "sent": 0}
    speeds, trajectory = [], [(ego.x, ego.y)]

    n_frames = int(round(scenario.duration_s * 1000.0 / dt_ms))
    for k in range(n_frames):
        t = k * dt_ms
        gts = world.ground_truth(spec)
        ego_frame = sense(world, ego, spec, PoseNoise(), rng_for(seed, ego.id, "sense", k), sensor_cfg)
        conf_i = confidence_map(ego_frame.heatmap, params.conf_sigma)
        req_base = baseline_request_map(conf_i)
        if method == "dpp_apc" and prev_plan is not None:
            req_i = aoim_request_map(prev_plan.waypoints, spec.height, spec.width, spec.resolution,
                                     params.sigma_f_m, params.aoim_normalize, (ego.x, ego.y), spec.origin)
        else:
            req_i = req_base

        frame_card = frame_base_card = 0
        for sup in supporters:
            fr = sense(world, sup, spec, noise, rng_for(seed, sup.id, "sense", k), sensor_cfg)
            hist = histories[sup.id]
            hist.push(t, fr.heatmap)
            conf_j = confidence_map(fr.heatmap, params.conf_sigma)
            dist = max(1.0, math.hypot(sup.x - ego.x, sup.y - ego.y))
            tau_est = 0.0
            if predictive:
                tau_est = max(0.0, expected_latency(link_j, last_size[sup.id], dist).total)
                if params.predictor == "oracle":
                    predictor = OraclePredictor(_oracle_source(fr, world, spec, sensor_cfg, dt_s))
                else:
                    predictor = PREDICTORS[params.predictor]()
                out = dpp_pipeline(hist, fr.features, tau_est if len(hist) >= 2 else 0.0, dt_ms,
                                   predictor, params.conf_sigma)
                feats, conf_hat, n = out.features, out.confidence, out.n_steps
                if n and collect_logs:
                    true_cells = []
                    for oid in fr.visible:
                        o = world.obj(oid)
                        cell = spec.cell_of(o.x + o.vx * n * dt_s, o.y + o.vy * n * dt_s)
                        if spec.in_grid(*cell):
                            true_cells.append((oid, cell))
                    errs = peak_errors(out.heatmap, [c for _, c in true_cells], params.peak_thresh)
                    for (oid, _), e in zip(true_cells, errs):
                        res.prediction_rows.append({"frame": k, "sender": sup.id, "object": oid,
                                                    "n_steps": n, "error_cells": e})
            else:
                feats, conf_hat, n = fr.features, conf_j, 0
            if method == "dpp_apc":
                msg = pack_apc(feats, conf_hat, conf_j, req_i, n, params.p_thre, sup.id, ego.id, t)
            else:
                msg = pack_baseline(feats, conf_hat, req_i, params.p_thre, sup.id, ego.id, t)
            base_card = int(np.count_nonzero(req_base.plane() * conf_hat.plane() >= params.p_thre))
            frame_card += msg.mask.cardinality
            frame_base_card += base_card
            last_size[sup.id] = msg.size_bits
            bd: LatencyBreakdown = sample_overall_latency(link_j, msg.size_bits, dist,
                                                          rng_for(seed, sup.id, "latency", k))
            msg = replace(msg, t_r=delivery_time(t, schedule, bd))
            msg = inject_loss_and_jitter(msg, params.packet_loss, params.extra_jitter_ms,
                                         rng_for(seed, sup.id, "loss", k))
            pending.append(msg)
            msg_stats["sent"] += 1
            msg_stats["lost"] += int(msg.lost)
            msg_stats["tau_pr"].append(bd.tx_pr)
            msg_stats["total"].append(msg.t_r - t)
            msg_stats["tau_est"].append(tau_est)
            msg_stats["n"].append(n)
            msg_stats["card"].append(msg.mask.cardinality)
            vol = comm_volume(msg.mask, spec.height, spec.width, params.feature_dim)
            vol_b = comm_volume(msg.mask, spec.height, spec.width, params.feature_dim, bytes_mode=True)
            msg_stats["vol"].append(vol)
            msg_stats["vol_bytes"].append(vol_b)
            if collect_logs:
                res.latency_rows.append({"frame": k, "sender": sup.id, "t_send": t, "t_r": msg.t_r,
                                         "ext": bd.ext, "asyn": bd.asyn, "tx_pr": bd.tx_pr,
                                         "tx_net": bd.tx_net, "dm": bd.dm, "queue": bd.queue,
                                         "tau_est": tau_est, "n_steps": n, "lost": int(msg.lost)})
                res.volume_rows.append({"frame": k, "sender": sup.id, "cardinality": msg.mask.cardinality,
                                        "baseline_cardinality": base_card, "size_bits": msg.size_bits,
                                        "volume": vol, "volume_bytes": vol_b})
        if supporters:
            res.frame_mask_cards.append(frame_card)
            res.frame_baseline_cards.append(frame_base_card)

        # deliver everything that has arrived by now
        still = []
        for m in pending:
            if m.t_r <= t:
                cur = inbox.get(m.sender)
                if cur is None or m.t_send > cur.t_send:
                    inbox[m.sender] = m
            else:
                still.append(m)
        pending = still
        active = [m for m in inbox.values() if t - m.t_send <= params.max_message_age_ms]

        fused = fuse(ego_frame.features, conf_i, active, params.heads)
        dets = nms(decode(fused, params.peak_thresh, spec), params.nms_iou)
        acc.add(dets, gts)
        if collect_logs:
            res.detection_rows.append({"frame": k, "t_ms": t, "detections": [d.to_dict() for d in dets]})

        occ = rasterize_occupancy(sweep_detections(dets, params.occupancy_horizon_s),
                                  spec.height, spec.width, spec.resolution, spec.origin)
        occ_frames.append(occ)
        try:
            p = plan(occ_frames, route, ego.pose, target_speed, spec, pcfg)
        except RouteLostError:
            route_lost = True
            break
        if p.blocked and not prev_blocked and ego.speed > 0.5:
            gap = p.block_distance - 0.5 * ego.length
            brake_gaps.append(gap)
            if ego.speed ** 2 / (2.0 * max(gap, 0.05)) > params.comfort_decel:
                late_brakes += 1
        prev_blocked = p.blocked
        prev_plan = p

        if ego_mode == "closed_loop":
            action = control(p, ego.pose, ego.speed, ctrl, dt_s)
            world.step(dt_s, {ego.id: action}, vparams)
        else:
            action = None
            world.step(dt_s, {}, vparams)
            s_scripted = min(route.length, s_scripted + target_speed * dt_s)
            ego.x, ego.y = (float(v) for v in route.point_at(s_scripted))
            ego.yaw = _route_heading(route, s_scripted)
            ego.speed = target_speed

        for o in world.objects:
            if o.id not in hit_objects and boxes_overlap(ego.box, o.box):
                hit_objects.add(o.id)
                kind = "collision_pedestrian" if o.cls == "pedestrian" else "collision_vehicle"
                infractions[kind] += 1
        for i, b in enumerate(world.occluders):
            if i not in hit_occluders and boxes_overlap(ego.box, b):
                hit_occluders.add(i)
                infractions["collision_layout"] += 1

        speeds.append(ego.speed)
        trajectory.append((ego.x, ego.y))
        if collect_logs:
            row = {"frame": k, "t_ms": t + dt_ms, "x": ego.x, "y": ego.y, "yaw": ego.yaw, "speed": ego.speed,
                   "steer": 0.0, "throttle": 0.0, "brake": 0, "blocked": int(p.blocked)}
            if action is not None:
                row.update(steer=action.steer, throttle=action.throttle, brake=action.brake)
            res.trajectory_rows.append(row)
        if ego_mode == "closed_loop":
            s_now, _ = route.project(ego.x, ego.y)
            if s_now >= route.length - params.finish_tolerance_m:
                finished = True
                break

    drv = driving_result(trajectory, route, infractions)
    m = dict(acc.summary())
    pred_errs = [r["error_cells"] for r in res.prediction_rows]
    m.update({
        "messages_sent": float(msg_stats["sent"]),
        "messages_lost": float(msg_stats["lost"]),
        "comm_volume": _mean(msg_stats["vol"]),
        "comm_volume_bytes": _mean(msg_stats["vol_bytes"]),
        "mask_cardinality": _mean(msg_stats["card"]),
        "tau_pr_ms": _mean(msg_stats["tau_pr"]),
        "latency_ms": _mean(msg_stats["total"]),
        "tau_est_ms": _mean(msg_stats["tau_est"]),
        "n_steps": _mean(msg_stats["n"]),
        "pred_error_cells": _mean([e for e in pred_errs if math.isfinite(e)]),
        "route_completion": drv.route_completion,
        "infraction_penalty": drv.infraction_penalty,
        "driving_score": drv.driving_score,
        "collisions_pedestrian": float(infractions["collision_pedestrian"]),
        "collisions_vehicle": float(infractions["collision_vehicle"]),
        "collisions_layout": float(infractions["collision_layout"]),
        "late_brakes": float(late_brakes),
        "brake_onset_gap_m": float(brake_gaps[0]) if brake_gaps else float("nan"),
        "mean_speed": _mean(speeds),
        "route_lost": float(route_lost),
        "finished": float(finished),
    })
    res.metrics = m
    return res
