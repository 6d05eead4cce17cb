"""End-to-end episode runner, navigation metrics, and benchmarks.

Ties the whole pipeline together: build a world and mapping traversal, build
the pixel graph and goal cost field, then close the loop of render -> match
-> localize -> costmap -> rollout -> step, scoring episodes with SPL/SSPL.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import (
    ControllerParams,
    Rollout,
    navigable_mask,
    plan_rollout,
    waypoint_to_control,
)
from .errors import (
    EmptySparseSet,
    NoLocalizedFrame,
    NoMatches,
    NoNavigableTarget,
    TaskInfeasible,
)
from .frameio import MatchBundle
from .graph import GraphBuildConfig, build_graph, graph_stats
from .localizer import LocalizationState, SubmapSpec, build_submap, localize
from .planner import QueryView, goal_costs, plan_query
from .world import (
    Intrinsics,
    free_point_near,
    NoiseKnobs,
    Pose,
    ZERO_NOISE,
    World,
    build_world,
    camera_to_world,
    generate_traversal,
    geodesic_distance,
    oracle_match,
    render_frame,
    render_route,
    route_length,
    step_robot,
)

TASKS = ("imitate", "altgoal", "shortcut", "reverse")

_SALT_TASK = 71


def _rng(*keys):
    return np.random.default_rng([int(k) & 0x7FFFFFFF for k in keys])


@dataclass(frozen=True)
class PipelineConfig:
    """Every knob of the mapping/planning/control loop in one place."""

    intrinsics: Intrinsics = Intrinsics()
    spacing: float = 0.5
    window: int = 3
    graph: GraphBuildConfig = GraphBuildConfig()
    map_noise: NoiseKnobs = ZERO_NOISE
    exec_noise: NoiseKnobs = ZERO_NOISE
    localizer_mode: str = "oracle"  # oracle | matched
    submap_radius: int = 4
    submap_subsample: int = 1
    controller: ControllerParams = ControllerParams()
    pruned_densify: bool = True
    step_limit: int = 300
    success_radius: float = 1.0
    min_start_geodesic: float = 5.0
    reuse_steps: int = 3
    rotation_step: float = math.pi / 6
    commit_margin: float = 0.25
    commit_max_age: int = 40
    blocked_patience: int = 8
    regress_slack: float = 2.0
    noop_controller: bool = False
    trace_costmaps: bool = False


@dataclass(eq=False)
class PreparedEpisode:
    graph: object
    cost_field: object
    map_observations: list


@dataclass(eq=False)
class Episode:
    world: World
    task: str
    mapping_poses: list
    mapping_bundle: MatchBundle
    mapping_route: list
    start_pose: Pose
    goal_position: np.ndarray  # (2,) world xy (success radius measures to this)
    goal_nav_position: np.ndarray  # (2,) nearest reachable stand-in for geodesics
    goal_node: tuple  # (frame_id, u, v)
    geodesic: float  # shortest feasible start->goal length (d_0 = l)
    mapping_length: float  # along-route length from start to route end
    step_limit: int = 300
    success_radius: float = 1.0
    seed: int = 0
    prepared: PreparedEpisode | None = None


@dataclass
class EpisodeOutcome:
    success: bool
    path_length: float
    remaining_geodesic: float
    steps: int
    failure_reason: str | None = None


@dataclass(eq=False)
class EpisodeTrace:
    steps: list = field(default_factory=list)
    costmaps: list = field(default_factory=list)

    def to_json(self):
        return json.dumps({"steps": self.steps}, sort_keys=True)


@dataclass
class MetricsReport:
    episodes: list  # per-episode dicts
    success_rate: float
    spl: float
    sspl: float
    per_task: dict

    def as_dict(self):
        return {
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "spl": self.spl,
            "sspl": self.sspl,
            "per_task": self.per_task,
        }


# ---------------------------------------------------------------------------
# task construction
# ---------------------------------------------------------------------------

def default_world_spec(kind, seed):
    """Desk-scale world presets keyed by layout kind and seed."""
    if kind == "corridor":
        return {
            "version": 1,
            "layout": "corridor",
            "size": [14.0 + (seed % 5), 4.0],
            "landmark_density": 9.0,
            "ceiling": 2.6,
            "seed": seed,
        }
    if kind == "rooms":
        return {
            "version": 1,
            "layout": "rooms",
            "size": [16.0 + (seed % 4), 6.5],
            "corridor_width": 3.5,
            "rooms": 3,
            "room_width": 3.6,
            "door_width": 1.5,
            "landmark_density": 9.0,
            "ceiling": 2.6,
            "seed": seed,
        }
    if kind == "box":
        return {
            "version": 1,
            "layout": "box",
            "size": [10.0 + (seed % 3), 9.0],
            "landmark_density": 9.0,
            "ceiling": 2.6,
            "seed": seed,
        }
    raise ValueError(f"unknown world preset '{kind}'")


def _corridor_axis(world):
    xmin, ymin, xmax, ymax = world.bounds
    if world.layout == "rooms":
        yc = world.spec["rooms_meta"][0]["corridor"] / 2.0
    else:
        yc = (ymin + ymax) / 2.0
    return xmin, xmax, yc


def _mapping_route(world, task):
    """Layout- and task-specific mapping polyline."""
    xmin, xmax, yc = _corridor_axis(world)
    rooms = world.spec.get("rooms_meta") or []
    if world.layout in ("corridor", "box") or not rooms:
        if task == "shortcut" and world.layout == "box":
            m = 1.6
            return [(xmin + m, yc - 1.0), (xmax - m, yc - 1.0), (xmax - m, world.bounds[3] - m)]
        return [(xmin + 1.0, yc), (xmax - 1.2, yc)]

    last = rooms[-1]
    door_last = sum(last["door"]) / 2.0
    room_mid_y = last["corridor"] + last["depth"] / 2.0
    if task == "imitate" or task == "reverse":
        # corridor, then turn into the last room
        return [(xmin + 1.0, yc), (door_last, yc), (door_last, room_mid_y)]
    if task == "altgoal":
        return [(xmin + 1.0, yc), (xmax - 1.2, yc)]
    if task == "shortcut":
        # detour into a middle room, then continue to the corridor end
        mid = rooms[len(rooms) // 2]
        door_mid = sum(mid["door"]) / 2.0
        stop_y = mid["corridor"] + mid["depth"] / 2.0
        return [
            (xmin + 1.0, yc),
            (door_mid, yc),
            (door_mid, stop_y),
            (door_mid, yc),
            (xmax - 1.2, yc),
        ]
    raise ValueError(f"unknown task '{task}'")


def _landmark_anchor(world, task):
    """2D point the goal landmark should sit near."""
    xmin, xmax, yc = _corridor_axis(world)
    rooms = world.spec.get("rooms_meta") or []
    if task == "altgoal":
        if not rooms:
            raise TaskInfeasible("altgoal needs a multi-room world")
        mid = rooms[len(rooms) // 2]
        return np.array([sum(mid["door"]) / 2.0, mid["corridor"] + mid["depth"]])
    if task == "shortcut":
        if world.layout == "box":
            return np.array([xmax, world.bounds[3] - 1.6])
        if not rooms:
            raise TaskInfeasible("shortcut needs a multi-room or box world")
        return np.array([xmax, yc])
    # imitate: far wall along the route's final heading
    if rooms:
        last = rooms[-1]
        return np.array([sum(last["door"]) / 2.0, last["corridor"] + last["depth"]])
    return np.array([xmax, yc])


def _pick_goal_landmark(world, graph, observations, anchor):
    """Nearest-to-anchor landmark that owns at least one graph node.

    Returns (landmark_id, node_id, goal_xy); prefers the latest frame that
    observes the landmark at a pixel admitted into the graph.
    """
    d = np.linalg.norm(world.landmark_pos[:, :2] - anchor[None, :], axis=1)
    for lm_idx in np.argsort(d, kind="stable"):
        lm = int(world.landmark_ids[lm_idx])
        node = None
        for t in range(len(observations) - 1, -1, -1):
            pix = observations[t].visible_landmarks.get(lm)
            if pix is None:
                continue
            key = (t, pix[0], pix[1])
            try:
                graph.index_of(key)
            except KeyError:
                continue
            node = key
            break
        if node is not None:
            return lm, node, world.landmark_pos[lm_idx, :2].copy()
    raise TaskInfeasible("no landmark near the goal anchor is in the graph")


def _node_nearest_position(world, graph, poses, target_xy):
    """Graph node whose world-frame 2D position is closest to target_xy."""
    best = None
    for f, (lo, hi) in graph.frame_slices.items():
        if hi == lo or f >= len(poses):
            continue
        pts_world = camera_to_world(poses[f], graph.points[lo:hi])
        dist = np.linalg.norm(pts_world[:, :2] - target_xy[None, :], axis=1)
        j = int(np.argmin(dist))
        if best is None or dist[j] < best[0]:
            best = (float(dist[j]), graph.node_id(lo + j))
    if best is None:
        raise TaskInfeasible("graph has no nodes")
    return best[1]


def make_task(world, task, seed, cfg=PipelineConfig()):
    """Build a seeded episode of the given kind over ``world``.

    Renders the mapping traversal, builds the graph, picks a goal node that
    provably exists in it, and samples a start pose at least 5 m (geodesic)
    from the goal.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    if task in ("altgoal", "shortcut") and world.layout == "corridor":
        raise TaskInfeasible(f"{task} needs more than a single corridor")
    route = _mapping_route(world, task)
    scans = task == "reverse"  # teach run pans at the endpoints
    poses, bundle = generate_traversal(
        world, route, cfg.spacing, cfg.intrinsics, cfg.window, cfg.map_noise,
        start_scan=scans, end_scan=scans,
    )
    observations = render_route(world, poses, cfg.intrinsics, cfg.map_noise)
    graph = build_graph(bundle, cfg.graph)

    if task == "reverse":
        goal_xy = poses[0].xy
        goal_node = _node_nearest_position(world, graph, poses, goal_xy)
        goal_nav = np.asarray(goal_xy, dtype=np.float64)
        start = replace(poses[-1], yaw=math.atan2(
            math.sin(poses[-1].yaw + math.pi), math.cos(poses[-1].yaw + math.pi)
        ))
    else:
        anchor = _landmark_anchor(world, task)
        _, goal_node, goal_xy = _pick_goal_landmark(world, graph, observations, anchor)
        # nudge off the wall toward the camera that observed it, so geodesic
        # targets stay on the reachable side
        witness = poses[goal_node[0]].xy
        goal_nav = free_point_near(world, goal_xy, toward=witness)
        if task == "shortcut":
            start = poses[0]
        else:
            rng = _rng(seed, _SALT_TASK)
            far = [
                i for i, p in enumerate(poses)
                if geodesic_distance(world, p.xy, goal_nav) >= cfg.min_start_geodesic + 0.01
            ]
            if not far:
                raise TaskInfeasible("no mapping pose is 5 m (geodesic) from the goal")
            start = poses[int(rng.choice(far))]

    ell = geodesic_distance(world, start.xy, goal_nav)
    if not math.isfinite(ell):
        raise TaskInfeasible("goal unreachable from start")
    if task != "reverse" and ell < cfg.min_start_geodesic - 1e-6:
        raise TaskInfeasible(f"start-goal geodesic {ell:.2f} m below minimum")

    cost_field = goal_costs(graph, goal_node)
    return Episode(
        world=world,
        task=task,
        mapping_poses=poses,
        mapping_bundle=bundle,
        mapping_route=route,
        start_pose=start,
        goal_position=np.asarray(goal_xy, dtype=np.float64),
        goal_nav_position=np.asarray(goal_nav, dtype=np.float64),
        goal_node=goal_node,
        geodesic=float(ell),
        mapping_length=route_length(route),
        step_limit=cfg.step_limit,
        success_radius=cfg.success_radius,
        seed=seed,
        prepared=PreparedEpisode(graph, cost_field, observations),
    )


def prepare_episode(ep, cfg):
    observations = render_route(ep.world, ep.mapping_poses, cfg.intrinsics, cfg.map_noise)
    graph = build_graph(ep.mapping_bundle, cfg.graph)
    return PreparedEpisode(graph, goal_costs(graph, ep.goal_node), observations)


# ---------------------------------------------------------------------------
# episode execution
# ---------------------------------------------------------------------------

def _nearest_pose_index(poses, xy, slack=0.25):
    """Nearest mapping pose, preferring the latest among near-ties.

    Mapping loops revisit positions; the forward bias mirrors the
    localizer's tie rule and lands on the exit side of a loop junction.
    """
    d = np.array([float(np.hypot(p.x - xy[0], p.y - xy[1])) for p in poses])
    close = np.nonzero(d <= d.min() + slack)[0]
    return int(close[-1])


def _match_submap(obs, map_obs, submap, noise, cache):
    out = {}
    for f in submap:
        if f not in cache:
            cache[f] = oracle_match(obs, map_obs[f], noise).pixels
        out[f] = cache[f]
    return out


def _forward_clearance(record, params, turn=0.0):
    """Distance to the nearest body-height obstacle in the driving lane.

    The controller is blind to walls as such; this reads the pointmap the
    way a bumper would: anything at robot body height within a half-width
    lane along the post-turn heading bounds a forward command. Camera x is
    right and z forward, so a +turn (left) rotates the lane toward -x.
    """
    pm = record.pointmap
    height = params.sensor_height - pm[..., 1]
    body = record.valid_mask & (height > params.h_max + 0.02) & (height < 1.2)
    if not np.any(body):
        return np.inf
    x, z = pm[..., 0][body], pm[..., 2][body]
    ahead = z * math.cos(turn) - x * math.sin(turn)
    lateral = x * math.cos(turn) + z * math.sin(turn)
    lane = (np.abs(lateral) <= 0.21) & (ahead > 0.0)
    if not np.any(lane):
        return np.inf
    return float(ahead[lane].min())


def _steer_to_free(record, params, desired_turn):
    """Closest-to-desired heading with driving room, scanning outward.

    Eq.-5 costmaps measure straight-line 3D distance and happily point
    through walls; when the desired heading is blocked, slide along the
    obstacle by picking the nearest free heading (left preferred on ties).
    """
    for delta_deg in (0, 15, -15, 30, -30, 45, -45, 60, -60, 75, -75, 90, -90):
        turn = desired_turn + math.radians(delta_deg)
        if abs(turn) > math.pi / 2:
            continue
        clear = _forward_clearance(record, params, turn)
        if clear >= 0.50:
            return {"forward": min(0.12, clear - 0.24), "turn": turn}
    return None


def _pursuit_command(target_local):
    """Pure pursuit toward a robot-frame (forward, left) point."""
    rollout = Rollout(
        waypoints=np.arange(1, 11)[:, None] / 10.0 * np.asarray(target_local)[None, :],
        terminal_yaw=math.atan2(target_local[1], target_local[0]),
        target_pixel=(0, 0),
        target_cost=0.0,
    )
    return waypoint_to_control(rollout)


def _advance_local(target_local, old_pose, new_pose):
    """Dead-reckon a robot-frame target across one executed step."""
    dyaw = math.atan2(math.sin(new_pose.yaw - old_pose.yaw),
                      math.cos(new_pose.yaw - old_pose.yaw))
    c, s = math.cos(dyaw), math.sin(dyaw)
    tx, ty = target_local
    rx, ry = c * tx + s * ty, -s * tx + c * ty
    dist = float(np.linalg.norm(new_pose.xy - old_pose.xy))
    return np.array([rx - dist, ry])


def run_episode(ep, cfg=PipelineConfig()):
    """Closed-loop run: returns (EpisodeOutcome, EpisodeTrace).

    The executor commits to the best costmap target seen and pursues it by
    odometry, replanning when a strictly cheaper target appears, the
    committed one is reached, or the commitment goes stale. Planner and
    localizer failures therefore do not abort or reset the motion; with no
    commitment at all the robot rotates in place until planning recovers.
    """
    prepared = ep.prepared or prepare_episode(ep, cfg)
    graph, cost_field, map_obs = prepared.graph, prepared.cost_field, prepared.map_observations
    n_map = len(ep.mapping_poses)

    pose = ep.start_pose
    loc = LocalizationState(_nearest_pose_index(ep.mapping_poses, pose.xy), n_map)
    trace = EpisodeTrace()
    path_len = 0.0
    success = False
    reason = None
    fail_streak = 0
    pending_rot = 0
    collide_streak = 0
    rotate_cmd = {"forward": 0.0, "turn": cfg.rotation_step}
    steps_used = 0
    committed = None  # {"local": (2,), "cost": float, "age": int}
    blocked_streak = 0  # consecutive steps the committed target stayed unreachable
    avoid_cost = None  # cost of the last abandoned target
    avoid_ttl = 0  # steps the avoid filter stays active
    best_reached = math.inf  # lowest target cost actually driven to
    starving = 0  # plans in a row rejected by the descent filter

    for step in range(ep.step_limit):
        if float(np.linalg.norm(pose.xy - ep.goal_position)) <= ep.success_radius:
            success = True
            break
        event = ""
        r_star = None
        target = None
        scanning = step < cfg.initial_scan_steps
        if cfg.noop_controller:
            cmd = {"forward": 0.0, "turn": 0.0}
        elif pending_rot > 0:
            cmd = rotate_cmd
            pending_rot -= 1
            event = "recover-rotate"
        else:
            obs = render_frame(ep.world, pose, cfg.intrinsics, cfg.exec_noise,
                               frame_id=n_map + step)
            try:
                cache = {}
                if cfg.localizer_mode == "oracle":
                    loc.current_index = _nearest_pose_index(ep.mapping_poses, pose.xy)
                    loc.history.append((step, loc.current_index, None))
                else:
                    spec = SubmapSpec(loc.current_index, cfg.submap_radius, cfg.submap_subsample)
                    probe = build_submap(spec, n_map)
                    counts = {
                        f: int(m.shape[0])
                        for f, m in _match_submap(obs, map_obs, probe, cfg.exec_noise, cache).items()
                    }
                    localize(counts, loc, step)
                spec = SubmapSpec(loc.current_index, cfg.submap_radius, cfg.submap_subsample)
                submap = build_submap(spec, n_map)
                matches = _match_submap(obs, map_obs, submap, cfg.exec_noise, cache)
                query = QueryView(
                    record=obs.record,
                    matches=matches,
                    ref_records={f: map_obs[f].record for f in submap},
                )
                dense = plan_query(query, cost_field, graph, pruned=cfg.pruned_densify)
                nav = navigable_mask(obs.record, cfg.controller)
                rollout = plan_rollout(dense, obs.record, nav, cfg.controller)
                r_star = dense.sparse.ref_frame
                target = rollout.target_pixel
                fail_streak = 0
                u, v = rollout.target_pixel
                pt = obs.record.pointmap[v, u].astype(np.float64)
                candidate = {
                    "local": np.array([pt[2], -pt[0]]),
                    "cost": rollout.target_cost,
                    "age": 0,
                }
                same_heading = committed is not None and abs(
                    math.atan2(candidate["local"][1], candidate["local"][0])
                    - math.atan2(committed["local"][1], committed["local"][0])
                ) <= 0.35
                adoptable = (
                    committed is None
                    or candidate["cost"] <= committed["cost"] - cfg.commit_margin
                    or (same_heading and candidate["cost"] <= committed["cost"] + 0.1)
                    or float(np.linalg.norm(committed["local"])) < 0.3
                    or committed["age"] > cfg.commit_max_age
                )
                if avoid_ttl > 0 and candidate["cost"] > avoid_cost - cfg.commit_margin:
                    # just abandoned an unreachable target of this cost;
                    # keep searching for a genuinely cheaper way in
                    adoptable = False
                if candidate["cost"] > best_reached + cfg.regress_slack:
                    # monotone-descent hysteresis: do not chase targets
                    # clearly worse than ground already covered
                    adoptable = False
                if adoptable:
                    committed = candidate
                    starving = 0
                elif committed is None:
                    starving += 1
                    if starving >= 12:  # a full search circle found nothing
                        best_reached += 1.0
                        starving = 0
                if cfg.trace_costmaps:
                    trace.costmaps.append(dense.values.astype(np.float32))
            except (NoMatches, NoLocalizedFrame, EmptySparseSet, NoNavigableTarget) as exc:
                fail_streak += 1
                event = f"fallback:{type(exc).__name__}"
                if committed is not None and committed["age"] > cfg.commit_max_age:
                    committed = None  # stale dead-reckoned plan with no replanning
            if committed is not None and float(np.linalg.norm(committed["local"])) < 0.3:
                best_reached = min(best_reached, committed["cost"])
                committed = None  # arrived; force a fresh plan next step
            if scanning:
                # look around before moving: keep adopting cheaper targets
                # while sweeping a full turn in place
                cmd = rotate_cmd
                event = (event + "+" if event else "") + "initial-scan"
            elif committed is not None:
                cmd = _pursuit_command(committed["local"])
            else:
                cmd = rotate_cmd
                event = (event + "+" if event else "") + "search-rotate"
            blocked = False
            if cmd["forward"] > 0.0:
                # bumper governor: never command forward past body-height
                # obstacles seen in the current pointmap
                cap = _forward_clearance(obs.record, cfg.controller, cmd["turn"]) - 0.24
                if cmd["forward"] > cap:
                    capped = {"forward": max(0.0, cap), "turn": cmd["turn"]}
                    if capped["forward"] < 0.02:
                        blocked = True
                        free = _steer_to_free(obs.record, cfg.controller, cmd["turn"])
                        if free is not None:
                            capped = free
                            event = (event + "+" if event else "") + "steer-free"
                    cmd = capped
            blocked_streak = blocked_streak + 1 if blocked else 0
            if blocked_streak >= cfg.blocked_patience and committed is not None:
                # the committed target keeps hiding behind geometry the
                # costmap cannot see; abandon it and face elsewhere
                avoid_cost = committed["cost"]
                avoid_ttl = 14
                committed = None
                blocked_streak = 0
                pending_rot = 6
                event = (event + "+" if event else "") + "abandon-target"
                cmd = rotate_cmd
            avoid_ttl = max(0, avoid_ttl - 1)
        new_pose, collided = step_robot(ep.world, pose, cmd)
        if collided:
            collide_streak += 1
            pending_rot = min(collide_streak, 11)
            event = (event + "+" if event else "") + "collided"
        else:
            collide_streak = 0
        if committed is not None:
            committed["local"] = _advance_local(committed["local"], pose, new_pose)
            committed["age"] += 1
        path_len += float(np.linalg.norm(new_pose.xy - pose.xy))
        trace.steps.append(
            {
                "step": step,
                "x": round(pose.x, 9),
                "y": round(pose.y, 9),
                "yaw": round(pose.yaw, 9),
                "forward": round(float(cmd["forward"]), 9),
                "turn": round(float(cmd["turn"]), 9),
                "collided": bool(collided),
                "loc_index": loc.current_index,
                "r_star": r_star,
                "target": list(target) if target else None,
                "event": event,
            }
        )
        pose = new_pose
        steps_used = step + 1
    if not success and float(np.linalg.norm(pose.xy - ep.goal_position)) <= ep.success_radius:
        success = True
    if not success:
        reason = "stall" if fail_streak > cfg.reuse_steps else "timeout"
    d_t = geodesic_distance(ep.world, pose.xy, ep.goal_nav_position)
    outcome = EpisodeOutcome(
        success=success,
        path_length=path_len,
        remaining_geodesic=float(d_t) if math.isfinite(d_t) else float(ep.geodesic),
        steps=steps_used,
        failure_reason=reason,
    )
    return outcome, trace


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def compute_metrics(outcomes, episodes):
    """SPL and soft-SPL per episode plus aggregates.

    SPL_i = S_i * l_i / max(l_i, p_i); SSPL_i replaces S_i with the goal
    progress max(0, 1 - d_T / d_0). Degenerate zero-length episodes score
    ratio 1 so a spawn-at-goal success earns SPL 1.
    """
    if len(outcomes) != len(episodes):
        raise ValueError("outcomes and episodes lists are misaligned")
    rows = []
    per_task = {}
    for out, ep in zip(outcomes, episodes):
        ell = ep.geodesic
        denom = max(ell, out.path_length)
        ratio = ell / denom if denom > 0 else 1.0
        spl = (1.0 if out.success else 0.0) * ratio
        d0 = ep.geodesic
        progress = max(0.0, 1.0 - min(1.0, out.remaining_geodesic / d0)) if d0 > 0 else 1.0
        sspl = progress * ratio
        rows.append(
            {
                "task": ep.task,
                "seed": ep.seed,
                "success": bool(out.success),
                "spl": spl,
                "sspl": sspl,
                "path_length": out.path_length,
                "geodesic": ell,
                "remaining_geodesic": out.remaining_geodesic,
                "steps": out.steps,
                "failure_reason": out.failure_reason,
            }
        )
        bucket = per_task.setdefault(ep.task, {"count": 0, "success": 0, "spl": 0.0, "sspl": 0.0})
        bucket["count"] += 1
        bucket["success"] += int(out.success)
        bucket["spl"] += spl
        bucket["sspl"] += sspl
    for bucket in per_task.values():
        bucket["spl"] /= bucket["count"]
        bucket["sspl"] /= bucket["count"]
        bucket["success_rate"] = bucket["success"] / bucket["count"]
    n = len(rows)
    return MetricsReport(
        episodes=rows,
        success_rate=sum(r["success"] for r in rows) / n if n else 0.0,
        spl=sum(r["spl"] for r in rows) / n if n else 0.0,
        sspl=sum(r["sspl"] for r in rows) / n if n else 0.0,
        per_task=per_task,
    )


# ---------------------------------------------------------------------------
# suites and benchmarks
# ---------------------------------------------------------------------------

def make_suite(task, count=36, base_seed=0, cfg=PipelineConfig(), kinds=None):
    """Seeded episode batch; corridor/rooms worlds alternate by default."""
    if kinds is None:
        kinds = ("corridor", "rooms") if task in ("imitate", "reverse") else ("rooms",)
    episodes = []
    for i in range(count):
        seed = base_seed + i
        kind = kinds[i % len(kinds)]
        world = build_world(default_world_spec(kind, seed))
        episodes.append(make_task(world, task, seed, cfg))
    return episodes


def worker_count():
    raw = os.environ.get("WAYPIXEL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_suite(episodes, cfg=PipelineConfig(), max_workers=None):
    """Run independent episodes, optionally on a small thread pool."""
    workers = max_workers or worker_count()
    if workers <= 1 or len(episodes) <= 1:
        return [run_episode(ep, cfg) for ep in episodes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ep: run_episode(ep, cfg), episodes))


def parse_strategy(text):
    """'exhaustive' | 'emst' | 'knn:K' -> (strategy, k)."""
    if text.startswith("knn"):
        k = int(text.split(":", 1)[1]) if ":" in text else 8
        return "knn", k
    if text not in ("exhaustive", "emst"):
        raise ValueError(f"unknown strategy '{text}'")
    return text, 8


def benchmark_graph(bundle, strategies, goal=None, subsample=1.0, merge=False, seed=0):
    """Build the graph per strategy and time intra/weights/Dijkstra stages.

    Benchmark runs are sequential on purpose so wall-clock numbers stay
    honest. Returns a list of row dicts (one per strategy).
    """
    rows = []
    for text in strategies:
        strategy, k = parse_strategy(text)
        cfg = GraphBuildConfig(
            subsample_factor=subsample, strategy=strategy, knn_k=k,
            merge_nodes=merge, seed=seed,
        )
        timings = {}
        graph = build_graph(bundle, cfg, timings)
        goal_node = goal or graph.node_id(graph.num_nodes - 1)
        t0 = time.perf_counter()
        goal_costs(graph, goal_node)
        timings["dijkstra_s"] = time.perf_counter() - t0
        stats = graph_stats(graph, timings)
        row = {"strategy": text, "goal": list(goal_node), **stats.as_dict()}
        rows.append(row)
    return rows


def scaling_benchmark(bundles, strategy="emst", repeats=5, goal=None):
    """Median build+plan wall time per bundle plus a linear fit over sizes.

    Mirrors the measurement protocol of runtime-vs-scene-size tables:
    one point per bundle (frame count, median seconds over ``repeats``).
    """
    strategy_name, k = parse_strategy(strategy)
    points = []
    for bundle in bundles:
        times = []
        for _ in range(repeats):
            cfg = GraphBuildConfig(strategy=strategy_name, knn_k=k)
            t0 = time.perf_counter()
            graph = build_graph(bundle, cfg)
            goal_node = goal or graph.node_id(graph.num_nodes - 1)
            goal_costs(graph, goal_node)
            times.append(time.perf_counter() - t0)
        points.append({"frames": len(bundle.frames), "seconds": float(np.median(times))})
    xs = np.array([p["frames"] for p in points], dtype=np.float64)
    ys = np.array([p["seconds"] for p in points], dtype=np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"points": points, "slope": float(slope), "intercept": float(intercept), "r2": r2}
