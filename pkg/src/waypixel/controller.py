"""Deterministic costmap-descent controller.

Keeps the learned controller's interface (dense costmap in, 10-waypoint
bird's-eye rollout out) while choosing targets by pure cost descent: the
navigable pixel minimizing cost + beta * range becomes the rollout endpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoNavigableTarget

ROLLOUT_LEN = 10
MAX_WAYPOINT_RANGE = 3.0
MAX_FORWARD = 0.25
TURN_LIMIT = math.pi / 2
ROTATE_IN_PLACE_THRESHOLD = math.pi / 3


@dataclass(frozen=True)
class ControllerParams:
    beta: float = 0.1  # range penalty weight in target selection
    r_max: float = MAX_WAYPOINT_RANGE
    h_min: float = -0.35  # navigable band relative to the floor, meters
    h_max: float = 0.1
    sensor_height: float = 0.4


@dataclass(eq=False)
class NavigabilityMask:
    mask: np.ndarray  # (h, w) bool


@dataclass(eq=False)
class Rollout:
    """10 local BEV waypoints (x forward, y left) plus terminal yaw."""

    waypoints: np.ndarray  # (10, 2) float64
    terminal_yaw: float
    target_pixel: tuple  # (u, v)
    target_cost: float


def navigable_mask(record, params=ControllerParams()):
    """Pixels whose 3D points sit in the drivable band near the floor.

    Camera y points down, so height above floor = sensor_height - y. Only
    valid pixels within ``r_max`` qualify; the subset law mask <= valid
    holds by construction.
    """
    pm = record.pointmap.astype(np.float64)
    height = params.sensor_height - pm[..., 1]
    rng = np.linalg.norm(pm, axis=2)
    ok = record.valid_mask & (height >= params.h_min) & (height <= params.h_max)
    ok &= rng <= params.r_max
    return NavigabilityMask(mask=ok)


def plan_rollout(costmap, record, nav, params=ControllerParams()):
    """Pick the cheapest reachable pixel and interpolate a straight rollout.

    Target score is cost + beta * range; ties break lexicographically on
    (v, u) so output never depends on pixel iteration order.
    """
    candidates = nav.mask & costmap.valid & np.isfinite(costmap.values)
    if not np.any(candidates):
        raise NoNavigableTarget("no navigable pixel with finite cost")
    pm = record.pointmap.astype(np.float64)
    rng = np.linalg.norm(pm, axis=2)
    score = np.where(candidates, costmap.values + params.beta * rng, np.inf)
    flat = int(np.argmin(score))  # row-major first-minimum = (v, u) tie order
    v, u = divmod(flat, record.width)

    x_cam, y_cam, z_cam = pm[v, u]
    endpoint = np.array([z_cam, -x_cam])  # camera -> BEV (forward, left)
    steps = np.arange(1, ROLLOUT_LEN + 1) / ROLLOUT_LEN
    waypoints = steps[:, None] * endpoint[None, :]
    yaw = math.atan2(endpoint[1], endpoint[0])
    return Rollout(
        waypoints=waypoints,
        terminal_yaw=yaw,
        target_pixel=(int(u), int(v)),
        target_cost=float(costmap.values[v, u]),
    )


def waypoint_to_control(rollout):
    """Pure pursuit on the first waypoint, clamped to the robot's limits."""
    wx, wy = rollout.waypoints[0]
    turn = max(-TURN_LIMIT, min(TURN_LIMIT, math.atan2(wy, wx)))
    forward = max(0.0, min(MAX_FORWARD, math.hypot(wx, wy) * math.cos(turn)))
    if abs(turn) > ROTATE_IN_PLACE_THRESHOLD:
        forward = 0.0
    return {"forward": forward, "turn": turn}
