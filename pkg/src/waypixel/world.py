"""Procedural 2.5D world: raycast renderer, oracle matcher, robot simulator.

The world is a 2D floorplan (wall segments on the floor plane) extruded from
z=0 to a ceiling height. Cameras are pinhole, x-right / y-down / z-forward,
mounted at a fixed sensor height with zero pitch/roll. Everything is a pure
function of its inputs plus the seeds carried in ``NoiseKnobs`` and ``World``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra

from .errors import DegenerateLayout, MalformedFile, SchemaViolation, UnreachableRoute
from .frameio import FrameRecord, MatchBundle, PairRecord, make_frame, make_pair

WORLD_SPEC_VERSION = 1

ROBOT_RADIUS = 0.2
DEFAULT_SENSOR_HEIGHT = 0.4
MAX_FORWARD_PER_STEP = 0.5
MAX_TURN_PER_STEP = math.pi / 2

# salts separating the RNG streams derived from one seed
_SALT_WORLD = 11
_SALT_SCALE = 23
_SALT_POINT = 37
_SALT_DROPOUT = 53


def _rng(*keys):
    return np.random.default_rng([int(k) & 0x7FFFFFFF for k in keys])


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    yaw: float
    sensor_height: float = DEFAULT_SENSOR_HEIGHT

    @property
    def xy(self):
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Intrinsics:
    width: int = 64
    height: int = 48
    horizontal_fov: float = math.pi / 2

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("intrinsics must be at least 8x8 pixels")
        if not (0.0 < self.horizontal_fov < math.pi):
            raise ValueError("horizontal fov must be in (0, pi)")

    @property
    def focal(self):
        return (self.width / 2.0) / math.tan(self.horizontal_fov / 2.0)


@dataclass(frozen=True)
class NoiseKnobs:
    point_sigma: float = 0.0
    scale_jitter: float = 0.0
    match_dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.scale_jitter < 0.5):
            raise ValueError("scale_jitter must be in [0, 0.5)")
        if not (0.0 <= self.match_dropout < 1.0):
            raise ValueError("match_dropout must be in [0, 1)")
        if self.point_sigma < 0.0:
            raise ValueError("point_sigma must be non-negative")


ZERO_NOISE = NoiseKnobs()


@dataclass(eq=False)
class World:
    """Extruded floorplan with wall-mounted point landmarks."""

    walls: np.ndarray  # (S, 4) float64 rows [x1, y1, x2, y2]
    ceiling_z: float
    landmark_ids: np.ndarray  # (L,) int64
    landmark_pos: np.ndarray  # (L, 3) float64, on wall surfaces
    goal_landmark: int
    bounds: tuple  # (xmin, ymin, xmax, ymax)
    seed: int
    layout: str
    spec: dict = field(default_factory=dict)
    _geo_cache: dict = field(default_factory=dict, repr=False)

    def landmark_position(self, landmark_id):
        idx = int(np.searchsorted(self.landmark_ids, landmark_id))
        if idx >= len(self.landmark_ids) or self.landmark_ids[idx] != landmark_id:
            raise KeyError(f"unknown landmark {landmark_id}")
        return self.landmark_pos[idx]


@dataclass(eq=False)
class FrameObservation:
    """Rendered frame plus ground-truth landmark visibility."""

    record: FrameRecord
    visible_landmarks: dict  # landmark_id -> (u, v)
    pose: Pose


# ---------------------------------------------------------------------------
# segment geometry (vectorized over walls)
# ---------------------------------------------------------------------------

def point_segment_distance(points, segs):
    """Distances from points (N,2) to segments (S,4); returns (N,S)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 2)[:, None, :]
    a = segs[None, :, 0:2]
    e = segs[None, :, 2:4] - a
    L2 = np.maximum(np.einsum("nse,nse->ns", e, e), 1e-300)
    t = np.clip(np.einsum("nse,nse->ns", p - a, e) / L2, 0.0, 1.0)
    closest = a + t[..., None] * e
    return np.linalg.norm(p - closest, axis=2)


def _cross2(ax, ay, bx, by):
    return ax * by - ay * bx


def segments_intersect(segs_a, segs_b):
    """Proper/improper intersection test between (E,4) and (S,4); (E,S) bool."""
    a = segs_a[:, None, :]
    b = segs_b[None, :, :]
    d1x, d1y = a[..., 2] - a[..., 0], a[..., 3] - a[..., 1]
    d2x, d2y = b[..., 2] - b[..., 0], b[..., 3] - b[..., 1]
    wx, wy = b[..., 0] - a[..., 0], b[..., 1] - a[..., 1]
    denom = _cross2(d1x, d1y, d2x, d2y)
    t = np.where(denom != 0, _cross2(wx, wy, d2x, d2y) / np.where(denom == 0, 1, denom), np.inf)
    s = np.where(denom != 0, _cross2(wx, wy, d1x, d1y) / np.where(denom == 0, 1, denom), np.inf)
    hit = (denom != 0) & (t >= 0) & (t <= 1) & (s >= 0) & (s <= 1)
    return hit


def segment_segment_distance(segs_a, segs_b):
    """Min distance between segment sets (E,4) x (S,4) -> (E,S)."""
    segs_a = np.asarray(segs_a, dtype=np.float64).reshape(-1, 4)
    segs_b = np.asarray(segs_b, dtype=np.float64).reshape(-1, 4)
    d = np.minimum(
        point_segment_distance(segs_a[:, 0:2], segs_b),
        point_segment_distance(segs_a[:, 2:4], segs_b),
    )
    d = np.minimum(d, point_segment_distance(segs_b[:, 0:2], segs_a).T)
    d = np.minimum(d, point_segment_distance(segs_b[:, 2:4], segs_a).T)
    return np.where(segments_intersect(segs_a, segs_b), 0.0, d)


def _wall_clearance(world, seg):
    """Smallest distance from one segment to any wall of the world."""
    return float(segment_segment_distance(np.asarray(seg).reshape(1, 4), world.walls).min())


# ---------------------------------------------------------------------------
# world construction
# ---------------------------------------------------------------------------

def _box_walls(w, h):
    return [(0, 0, w, 0), (w, 0, w, h), (w, h, 0, h), (0, h, 0, 0)]


def _rooms_walls(length, total_depth, spec):
    corridor = float(spec.get("corridor_width", max(3.0, total_depth * 0.45)))
    corridor = min(corridor, total_depth - 2.0)
    depth = total_depth - corridor
    n_rooms = int(spec.get("rooms", 3))
    door = float(spec.get("door_width", 1.4))
    room_w = float(spec.get("room_width", min(4.0, length / (n_rooms + 1))))
    walls = [
        (0, 0, length, 0),
        (0, 0, 0, corridor),
        (length, 0, length, corridor),
    ]
    centers = [length * (i + 1) / (n_rooms + 1) for i in range(n_rooms)]
    cursor = 0.0
    rooms = []
    for cx in centers:
        xl, xr = cx - room_w / 2, cx + room_w / 2
        dl, dr = cx - door / 2, cx + door / 2
        # corridor top wall up to the door gap
        if dl > cursor:
            walls.append((cursor, corridor, dl, corridor))
        cursor = dr
        walls.append((xl, corridor, xl, corridor + depth))
        walls.append((xr, corridor, xr, corridor + depth))
        walls.append((xl, corridor + depth, xr, corridor + depth))
        if xl < dl:
            walls.append((xl, corridor, dl, corridor))
        if dr < xr:
            walls.append((dr, corridor, xr, corridor))
        rooms.append({"x": (xl, xr), "door": (dl, dr), "depth": depth, "corridor": corridor})
    if cursor < length:
        walls.append((cursor, corridor, length, corridor))
    return walls, corridor, rooms


def _check_layout(walls):
    """Reject wall sets whose segments properly cross each other."""
    segs = np.asarray(walls, dtype=np.float64)
    n = len(segs)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = segs[i], segs[j]
            ends_a = {tuple(a[:2]), tuple(a[2:])}
            ends_b = {tuple(b[:2]), tuple(b[2:])}
            if ends_a & ends_b:
                continue
            if segments_intersect(a.reshape(1, 4), b.reshape(1, 4))[0, 0]:
                d = segment_segment_distance(a.reshape(1, 4), b.reshape(1, 4))[0, 0]
                if d == 0.0:
                    # touching at a T-junction is fine; crossing through is not
                    mid_hit = _segment_cross_interior(a, b)
                    if mid_hit:
                        raise DegenerateLayout(f"walls {i} and {j} cross each other")


def _segment_cross_interior(a, b):
    d1 = (a[2] - a[0], a[3] - a[1])
    d2 = (b[2] - b[0], b[3] - b[1])
    denom = _cross2(d1[0], d1[1], d2[0], d2[1])
    if denom == 0:
        return False
    wx, wy = b[0] - a[0], b[1] - a[1]
    t = _cross2(wx, wy, d2[0], d2[1]) / denom
    s = _cross2(wx, wy, d1[0], d1[1]) / denom
    eps = 1e-9
    return eps < t < 1 - eps and eps < s < 1 - eps


def build_world(spec):
    """Build a deterministic World from a waypixel-world v1 spec mapping.

    Required keys: ``layout`` (box | corridor | rooms), ``size`` [a, b] with
    each side in [4, 100] m, ``landmark_density`` (> 0 per meter of wall),
    ``seed``. Optional: ``ceiling``, layout-specific knobs, ``noise``.
    """
    layout = spec.get("layout", "box")
    size = spec.get("size", [8.0, 8.0])
    density = float(spec.get("landmark_density", 8.0))
    seed = int(spec.get("seed", 0))
    ceiling = float(spec.get("ceiling", 2.6))
    if density <= 0:
        raise ValueError("landmark_density must be positive")
    a, b = float(size[0]), float(size[1])
    if not (4.0 <= a <= 100.0 and 4.0 <= b <= 100.0):
        raise ValueError("each world side must be within [4, 100] meters")

    rooms_meta = []
    if layout == "box":
        walls = _box_walls(a, b)
        bounds = (0.0, 0.0, a, b)
    elif layout == "corridor":
        walls = _box_walls(a, b)
        bounds = (0.0, 0.0, a, b)
    elif layout == "rooms":
        walls, corridor, rooms_meta = _rooms_walls(a, b, spec)
        bounds = (0.0, 0.0, a, b)
    else:
        raise ValueError(f"unknown layout kind '{layout}'")
    _check_layout(walls)
    walls = np.asarray(walls, dtype=np.float64)

    rng = _rng(seed, _SALT_WORLD)
    ids, positions = [], []
    next_id = 0
    z_lo, z_hi = 0.15, ceiling - 0.15
    for seg in walls:
        p, q = seg[:2], seg[2:]
        length = float(np.linalg.norm(q - p))
        count = max(1, int(round(length * density)))
        s_vals = np.sort(rng.uniform(0.0, 1.0, count))
        z_vals = rng.uniform(z_lo, z_hi, count)
        for s, z in zip(s_vals, z_vals):
            xy = p + s * (q - p)
            positions.append([xy[0], xy[1], z])
            ids.append(next_id)
            next_id += 1
    landmark_ids = np.asarray(ids, dtype=np.int64)
    landmark_pos = np.asarray(positions, dtype=np.float64)

    # default goal: the landmark deepest along +x (tasks usually override)
    order = np.lexsort((landmark_ids, landmark_pos[:, 1], landmark_pos[:, 0]))
    goal = int(landmark_ids[order[-1]])

    meta = dict(spec)
    meta["rooms_meta"] = rooms_meta
    return World(
        walls=walls,
        ceiling_z=ceiling,
        landmark_ids=landmark_ids,
        landmark_pos=landmark_pos,
        goal_landmark=goal,
        bounds=bounds,
        seed=seed,
        layout=layout,
        spec=meta,
    )


def load_world_spec(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise MalformedFile(f"cannot read world spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"world spec is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != WORLD_SPEC_VERSION:
        raise SchemaViolation("world spec must be an object with version=1")
    return doc


def noise_from_spec(spec):
    n = spec.get("noise", {}) or {}
    return NoiseKnobs(
        point_sigma=float(n.get("point_sigma", 0.0)),
        scale_jitter=float(n.get("scale_jitter", 0.0)),
        match_dropout=float(n.get("match_dropout", 0.0)),
        seed=int(n.get("seed", 0)),
    )


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _camera_basis(pose):
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    right = np.array([s, -c, 0.0])
    down = np.array([0.0, 0.0, -1.0])
    forward = np.array([c, s, 0.0])
    return right, down, forward


def world_to_camera(pose, points):
    """World points (N,3) into the camera frame of ``pose``."""
    right, down, forward = _camera_basis(pose)
    origin = np.array([pose.x, pose.y, pose.sensor_height])
    rel = np.asarray(points, dtype=np.float64).reshape(-1, 3) - origin
    return np.stack([rel @ right, rel @ down, rel @ forward], axis=1)


def camera_to_world(pose, points):
    right, down, forward = _camera_basis(pose)
    origin = np.array([pose.x, pose.y, pose.sensor_height])
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return origin + pts[:, 0:1] * right + pts[:, 1:2] * down + pts[:, 2:3] * forward


def _pixel_directions(k):
    """Camera-frame direction (H*W, 3) through each pixel center, z=1."""
    f = k.focal
    u = (np.arange(k.width) + 0.5 - k.width / 2.0) / f
    v = (np.arange(k.height) + 0.5 - k.height / 2.0) / f
    xu, yv = np.meshgrid(u, v)
    return np.stack([xu.ravel(), yv.ravel(), np.ones(xu.size)], axis=1)


def _ray_hits(world, origin, dirs_world):
    """Nearest positive ray parameter against walls, floor, ceiling."""
    n = dirs_world.shape[0]
    t_best = np.full(n, np.inf)
    ox, oy, oz = origin
    dx, dy, dz = dirs_world[:, 0], dirs_world[:, 1], dirs_world[:, 2]
    for seg in world.walls:
        ex, ey = seg[2] - seg[0], seg[3] - seg[1]
        wx, wy = seg[0] - ox, seg[1] - oy
        denom = dx * ey - dy * ex
        safe = np.abs(denom) > 1e-14
        denom_safe = np.where(safe, denom, 1.0)
        t = (wx * ey - wy * ex) / denom_safe
        s = (wx * dy - wy * dx) / denom_safe
        z_hit = oz + t * dz
        ok = safe & (t > 1e-9) & (s >= 0.0) & (s <= 1.0)
        ok &= (z_hit >= 0.0) & (z_hit <= world.ceiling_z)
        t_best = np.where(ok & (t < t_best), t, t_best)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(dz < -1e-14, (0.0 - oz) / dz, np.inf)
        t_ceil = np.where(dz > 1e-14, (world.ceiling_z - oz) / dz, np.inf)
    t_best = np.minimum(t_best, np.where(t_floor > 1e-9, t_floor, np.inf))
    t_best = np.minimum(t_best, np.where(t_ceil > 1e-9, t_ceil, np.inf))
    return t_best


def _landmark_visibility(world, pose, k, pointmap_cam):
    """Project landmarks; occlusion- and quantization-test each one.

    A landmark only counts as visible when the rendered pointmap entry at
    its pixel coincides with its own camera-frame position within the
    one-pixel quantization bound (1.5 px of angular resolution times
    range). Grazing wall views pack meters of depth into single pixels;
    matching through those pixels would alias distinct 3D points.
    """
    cam = world_to_camera(pose, world.landmark_pos)
    z = cam[:, 2]
    f = k.focal
    with np.errstate(divide="ignore", invalid="ignore"):
        u_c = k.width / 2.0 + f * cam[:, 0] / z
        v_c = k.height / 2.0 + f * cam[:, 1] / z
    in_front = z > 1e-6
    u = np.floor(u_c).astype(np.int64)
    v = np.floor(v_c).astype(np.int64)
    in_view = in_front & (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height)

    quant = np.full(cam.shape[0], np.inf)
    if np.any(in_view):
        rng_all = np.linalg.norm(cam, axis=1)
        pm_at = np.zeros_like(cam)
        pm_at[in_view] = pointmap_cam[v[in_view] * k.width + u[in_view]]
        dev = np.linalg.norm(pm_at - cam, axis=1)
        quant = np.where(in_view, dev, np.inf)
        in_view &= dev <= 1.5 * rng_all / f

    # one landmark per pixel: the claimant closest to the rendered point
    # wins, so correspondences never weld distinct 3D points together
    if np.any(in_view):
        claim = {}
        for i in np.nonzero(in_view)[0]:
            key = (int(v[i]), int(u[i]))
            best = claim.get(key)
            if best is None or (quant[i], world.landmark_ids[i]) < (quant[best], world.landmark_ids[best]):
                claim[key] = int(i)
        owners = np.zeros(cam.shape[0], dtype=bool)
        owners[list(claim.values())] = True
        in_view &= owners

    origin = np.array([pose.x, pose.y, pose.sensor_height])
    visible = {}
    idxs = np.nonzero(in_view)[0]
    if idxs.size == 0:
        return visible
    targets = world.landmark_pos[idxs]
    delta = targets - origin
    dx, dy, dz = delta[:, 0], delta[:, 1], delta[:, 2]
    rng_len = np.linalg.norm(delta[:, :2], axis=1)
    occluded = np.zeros(idxs.size, dtype=bool)
    for seg in world.walls:
        ex, ey = seg[2] - seg[0], seg[3] - seg[1]
        wx, wy = seg[0] - origin[0], seg[1] - origin[1]
        denom = dx * ey - dy * ex
        safe = np.abs(denom) > 1e-14
        denom_safe = np.where(safe, denom, 1.0)
        t = (wx * ey - wy * ex) / denom_safe
        s = (wx * dy - wy * dx) / denom_safe
        z_hit = origin[2] + t * dz
        blocked = safe & (t > 1e-9) & (t < 1.0 - 1e-4) & (s >= 0.0) & (s <= 1.0)
        blocked &= (z_hit >= 0.0) & (z_hit <= world.ceiling_z)
        # ignore essentially-grazing passes right at the landmark's own wall
        occluded |= blocked & (rng_len * (1.0 - t) > 1e-6)
    for pos, lm_idx in enumerate(idxs):
        if not occluded[pos]:
            visible[int(world.landmark_ids[lm_idx])] = (int(u[lm_idx]), int(v[lm_idx]))
    return visible


def render_frame(world, pose, k=None, noise=ZERO_NOISE, frame_id=0):
    """Raycast a dense pointmap and project visible landmarks.

    ``frame_id`` labels the output record and salts the per-frame noise
    streams (scale jitter and point noise must vary frame to frame).
    """
    k = k or Intrinsics()
    dirs_cam = _pixel_directions(k)
    right, down, forward = _camera_basis(pose)
    dirs_world = (
        dirs_cam[:, 0:1] * right + dirs_cam[:, 1:2] * down + dirs_cam[:, 2:3] * forward
    )
    origin = np.array([pose.x, pose.y, pose.sensor_height])
    t = _ray_hits(world, origin, dirs_world)
    valid = np.isfinite(t)
    t_safe = np.where(valid, t, 0.0)
    pointmap = dirs_cam * t_safe[:, None]
    visible = _landmark_visibility(world, pose, k, pointmap)

    if noise.scale_jitter > 0.0:
        s_k = _rng(noise.seed, _SALT_SCALE, frame_id).uniform(
            1.0 - noise.scale_jitter, 1.0 + noise.scale_jitter
        )
        pointmap = pointmap * s_k
    if noise.point_sigma > 0.0:
        g = _rng(noise.seed, _SALT_POINT, frame_id).normal(0.0, noise.point_sigma, pointmap.shape)
        pointmap = pointmap + g
        pointmap[:, 2] = np.maximum(pointmap[:, 2], 1e-6)

    pointmap = np.where(valid[:, None], pointmap, 0.0)
    record = make_frame(frame_id, k.width, k.height, pointmap, valid)
    return FrameObservation(record=record, visible_landmarks=visible, pose=pose)


# ---------------------------------------------------------------------------
# oracle matching and traversal generation
# ---------------------------------------------------------------------------

def oracle_match(obs_a, obs_b, noise=ZERO_NOISE):
    """Ground-truth correspondences: landmarks visible in both frames.

    pixel_i comes from ``obs_a``, pixel_j from ``obs_b``; dropout removes
    each match independently with probability ``noise.match_dropout``.
    """
    ids = sorted(set(obs_a.visible_landmarks) & set(obs_b.visible_landmarks))
    rows = []
    for lm in ids:
        ua, va = obs_a.visible_landmarks[lm]
        ub, vb = obs_b.visible_landmarks[lm]
        rows.append((ua, va, ub, vb))
    pixels = np.asarray(rows, dtype=np.int32).reshape(-1, 4)
    if pixels.shape[0]:
        # distinct landmarks can land on the same pixel pair at low resolution
        pixels = np.unique(pixels, axis=0)
    if noise.match_dropout > 0.0 and pixels.shape[0]:
        rng = _rng(noise.seed, _SALT_DROPOUT, obs_a.record.frame_id, obs_b.record.frame_id)
        keep = rng.random(pixels.shape[0]) >= noise.match_dropout
        pixels = pixels[keep]
    return make_pair(obs_a.record.frame_id, obs_b.record.frame_id, pixels)


def route_length(route):
    pts = np.asarray(route, dtype=np.float64).reshape(-1, 2)
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def sample_route_poses(route, spacing, sensor_height=DEFAULT_SENSOR_HEIGHT,
                       max_yaw_step=math.pi / 6):
    """Poses at arc-length multiples of ``spacing``, yaw along travel.

    Heading changes between consecutive samples larger than ``max_yaw_step``
    get in-place rotation poses inserted (teach runs turn at corners), so
    consecutive frames always share field of view.
    """
    pts = np.asarray(route, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise ValueError("route needs at least two waypoints")
    seg_vecs = np.diff(pts, axis=0)
    seg_lens = np.linalg.norm(seg_vecs, axis=1)
    if np.any(seg_lens < 1e-12):
        raise ValueError("route has zero-length legs")
    cum = np.concatenate([[0.0], np.cumsum(seg_lens)])
    total = cum[-1]
    n_steps = int(math.floor(total / spacing + 1e-9))
    base = []
    for i in range(n_steps + 1):
        s = min(i * spacing, total)
        seg = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg_lens) - 1)
        frac = (s - cum[seg]) / seg_lens[seg]
        xy = pts[seg] + frac * seg_vecs[seg]
        yaw = math.atan2(seg_vecs[seg][1], seg_vecs[seg][0])
        base.append(Pose(float(xy[0]), float(xy[1]), yaw, sensor_height))
    poses = [base[0]]
    for nxt in base[1:]:
        prev = poses[-1]
        dyaw = _wrap_angle(nxt.yaw - prev.yaw)
        n_turn = max(0, int(math.ceil(abs(dyaw) / max_yaw_step)) - 1)
        for i in range(1, n_turn + 1):
            yaw = _wrap_angle(prev.yaw + dyaw * i / (n_turn + 1))
            poses.append(Pose(prev.x, prev.y, yaw, sensor_height))
        poses.append(nxt)
    return poses


def check_route(world, route, clearance=ROBOT_RADIUS):
    pts = np.asarray(route, dtype=np.float64).reshape(-1, 2)
    legs = np.concatenate([pts[:-1], pts[1:]], axis=1)
    d = segment_segment_distance(legs, world.walls)
    if d.min() < clearance - 1e-9:
        leg = int(np.argmin(d.min(axis=1)))
        raise UnreachableRoute(
            f"route leg {leg} passes within {d.min():.3f} m of a wall (< {clearance} m)"
        )


def render_route(world, poses, k=None, noise=ZERO_NOISE, first_frame_id=0):
    return [
        render_frame(world, pose, k, noise, frame_id=first_frame_id + i)
        for i, pose in enumerate(poses)
    ]


def _scan_poses(pose, max_yaw_step=math.pi / 6):
    """Full in-place pan: one pose per yaw increment, ending at the start yaw."""
    n = int(math.ceil(2.0 * math.pi / max_yaw_step))
    return [
        Pose(pose.x, pose.y, _wrap_angle(pose.yaw + 2.0 * math.pi * i / n), pose.sensor_height)
        for i in range(1, n + 1)
    ]


def generate_traversal(world, route, spacing, k=None, window=3, noise=ZERO_NOISE,
                       start_scan=False, end_scan=False):
    """Render a mapping traversal and its windowed oracle match bundle.

    ``start_scan``/``end_scan`` insert a full in-place pan at the route
    endpoints (teach runs sweep the camera there), which anchors the graph
    in all viewing directions around those positions.
    """
    k = k or Intrinsics()
    check_route(world, route)
    poses = sample_route_poses(route, spacing)
    if start_scan:
        poses = _scan_poses(poses[0]) + poses
    if end_scan:
        poses = poses + _scan_poses(poses[-1])
    observations = render_route(world, poses, k, noise)
    pairs = []
    for t in range(len(poses)):
        for delta in range(1, min(window, t) + 1):
            pairs.append(oracle_match(observations[t], observations[t - delta], noise))
    meta = {
        "generator": "waypixel-synthworld/1",
        "world_seed": str(world.seed),
        "layout": world.layout,
        "spacing": repr(float(spacing)),
        "noise_seed": str(noise.seed),
    }
    bundle = MatchBundle(window, [o.record for o in observations], pairs, meta)
    return poses, bundle


# ---------------------------------------------------------------------------
# robot kinematics
# ---------------------------------------------------------------------------

def _wrap_angle(a):
    return math.atan2(math.sin(a), math.cos(a))


def step_robot(world, pose, command):
    """Unicycle step (turn, then translate) with wall-inflation collision.

    Returns (new_pose, collided). On collision the whole update is rejected
    and the original pose is returned unchanged.
    """
    forward = float(command["forward"])
    turn = float(command["turn"])
    if abs(forward) > MAX_FORWARD_PER_STEP + 1e-9:
        raise ValueError(f"|forward| must be <= {MAX_FORWARD_PER_STEP}")
    if abs(turn) > MAX_TURN_PER_STEP + 1e-9:
        raise ValueError(f"|turn| must be <= {MAX_TURN_PER_STEP}")
    yaw = _wrap_angle(pose.yaw + turn)
    nx = pose.x + forward * math.cos(yaw)
    ny = pose.y + forward * math.sin(yaw)
    seg = np.array([[pose.x, pose.y, nx, ny]])
    if segment_segment_distance(seg, world.walls).min() < ROBOT_RADIUS:
        return pose, True
    xmin, ymin, xmax, ymax = world.bounds
    if not (xmin <= nx <= xmax and ymin <= ny <= ymax):
        return pose, True
    return replace(pose, x=nx, y=ny, yaw=yaw), False


# ---------------------------------------------------------------------------
# geodesic distances (visibility graph over inflated wall corners)
# ---------------------------------------------------------------------------

def _corner_vertices(world, clearance):
    offs = clearance + 0.05
    corners = np.concatenate([world.walls[:, 0:2], world.walls[:, 2:4]], axis=0)
    corners = np.unique(corners, axis=0)
    cands = []
    for dx in (-offs, offs):
        for dy in (-offs, offs):
            cands.append(corners + np.array([dx, dy]))
    cands = np.concatenate(cands, axis=0)
    xmin, ymin, xmax, ymax = world.bounds
    inside = (
        (cands[:, 0] > xmin) & (cands[:, 0] < xmax) & (cands[:, 1] > ymin) & (cands[:, 1] < ymax)
    )
    cands = cands[inside]
    if cands.shape[0] == 0:
        return cands
    dist = point_segment_distance(cands, world.walls).min(axis=1)
    return cands[dist >= clearance]


def _visible_pairs(world, pts_a, pts_b, clearance):
    """(len(a), len(b)) bool: straight line keeps clearance from all walls."""
    na, nb = pts_a.shape[0], pts_b.shape[0]
    if na == 0 or nb == 0:
        return np.zeros((na, nb), dtype=bool)
    segs = np.concatenate(
        [np.repeat(pts_a, nb, axis=0), np.tile(pts_b, (na, 1))], axis=1
    )
    dmin = segment_segment_distance(segs, world.walls).min(axis=1)
    return (dmin >= clearance - 1e-9).reshape(na, nb)


def clearance_at(world, xy):
    return float(point_segment_distance(np.asarray(xy).reshape(1, 2), world.walls).min())


def free_point_near(world, xy, clearance=ROBOT_RADIUS, toward=None):
    """Nearest point (deterministic search) with wall clearance.

    Wall-mounted goals sit at zero clearance; metrics measure the path to
    the closest reachable stand-in plus the remaining straight stub. When
    ``toward`` is given (e.g. the pose that observed a landmark), candidates
    march in that direction first, which keeps the stand-in on the reachable
    side of the wall.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(2)
    xmin, ymin, xmax, ymax = world.bounds
    if clearance_at(world, xy) >= clearance:
        return xy
    if toward is not None:
        d = np.asarray(toward, dtype=np.float64).reshape(2) - xy
        norm = float(np.linalg.norm(d))
        if norm > 1e-9:
            d = d / norm
            for radius in np.arange(0.05, 2.01, 0.05):
                cand = xy + radius * d
                if not (xmin < cand[0] < xmax and ymin < cand[1] < ymax):
                    break
                if clearance_at(world, cand) >= clearance:
                    return cand
    angles = np.linspace(0.0, 2.0 * math.pi, 16, endpoint=False)
    for radius in np.arange(0.05, 2.01, 0.05):
        for a in angles:
            cand = xy + radius * np.array([math.cos(a), math.sin(a)])
            if not (xmin < cand[0] < xmax and ymin < cand[1] < ymax):
                continue
            if clearance_at(world, cand) >= clearance:
                return cand
    return xy


def geodesic_distance(world, start, goal, clearance=ROBOT_RADIUS):
    """Shortest collision-free path length between two 2D points.

    Endpoints without wall clearance (e.g. wall-mounted landmarks) are
    measured via their nearest free stand-in plus the straight remainder.
    """
    start0 = np.asarray(start, dtype=np.float64).reshape(2)
    goal0 = np.asarray(goal, dtype=np.float64).reshape(2)
    start = free_point_near(world, start0, clearance)
    goal = free_point_near(world, goal0, clearance)
    stub = float(np.linalg.norm(start - start0) + np.linalg.norm(goal - goal0))
    direct = _visible_pairs(world, start.reshape(1, 2), goal.reshape(1, 2), clearance)[0, 0]
    euclid = float(np.linalg.norm(goal - start))
    if direct:
        return euclid + stub

    key = round(clearance, 6)
    cached = world._geo_cache.get(key)
    if cached is None:
        corners = _corner_vertices(world, clearance)
        vis = _visible_pairs(world, corners, corners, clearance)
        np.fill_diagonal(vis, False)
        cached = (corners, vis)
        world._geo_cache[key] = cached
    corners, vis = cached

    pts = np.concatenate([start.reshape(1, 2), goal.reshape(1, 2), corners], axis=0)
    n = pts.shape[0]
    adj = np.zeros((n, n), dtype=bool)
    adj[2:, 2:] = vis
    ends = _visible_pairs(world, pts[:2], corners, clearance)
    adj[0, 2:] = ends[0]
    adj[2:, 0] = ends[0]
    adj[1, 2:] = ends[1]
    adj[2:, 1] = ends[1]
    src, dst = np.nonzero(adj)
    w = np.linalg.norm(pts[src] - pts[dst], axis=1)
    graph = csr_matrix((w, (src, dst)), shape=(n, n))
    dist = _csgraph_dijkstra(graph, directed=False, indices=0)
    return float(dist[1]) + stub
