"""Goal-conditioned cost computation over the pixel graph.

Pipeline for one query frame: Dijkstra costs-to-goal over the graph, bridge
each matched reference pixel to its cheapest graph node (local 3D distance
plus known cost), pick the reference frame with the lowest median bridged
cost, transfer costs onto the matched query pixels, then propagate to every
valid pixel by minimizing local-distance-plus-cost over the matched set.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptySparseSet,
    GoalNotInGraph,
    NoLocalizedFrame,
    NoReachableNode,
)


@dataclass(eq=False)
class CostField:
    """Cost-to-goal for every node (graph metric, meters); inf = unreachable."""

    goal: tuple
    costs: np.ndarray  # (n,) float64 aligned with the graph node table

    def cost(self, graph, node_id):
        return float(self.costs[graph.index_of(node_id)])


@dataclass(eq=False)
class SparseCostmap:
    """Costs transferred onto the query pixels matched against r*."""

    frame_id: int
    ref_frame: int
    pixels: np.ndarray  # (k, 2) int32 [u, v], lexicographically sorted
    costs: np.ndarray  # (k,) float64

    def __len__(self):
        return int(self.pixels.shape[0])


@dataclass(eq=False)
class WayPixelCostmap:
    """Dense per-pixel cost-to-goal for one query frame.

    Matched pixels carry their transferred sparse cost; every other valid
    pixel carries min over matched pixels of (3D distance + matched cost).
    ``provenance`` holds the index (into the sparse entry list) of the
    minimizing source, -1 where invalid.
    """

    frame_id: int
    values: np.ndarray  # (h, w) float64, +inf where invalid
    valid: np.ndarray  # (h, w) bool
    provenance: np.ndarray  # (h, w) int32
    sparse: SparseCostmap


@dataclass(eq=False)
class CostmapEmbedding:
    channels: np.ndarray  # (h, w, K) float32 in [-1, 1]
    wavelengths: np.ndarray  # (K/2,) float64


def goal_costs(graph, goal):
    """Single-source shortest-path cost from every node to ``goal``.

    Plain binary-heap Dijkstra with vectorized edge relaxation per pop;
    valid because all weights are non-negative (inter edges are zero).
    """
    try:
        goal_idx = graph.index_of(goal)
    except KeyError as exc:
        raise GoalNotInGraph(str(exc)) from exc
    indptr, nbrs, w = graph.adjacency()
    n = graph.num_nodes
    dist = np.full(n, np.inf)
    src = graph.representative(goal_idx) if graph.merged else goal_idx
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        lo, hi = indptr[u], indptr[u + 1]
        if lo == hi:
            continue
        vs = nbrs[lo:hi]
        nd = d + w[lo:hi]
        better = nd < dist[vs]
        if np.any(better):
            for v, cand in zip(vs[better], nd[better]):
                dist[v] = cand
                heapq.heappush(heap, (cand, int(v)))
    if graph.merged:
        dist = dist[graph.merge_parent]
    return CostField(goal=tuple(goal), costs=dist)


def bridge_cost(point, frame_id, graph, field):
    """Cheapest way to enter the cost field from ``point`` via one frame.

    Minimizes 3D distance to a node of ``frame_id`` plus that node's cost;
    ties resolve to the lexicographically smallest node id.
    """
    total, order = _bridge_many(np.asarray(point, dtype=np.float64).reshape(1, 3),
                                frame_id, graph, field)
    if not math.isfinite(total[0]):
        raise NoReachableNode(f"frame {frame_id} has no finite-cost node")
    return float(total[0]), graph.node_id(order[0])


def _bridge_many(points, frame_id, graph, field):
    """Vectorized bridge: (m,) best totals and (m,) arg-min node indices."""
    lo, hi = graph.frame_slice(frame_id)
    if hi == lo:
        raise NoReachableNode(f"frame {frame_id} owns no graph nodes")
    node_pts = graph.points[lo:hi].astype(np.float64)
    node_costs = field.costs[lo:hi]
    d = np.linalg.norm(points[:, None, :] - node_pts[None, :, :], axis=2)
    totals = d + node_costs[None, :]
    best = np.argmin(totals, axis=1)  # first minimum = smallest node id
    return totals[np.arange(points.shape[0]), best], best + lo


def _lower_median(values):
    s = np.sort(values)
    return float(s[(len(s) - 1) // 2])


def bridge_frame_matches(ref_pixels, ref_record, frame_id, graph, field):
    """Bridge every matched reference pixel of one submap frame.

    Returns (costs (m,), bridge_node_indices (m,)); entries are +inf where
    no finite-cost node exists (callers filter).
    """
    pts = ref_record.pointmap[ref_pixels[:, 1], ref_pixels[:, 0]].astype(np.float64)
    return _bridge_many(pts, frame_id, graph, field)


@dataclass(eq=False)
class QueryView:
    """Everything the planner needs about one live query frame.

    ``matches`` maps a map frame id to an (m, 4) int array with columns
    [u_query, v_query, u_ref, v_ref]; ``ref_records`` maps the same ids to
    the map frames' FrameRecords (for off-graph reference pixel geometry).
    """

    record: object
    matches: dict
    ref_records: dict


def select_reference(query, field, graph):
    """Eq.-style reference frame choice: lowest median bridged cost.

    Ties prefer the frame with more bridged matches, then the lower id.
    Frames whose matches all fail to bridge are skipped.
    """
    best = None
    for frame_id in sorted(query.matches):
        m = query.matches[frame_id]
        if m.shape[0] == 0:
            continue
        lo, hi = graph.frame_slice(frame_id)
        if hi == lo:
            continue
        costs, _ = bridge_frame_matches(m[:, 2:4], query.ref_records[frame_id],
                                        frame_id, graph, field)
        finite = np.isfinite(costs)
        if not np.any(finite):
            continue
        med = _lower_median(costs[finite])
        key = (med, -int(finite.sum()), frame_id)
        if best is None or key < best[0]:
            best = (key, frame_id)
    if best is None:
        raise NoLocalizedFrame("no submap frame produced a bridgeable match")
    return best[1]


def sparse_costmap(query, r_star, field, graph):
    """Transfer bridged reference costs onto the matched query pixels.

    Many-to-many matches may hit one query pixel repeatedly; the minimum
    cost wins. Entries come out sorted by (u, v).
    """
    m = query.matches[r_star]
    costs, _ = bridge_frame_matches(m[:, 2:4], query.ref_records[r_star],
                                    r_star, graph, field)
    finite = np.isfinite(costs)
    qpix = m[finite, 0:2].astype(np.int32)
    costs = costs[finite]
    if qpix.shape[0] == 0:
        raise EmptySparseSet(f"no finite bridged cost against frame {r_star}")
    order = np.lexsort((costs, qpix[:, 1], qpix[:, 0]))
    qpix, costs = qpix[order], costs[order]
    first = np.ones(qpix.shape[0], dtype=bool)
    first[1:] = np.any(qpix[1:] != qpix[:-1], axis=1)
    return SparseCostmap(
        frame_id=query.record.frame_id,
        ref_frame=r_star,
        pixels=qpix[first],
        costs=costs[first],
    )


def densify_costmap(sparse, record, pruned=True, chunk=32):
    """Propagate sparse costs to every valid pixel (dense WayPixel costmap).

    Exact by construction: the pruned path sorts sources by cost and stops
    once the next source cost alone cannot beat any pixel's current best,
    which never changes the minimum. Matched pixels keep their transferred
    cost verbatim.
    """
    if len(sparse) == 0:
        raise EmptySparseSet("sparse costmap has no entries")
    h, w = record.height, record.width
    valid = record.valid_mask
    if not np.all(valid[sparse.pixels[:, 1], sparse.pixels[:, 0]]):
        raise ValueError("sparse entry at invalid pointmap pixel")

    # visit sources in (cost, entry index) order in both modes so the
    # arg-min tie-break is identical with and without pruning
    order = np.lexsort((np.arange(len(sparse)), sparse.costs))
    src_pts = sparse.pixels[order]
    src_costs = sparse.costs[order]
    src_xyz = record.pointmap[src_pts[:, 1], src_pts[:, 0]].astype(np.float64)

    pix_xyz = record.pointmap[valid].astype(np.float64)
    n_pix = pix_xyz.shape[0]
    best = np.full(n_pix, np.inf)
    best_src = np.full(n_pix, -1, dtype=np.int64)

    m = src_xyz.shape[0]
    step = m if not pruned else max(1, int(chunk))
    for s0 in range(0, m if n_pix else 0, step):
        if pruned and s0 > 0 and src_costs[s0] >= best.max():
            break
        s1 = min(s0 + step, m)
        d = np.linalg.norm(pix_xyz[:, None, :] - src_xyz[None, s0:s1, :], axis=2)
        totals = d + src_costs[None, s0:s1]
        j = np.argmin(totals, axis=1)
        cand = totals[np.arange(n_pix), j]
        improve = cand < best
        best[improve] = cand[improve]
        best_src[improve] = j[improve] + s0

    values = np.full((h, w), np.inf)
    prov = np.full((h, w), -1, dtype=np.int32)
    values[valid] = best
    prov[valid] = order[best_src]  # back to original sparse entry indices

    # matched pixels carry their transferred cost exactly
    values[sparse.pixels[:, 1], sparse.pixels[:, 0]] = sparse.costs
    prov[sparse.pixels[:, 1], sparse.pixels[:, 0]] = np.arange(len(sparse), dtype=np.int32)
    return WayPixelCostmap(
        frame_id=record.frame_id, values=values, valid=valid.copy(),
        provenance=prov, sparse=sparse,
    )


def encode_costmap(costmap, k_channels=16, lambda_max=64.0):
    """Sinusoidal embedding of the scalar costs, interleaved sin/cos pairs.

    Wavelengths run geometrically from 1 m to ``lambda_max``; invalid
    pixels encode to all-zero.
    """
    if k_channels < 2 or k_channels % 2:
        raise ValueError("k_channels must be even and >= 2")
    lam = np.geomspace(1.0, lambda_max, k_channels // 2)
    h, w = costmap.values.shape
    out = np.zeros((h, w, k_channels), dtype=np.float32)
    ok = costmap.valid & np.isfinite(costmap.values)
    c = costmap.values[ok]
    for j, wavelength in enumerate(lam):
        phase = c / wavelength
        out[ok, 2 * j] = np.sin(phase)
        out[ok, 2 * j + 1] = np.cos(phase)
    return CostmapEmbedding(channels=out, wavelengths=lam)


def plan_query(query, field, graph, pruned=True):
    """Full per-frame pipeline: reference choice, transfer, densification."""
    r_star = select_reference(query, field, graph)
    sparse = sparse_costmap(query, r_star, field, graph)
    dense = densify_costmap(sparse, query.record, pruned=pruned)
    return dense
