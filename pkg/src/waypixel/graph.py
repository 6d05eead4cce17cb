"""Pixel-level topological map built from a match bundle.

Nodes are matched pixels keyed by (frame_id, u, v). Correspondences become
zero-cost inter-frame edges; pixels of one frame are linked by intra-frame
edges weighted by the 3D Euclidean distance between their pointmap entries.
Intra-frame connectivity is pluggable: exhaustive, EMST, or k-NN with
spanning-tree augmentation. Node merging contracts correspondence classes.
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyGraph, InvariantViolation, IoFailure, MalformedFile, SchemaViolation
from .frameio import validate_bundle

GRAPH_VERSION = 1

STRATEGIES = ("exhaustive", "emst", "knn")


@dataclass(frozen=True)
class GraphBuildConfig:
    """Knobs controlling graph construction.

    ``window`` of None means "use the bundle's declared window".
    ``subsample_factor`` f keeps each correspondence with probability 1/f.
    """

    window: int | None = None
    subsample_factor: float = 1.0
    strategy: str = "emst"
    knn_k: int = 8
    merge_nodes: bool = False
    seed: int = 0

    def validate(self):
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.subsample_factor < 1.0:
            raise ValueError("subsample_factor must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.strategy == "knn" and self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")


@dataclass
class GraphStats:
    num_frames: int
    num_nodes: int
    num_intra_edges: int
    num_inter_edges: int
    disk_bytes: int
    time_intra_s: float = 0.0
    time_weights_s: float = 0.0
    time_dijkstra_s: float = 0.0

    def as_dict(self):
        return dict(self.__dict__)


def _pack_keys(frame, u, v):
    return (
        np.asarray(frame, dtype=np.int64) << 32
        | np.asarray(u, dtype=np.int64) << 16
        | np.asarray(v, dtype=np.int64)
    )


@dataclass(eq=False)
class PixelGraph:
    """Immutable pixel graph; node table sorted lexicographically by id.

    ``merge_parent`` maps each node index to its class representative (the
    identity permutation while merging is disabled). When merged, intra
    edges connect representatives and inter edges are gone.
    """

    node_keys: np.ndarray  # (n,) int64 packed (frame, u, v), sorted
    node_ids: np.ndarray  # (n, 3) int32 rows [frame, u, v]
    points: np.ndarray  # (n, 3) float32 camera-frame positions
    inter_edges: np.ndarray  # (m, 2) int32 node indices, weight 0
    intra_src: np.ndarray  # (k,) int32
    intra_dst: np.ndarray  # (k,) int32
    intra_w: np.ndarray  # (k,) float64
    frame_slices: dict  # frame_id -> (lo, hi) into the node table
    merge_parent: np.ndarray  # (n,) int32 representative index
    merged: bool
    num_bundle_frames: int
    config: GraphBuildConfig
    _adjacency: tuple | None = field(default=None, repr=False)

    @property
    def num_nodes(self):
        return int(self.node_keys.shape[0])

    @property
    def num_intra_edges(self):
        return int(self.intra_src.shape[0])

    @property
    def num_inter_edges(self):
        return int(self.inter_edges.shape[0])

    def frames_with_nodes(self):
        return sorted(f for f, (lo, hi) in self.frame_slices.items() if hi > lo)

    def index_of(self, node_id):
        """Node-table index of (frame, u, v); KeyError when absent."""
        key = _pack_keys(node_id[0], node_id[1], node_id[2])
        idx = int(np.searchsorted(self.node_keys, key))
        if idx >= self.num_nodes or self.node_keys[idx] != key:
            raise KeyError(f"no node {tuple(node_id)}")
        return idx

    def node_id(self, index):
        f, u, v = self.node_ids[index]
        return (int(f), int(u), int(v))

    def frame_slice(self, frame_id):
        return self.frame_slices.get(frame_id, (0, 0))

    def frame_nodes(self, frame_id):
        lo, hi = self.frame_slice(frame_id)
        return np.arange(lo, hi, dtype=np.int64)

    def representative(self, index):
        return int(self.merge_parent[index])

    def adjacency(self):
        """CSR adjacency (indptr, indices, weights) over effective nodes.

        Effective nodes are representatives; with merging disabled that is
        every node and inter edges participate with weight zero.
        """
        if self._adjacency is None:
            if self.merged:
                src = self.merge_parent[self.intra_src].astype(np.int64)
                dst = self.merge_parent[self.intra_dst].astype(np.int64)
                w = self.intra_w
            else:
                src = np.concatenate([self.intra_src, self.inter_edges[:, 0]]).astype(np.int64)
                dst = np.concatenate([self.intra_dst, self.inter_edges[:, 1]]).astype(np.int64)
                w = np.concatenate([self.intra_w, np.zeros(self.num_inter_edges)])
            all_src = np.concatenate([src, dst])
            all_dst = np.concatenate([dst, src])
            all_w = np.concatenate([w, w])
            order = np.argsort(all_src, kind="stable")
            all_src, all_dst, all_w = all_src[order], all_dst[order], all_w[order]
            indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
            np.add.at(indptr, all_src + 1, 1)
            np.cumsum(indptr, out=indptr)
            self._adjacency = (indptr, all_dst, all_w)
        return self._adjacency


# ---------------------------------------------------------------------------
# intra-frame connectivity strategies (local indices over one frame's nodes)
# ---------------------------------------------------------------------------

def _euclid(points, i, j):
    d = points[i].astype(np.float64) - points[j].astype(np.float64)
    return np.linalg.norm(d, axis=-1)


def intra_edges_exhaustive(points):
    """Every pair of the frame's nodes; returns (pairs (m,2), weights (m,))."""
    n = points.shape[0]
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    iu, ju = np.triu_indices(n, k=1)
    pairs = np.stack([iu, ju], axis=1)
    return pairs, _euclid(points, iu, ju)


def intra_edges_emst(points):
    """Euclidean minimum spanning tree via Prim with a full O(n^2) scan.

    Ties in candidate distance resolve to the smallest node index, which is
    lexicographic on node id because the node table is sorted.
    """
    n = points.shape[0]
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    pts = points.astype(np.float64)
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best_d = np.linalg.norm(pts - pts[0], axis=1)
    best_parent = np.zeros(n, dtype=np.int64)
    best_d[0] = np.inf
    edges = np.zeros((n - 1, 2), dtype=np.int64)
    weights = np.zeros(n - 1)
    for e in range(n - 1):
        masked = np.where(in_tree, np.inf, best_d)
        j = int(np.argmin(masked))
        p = int(best_parent[j])
        edges[e] = (min(p, j), max(p, j))
        weights[e] = best_d[j]
        in_tree[j] = True
        d_new = np.linalg.norm(pts - pts[j], axis=1)
        closer = (~in_tree) & (d_new < best_d)
        best_d[closer] = d_new[closer]
        best_parent[closer] = j
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order], weights[order]


def intra_edges_knn(points, k):
    """Union of per-node k nearest neighbors, kept connected.

    If the symmetric k-NN graph splits into components, the EMST edges that
    bridge distinct components are added so each frame stays one piece.
    """
    n = points.shape[0]
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    k_eff = min(k, n - 1)
    pts = points.astype(np.float64)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(dist, np.inf)
    edge_set = set()
    for i in range(n):
        order = np.argsort(dist[i], kind="stable")[:k_eff]
        for j in order:
            edge_set.add((min(i, int(j)), max(i, int(j))))

    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edge_set:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = {find(i) for i in range(n)}
    if len(roots) > 1:
        mst_pairs, _ = intra_edges_emst(points)
        for a, b in mst_pairs:
            ra, rb = find(int(a)), find(int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
                edge_set.add((int(a), int(b)))
    pairs = np.asarray(sorted(edge_set), dtype=np.int64).reshape(-1, 2)
    return pairs, _euclid(points, pairs[:, 0], pairs[:, 1])


_STRATEGY_FNS = {
    "exhaustive": lambda pts, cfg: intra_edges_exhaustive(pts),
    "emst": lambda pts, cfg: intra_edges_emst(pts),
    "knn": lambda pts, cfg: intra_edges_knn(pts, cfg.knn_k),
}


# ---------------------------------------------------------------------------
# graph construction
# ---------------------------------------------------------------------------

def _subsampled_matches(bundle, cfg, window):
    """Surviving (key_i, key_j) correspondence arrays after Bernoulli keep."""
    keys_i, keys_j = [], []
    keep_rate = 1.0 / cfg.subsample_factor
    for pair in bundle.pairs:
        if pair.frame_i - pair.frame_j > window or len(pair) == 0:
            continue
        px = pair.pixels
        if cfg.subsample_factor > 1.0:
            rng = np.random.default_rng(
                [cfg.seed & 0x7FFFFFFF, pair.frame_i, pair.frame_j]
            )
            keep = rng.random(px.shape[0]) < keep_rate
            px = px[keep]
        if px.shape[0] == 0:
            continue
        keys_i.append(_pack_keys(pair.frame_i, px[:, 0], px[:, 1]))
        keys_j.append(_pack_keys(pair.frame_j, px[:, 2], px[:, 3]))
    if not keys_i:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(keys_i), np.concatenate(keys_j)


def build_graph(bundle, cfg=GraphBuildConfig(), timings=None):
    """Build the pixel graph from a validated bundle.

    ``timings`` (optional dict) receives wall-clock entries ``intra_s`` and
    ``weights_s`` for the benchmark harness.
    """
    cfg.validate()
    report = validate_bundle(bundle)
    if not report.ok:
        raise InvariantViolation(f"refusing to build from invalid bundle: {report.summary()}", report)
    window = cfg.window if cfg.window is not None else bundle.window_size

    keys_i, keys_j = _subsampled_matches(bundle, cfg, window)
    if keys_i.size == 0:
        raise EmptyGraph("no correspondences survived subsampling")

    node_keys = np.unique(np.concatenate([keys_i, keys_j]))
    n = node_keys.shape[0]
    frames = (node_keys >> 32).astype(np.int32)
    us = ((node_keys >> 16) & 0xFFFF).astype(np.int32)
    vs = (node_keys & 0xFFFF).astype(np.int32)
    node_ids = np.stack([frames, us, vs], axis=1)

    points = np.zeros((n, 3), dtype=np.float32)
    frame_slices = {}
    for f in range(len(bundle.frames)):
        lo = int(np.searchsorted(node_keys, np.int64(f) << 32))
        hi = int(np.searchsorted(node_keys, np.int64(f + 1) << 32))
        frame_slices[f] = (lo, hi)
        if hi > lo:
            pm = bundle.frames[f].pointmap
            points[lo:hi] = pm[vs[lo:hi], us[lo:hi]]

    inter = np.stack(
        [np.searchsorted(node_keys, keys_i), np.searchsorted(node_keys, keys_j)], axis=1
    ).astype(np.int32)
    inter = np.unique(np.sort(inter, axis=1), axis=0)

    strategy_fn = _STRATEGY_FNS[cfg.strategy]
    intra_src, intra_dst, intra_w = [], [], []
    t0 = time.perf_counter()
    for f, (lo, hi) in frame_slices.items():
        if hi - lo < 2:
            continue
        pairs, w = strategy_fn(points[lo:hi], cfg)
        intra_src.append(pairs[:, 0] + lo)
        intra_dst.append(pairs[:, 1] + lo)
        intra_w.append(w)
    t_intra = time.perf_counter() - t0

    if intra_src:
        src = np.concatenate(intra_src).astype(np.int32)
        dst = np.concatenate(intra_dst).astype(np.int32)
    else:
        src = np.zeros(0, dtype=np.int32)
        dst = np.zeros(0, dtype=np.int32)

    # dedicated weight pass so the benchmark can report it separately
    t0 = time.perf_counter()
    w = _euclid(points, src.astype(np.int64), dst.astype(np.int64)) if src.size else np.zeros(0)
    t_weights = time.perf_counter() - t0

    if timings is not None:
        timings["intra_s"] = t_intra
        timings["weights_s"] = t_weights

    graph = PixelGraph(
        node_keys=node_keys,
        node_ids=node_ids,
        points=points,
        inter_edges=inter,
        intra_src=src,
        intra_dst=dst,
        intra_w=w,
        frame_slices=frame_slices,
        merge_parent=np.arange(n, dtype=np.int32),
        merged=False,
        num_bundle_frames=len(bundle.frames),
        config=cfg,
    )
    if cfg.merge_nodes:
        graph = merge_nodes(graph)
    return graph


def merge_nodes(graph):
    """Contract correspondence classes into their representatives.

    The representative of a class is its lexicographically smallest node id.
    Intra edges are remapped onto representatives; self-loops drop out and
    parallel edges keep the minimum weight, which preserves shortest paths.
    """
    if graph.merged:
        raise ValueError("graph is already merged")
    n = graph.num_nodes
    parent = np.arange(n, dtype=np.int64)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for a, b in graph.inter_edges:
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            if ra < rb:
                parent[rb] = ra
            else:
                parent[ra] = rb
    roots = np.array([find(i) for i in range(n)], dtype=np.int32)

    src = roots[graph.intra_src]
    dst = roots[graph.intra_dst]
    keep = src != dst
    src, dst, w = src[keep], dst[keep], graph.intra_w[keep]
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    if lo.size:
        order = np.lexsort((w, hi, lo))
        lo, hi, w = lo[order], hi[order], w[order]
        first = np.ones(lo.size, dtype=bool)
        first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        lo, hi, w = lo[first], hi[first], w[first]

    return replace(
        graph,
        inter_edges=np.zeros((0, 2), dtype=np.int32),
        intra_src=lo.astype(np.int32),
        intra_dst=hi.astype(np.int32),
        intra_w=w,
        merge_parent=roots,
        merged=True,
        _adjacency=None,
    )


# ---------------------------------------------------------------------------
# serialization (waypixel-graph v1) and stats
# ---------------------------------------------------------------------------

_NODE_DTYPE = np.dtype([("frame", "<u2"), ("u", "<u2"), ("v", "<u2"),
                        ("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
_EDGE_DTYPE = np.dtype([("src", "<u4"), ("dst", "<u4"), ("w", "<f4")])


def serialize_graph(graph):
    """Canonical byte serialization; identical graphs give identical bytes."""
    nodes = np.zeros(graph.num_nodes, dtype=_NODE_DTYPE)
    nodes["frame"] = graph.node_ids[:, 0]
    nodes["u"] = graph.node_ids[:, 1]
    nodes["v"] = graph.node_ids[:, 2]
    nodes["x"], nodes["y"], nodes["z"] = graph.points[:, 0], graph.points[:, 1], graph.points[:, 2]

    intra = np.zeros(graph.num_intra_edges, dtype=_EDGE_DTYPE)
    intra["src"], intra["dst"] = graph.intra_src, graph.intra_dst
    intra["w"] = graph.intra_w.astype(np.float32)
    inter = np.zeros(graph.num_inter_edges, dtype=_EDGE_DTYPE)
    if graph.num_inter_edges:
        inter["src"], inter["dst"] = graph.inter_edges[:, 0], graph.inter_edges[:, 1]

    cfg = graph.config
    doc = {
        "version": GRAPH_VERSION,
        "config": {
            "window": cfg.window,
            "subsample_factor": cfg.subsample_factor,
            "strategy": cfg.strategy,
            "knn_k": cfg.knn_k,
            "merge_nodes": cfg.merge_nodes,
            "seed": cfg.seed,
        },
        "counts": {
            "frames": graph.num_bundle_frames,
            "nodes": graph.num_nodes,
            "intra_edges": graph.num_intra_edges,
            "inter_edges": graph.num_inter_edges,
        },
        "merged": graph.merged,
        "nodes_b64": base64.b64encode(nodes.tobytes()).decode("ascii"),
        "intra_edges_b64": base64.b64encode(intra.tobytes()).decode("ascii"),
        "inter_edges_b64": base64.b64encode(inter.tobytes()).decode("ascii"),
        "merge_parent_b64": base64.b64encode(
            graph.merge_parent.astype("<i4").tobytes()
        ).decode("ascii"),
    }
    return (json.dumps(doc, separators=(",", ":")) + "\n").encode("utf-8")


def save_graph(graph, path):
    try:
        with open(path, "wb") as fh:
            fh.write(serialize_graph(graph))
    except OSError as exc:
        raise IoFailure(f"cannot write graph to {path}: {exc}") from exc


def load_graph(path):
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read graph from {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"graph file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != GRAPH_VERSION:
        raise SchemaViolation("graph file must be an object with version=1")
    counts = doc["counts"]
    nodes = np.frombuffer(base64.b64decode(doc["nodes_b64"]), dtype=_NODE_DTYPE)
    intra = np.frombuffer(base64.b64decode(doc["intra_edges_b64"]), dtype=_EDGE_DTYPE)
    inter = np.frombuffer(base64.b64decode(doc["inter_edges_b64"]), dtype=_EDGE_DTYPE)
    parent = np.frombuffer(base64.b64decode(doc["merge_parent_b64"]), dtype="<i4")
    if nodes.size != counts["nodes"] or intra.size != counts["intra_edges"]:
        raise SchemaViolation("graph payload sizes disagree with counts")

    node_ids = np.stack(
        [nodes["frame"].astype(np.int32), nodes["u"].astype(np.int32), nodes["v"].astype(np.int32)],
        axis=1,
    )
    node_keys = _pack_keys(node_ids[:, 0], node_ids[:, 1], node_ids[:, 2])
    points = np.stack([nodes["x"], nodes["y"], nodes["z"]], axis=1).astype(np.float32)
    frame_slices = {}
    for f in range(counts["frames"]):
        lo = int(np.searchsorted(node_keys, np.int64(f) << 32))
        hi = int(np.searchsorted(node_keys, np.int64(f + 1) << 32))
        frame_slices[f] = (lo, hi)
    c = doc["config"]
    cfg = GraphBuildConfig(
        window=c["window"],
        subsample_factor=c["subsample_factor"],
        strategy=c["strategy"],
        knn_k=c["knn_k"],
        merge_nodes=c["merge_nodes"],
        seed=c["seed"],
    )
    return PixelGraph(
        node_keys=node_keys,
        node_ids=node_ids,
        points=points,
        inter_edges=np.stack(
            [inter["src"].astype(np.int32), inter["dst"].astype(np.int32)], axis=1
        ).reshape(-1, 2),
        intra_src=intra["src"].astype(np.int32),
        intra_dst=intra["dst"].astype(np.int32),
        intra_w=intra["w"].astype(np.float64),
        frame_slices=frame_slices,
        merge_parent=parent.astype(np.int32),
        merged=bool(doc["merged"]),
        num_bundle_frames=counts["frames"],
        config=cfg,
    )


def graph_stats(graph, timings=None):
    """Exact counts plus the size of the canonical serialization."""
    timings = timings or {}
    return GraphStats(
        num_frames=graph.num_bundle_frames,
        num_nodes=graph.num_nodes,
        num_intra_edges=graph.num_intra_edges,
        num_inter_edges=graph.num_inter_edges,
        disk_bytes=len(serialize_graph(graph)),
        time_intra_s=float(timings.get("intra_s", 0.0)),
        time_weights_s=float(timings.get("weights_s", 0.0)),
        time_dijkstra_s=float(timings.get("dijkstra_s", 0.0)),
    )
