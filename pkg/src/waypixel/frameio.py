"""Match-bundle interchange format (``waypixel-bundle v1``).

A bundle decouples the mapping/planning engine from whatever produced the
correspondences: per-frame dense pointmaps plus pairwise pixel matches for a
traversal sequence, stored as a single UTF-8 JSON file with base64-encoded
binary payloads for the dense arrays.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, IoFailure, MalformedFile, SchemaViolation

BUNDLE_VERSION = 1


@dataclass(eq=False)
class FrameRecord:
    """One frame of the traversal: dense camera-frame pointmap + validity.

    ``pointmap`` has shape (height, width, 3), float32, meters, row-major;
    ``valid_mask`` has shape (height, width), bool. Camera convention is
    x-right, y-down, z-forward, so valid points must have z > 0.
    """

    frame_id: int
    width: int
    height: int
    pointmap: np.ndarray
    valid_mask: np.ndarray

    def point_at(self, u, v):
        """Camera-frame 3D point of pixel (u, v)."""
        return self.pointmap[v, u]


@dataclass(eq=False)
class PairRecord:
    """Pixel correspondences between frame_i (current) and frame_j (past).

    ``pixels`` has shape (n, 4) int32 columns [u_i, v_i, u_j, v_j];
    ``confidence`` has shape (n,) float32 in [0, 1].
    """

    frame_i: int
    frame_j: int
    pixels: np.ndarray
    confidence: np.ndarray

    def __len__(self):
        return int(self.pixels.shape[0])


@dataclass(eq=False)
class MatchBundle:
    """Ordered frames plus windowed pairwise correspondences."""

    window_size: int
    frames: list[FrameRecord]
    pairs: list[PairRecord]
    meta: dict[str, str] = field(default_factory=dict)

    def frame(self, frame_id):
        return self.frames[frame_id]


@dataclass
class ValidationEntry:
    location: str
    message: str


@dataclass
class ValidationReport:
    entries: list[ValidationEntry] = field(default_factory=list)

    @property
    def ok(self):
        return not self.entries

    def add(self, location, message):
        self.entries.append(ValidationEntry(location, message))

    def summary(self):
        return "; ".join(f"{e.location}: {e.message}" for e in self.entries)


def make_frame(frame_id, width, height, pointmap, valid_mask):
    """Normalize dtypes/shapes into a FrameRecord."""
    pm = np.ascontiguousarray(pointmap, dtype=np.float32).reshape(height, width, 3)
    vm = np.ascontiguousarray(valid_mask, dtype=bool).reshape(height, width)
    return FrameRecord(int(frame_id), int(width), int(height), pm, vm)


def make_pair(frame_i, frame_j, pixels, confidence=None):
    px = np.ascontiguousarray(pixels, dtype=np.int32).reshape(-1, 4)
    if confidence is None:
        conf = np.ones(px.shape[0], dtype=np.float32)
    else:
        conf = np.ascontiguousarray(confidence, dtype=np.float32).reshape(-1)
    return PairRecord(int(frame_i), int(frame_j), px, conf)


def validate_bundle(bundle):
    """Check every bundle invariant; violations become report entries.

    Never raises: an empty report means the bundle is valid.
    """
    rep = ValidationReport()
    if bundle.window_size < 1:
        rep.add("bundle", f"window_size must be >= 1, got {bundle.window_size}")

    ids = [f.frame_id for f in bundle.frames]
    if ids != list(range(len(ids))):
        rep.add("frames", f"frame ids not contiguous 0..{len(ids) - 1}: {ids[:8]}")

    for f in bundle.frames:
        loc = f"frame {f.frame_id}"
        if f.width <= 0 or f.height <= 0:
            rep.add(loc, f"non-positive dimensions {f.width}x{f.height}")
            continue
        if f.pointmap.shape != (f.height, f.width, 3):
            rep.add(loc, f"pointmap shape {f.pointmap.shape} != {(f.height, f.width, 3)}")
            continue
        if f.valid_mask.shape != (f.height, f.width):
            rep.add(loc, f"valid_mask shape {f.valid_mask.shape} != {(f.height, f.width)}")
            continue
        pts = f.pointmap[f.valid_mask]
        if pts.size:
            if not np.all(np.isfinite(pts)):
                rep.add(loc, "non-finite coordinates at valid pixels")
            if np.any(pts[:, 2] <= 0):
                rep.add(loc, "valid point with z <= 0 (behind camera)")

    n_frames = len(bundle.frames)
    for p_idx, p in enumerate(bundle.pairs):
        loc = f"pair {p_idx} ({p.frame_i},{p.frame_j})"
        if not (0 <= p.frame_j < n_frames and 0 <= p.frame_i < n_frames):
            rep.add(loc, "references a frame id outside the sequence")
            continue
        if p.frame_i <= p.frame_j:
            rep.add(loc, "frame_i must be greater than frame_j (current -> past)")
        if p.frame_i - p.frame_j > bundle.window_size:
            rep.add(loc, f"frame gap {p.frame_i - p.frame_j} exceeds window {bundle.window_size}")
        if p.pixels.ndim != 2 or p.pixels.shape[1] != 4:
            rep.add(loc, f"pixels shape {p.pixels.shape} is not (n, 4)")
            continue
        if p.confidence.shape != (p.pixels.shape[0],):
            rep.add(loc, "confidence length does not match match count")
        elif p.confidence.size and (np.any(p.confidence < 0) or np.any(p.confidence > 1)):
            rep.add(loc, "confidence outside [0, 1]")
        fi, fj = bundle.frames[p.frame_i], bundle.frames[p.frame_j]
        ui, vi, uj, vj = (p.pixels[:, k] for k in range(4))
        oob = (ui < 0) | (ui >= fi.width) | (vi < 0) | (vi >= fi.height)
        oob |= (uj < 0) | (uj >= fj.width) | (vj < 0) | (vj >= fj.height)
        if np.any(oob):
            rep.add(loc, f"{int(oob.sum())} match(es) with out-of-bounds pixel coordinates")
            continue
        bad_i = ~fi.valid_mask[vi, ui]
        bad_j = ~fj.valid_mask[vj, uj]
        if np.any(bad_i | bad_j):
            rep.add(loc, f"{int((bad_i | bad_j).sum())} match(es) at invalid pointmap pixels")
        if p.pixels.shape[0]:
            uniq = np.unique(p.pixels, axis=0)
            if uniq.shape[0] != p.pixels.shape[0]:
                rep.add(loc, "duplicate (pixel_i, pixel_j) matches")
    return rep


def _b64(arr):
    return base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii")


def _unb64(text, dtype, count, where):
    try:
        raw = base64.b64decode(text, validate=True)
    except Exception as exc:
        raise SchemaViolation(f"{where}: invalid base64 payload ({exc})") from exc
    arr = np.frombuffer(raw, dtype=dtype)
    if arr.size != count:
        raise SchemaViolation(f"{where}: payload holds {arr.size} items, expected {count}")
    return arr


def bundle_to_json(bundle):
    """Canonical JSON text for a bundle (deterministic byte output)."""
    frames = []
    for f in bundle.frames:
        frames.append(
            {
                "id": f.frame_id,
                "width": f.width,
                "height": f.height,
                "pointmap_b64": _b64(f.pointmap.astype("<f4")),
                "valid_mask_b64": _b64(f.valid_mask.astype(np.uint8)),
            }
        )
    pairs = []
    for p in bundle.pairs:
        matches = [
            [int(px[0]), int(px[1]), int(px[2]), int(px[3]), float(c)]
            for px, c in zip(p.pixels, p.confidence)
        ]
        pairs.append({"i": p.frame_i, "j": p.frame_j, "matches": matches})
    doc = {
        "version": BUNDLE_VERSION,
        "window_size": bundle.window_size,
        "frames": frames,
        "pairs": pairs,
        "meta": {k: str(bundle.meta[k]) for k in sorted(bundle.meta)},
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def save_bundle(bundle, path):
    """Write the canonical waypixel-bundle v1 file. Deterministic bytes."""
    text = bundle_to_json(bundle)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write bundle to {path}: {exc}") from exc


def _req(obj, key, kinds, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaViolation(f"{where}: missing required field '{key}'")
    val = obj[key]
    if kinds is not None and not isinstance(val, kinds):
        raise SchemaViolation(f"{where}: field '{key}' has wrong type {type(val).__name__}")
    return val


def bundle_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaViolation("top level is not a JSON object")
    version = _req(doc, "version", int, "bundle")
    if version != BUNDLE_VERSION:
        raise SchemaViolation(f"unsupported bundle version {version}")
    window = _req(doc, "window_size", int, "bundle")
    frames_doc = _req(doc, "frames", list, "bundle")
    pairs_doc = _req(doc, "pairs", list, "bundle")
    meta_doc = _req(doc, "meta", dict, "bundle")

    frames = []
    for k, fd in enumerate(frames_doc):
        where = f"frames[{k}]"
        fid = _req(fd, "id", int, where)
        width = _req(fd, "width", int, where)
        height = _req(fd, "height", int, where)
        if width <= 0 or height <= 0:
            raise SchemaViolation(f"{where}: non-positive dimensions")
        pm = _unb64(_req(fd, "pointmap_b64", str, where), "<f4", width * height * 3, where)
        vm = _unb64(_req(fd, "valid_mask_b64", str, where), np.uint8, width * height, where)
        frames.append(make_frame(fid, width, height, pm, vm != 0))

    n_frames = len(frames)
    pairs = []
    for k, pd in enumerate(pairs_doc):
        where = f"pairs[{k}]"
        i = _req(pd, "i", int, where)
        j = _req(pd, "j", int, where)
        if not (0 <= i < n_frames and 0 <= j < n_frames):
            raise SchemaViolation(f"{where}: references frame {max(i, j)} in a {n_frames}-frame sequence")
        matches = _req(pd, "matches", list, where)
        px = np.zeros((len(matches), 4), dtype=np.int32)
        conf = np.zeros(len(matches), dtype=np.float32)
        for m, row in enumerate(matches):
            if not isinstance(row, list) or len(row) != 5:
                raise SchemaViolation(f"{where}.matches[{m}]: expected [u_i, v_i, u_j, v_j, conf]")
            px[m] = row[:4]
            conf[m] = row[4]
        pairs.append(PairRecord(i, j, px, conf))

    meta = {str(k): str(v) for k, v in meta_doc.items()}
    bundle = MatchBundle(window, frames, pairs, meta)
    report = validate_bundle(bundle)
    if not report.ok:
        raise InvariantViolation(f"bundle violates invariants: {report.summary()}", report)
    return bundle


def load_bundle(path):
    """Load and fully validate a waypixel-bundle v1 file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read bundle from {path}: {exc}") from exc
    return bundle_from_json(text)


def bundles_equal(a, b):
    """Field-for-field equality with float bit-equality on arrays."""
    if a.window_size != b.window_size or a.meta != b.meta:
        return False
    if len(a.frames) != len(b.frames) or len(a.pairs) != len(b.pairs):
        return False
    for fa, fb in zip(a.frames, b.frames):
        if (fa.frame_id, fa.width, fa.height) != (fb.frame_id, fb.width, fb.height):
            return False
        if fa.pointmap.tobytes() != fb.pointmap.tobytes():
            return False
        if not np.array_equal(fa.valid_mask, fb.valid_mask):
            return False
    for pa, pb in zip(a.pairs, b.pairs):
        if (pa.frame_i, pa.frame_j) != (pb.frame_i, pb.frame_j):
            return False
        if not np.array_equal(pa.pixels, pb.pixels):
            return False
        if pa.confidence.tobytes() != pb.confidence.tobytes():
            return False
    return True
