"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import GoalNotInGraph, InvariantViolation
from .frameio import MatchBundle, validate_bundle


def ensure_bundle(bundle):
    """Raise InvariantViolation unless the bundle passes every check."""
    if not isinstance(bundle, MatchBundle):
        raise TypeError(f"expected MatchBundle, got {type(bundle).__name__}")
    report = validate_bundle(bundle)
    if not report.ok:
        raise InvariantViolation(f"invalid bundle: {report.summary()}", report)
    return bundle


def ensure_goal_node(graph, goal):
    """Normalize and verify a (frame_id, u, v) goal key against the graph."""
    if goal is None:
        raise GoalNotInGraph("no goal node supplied")
    key = tuple(int(x) for x in goal)
    if len(key) != 3:
        raise GoalNotInGraph(f"goal must be (frame_id, u, v), got {goal!r}")
    try:
        graph.index_of(key)
    except KeyError as exc:
        raise GoalNotInGraph(str(exc)) from exc
    return key


def parse_goal_text(text):
    """'F,U,V' -> (frame_id, u, v)."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError("goal must have the form FRAME,U,V")
    return tuple(int(p) for p in parts)


def as_pixel_array(values):
    """Coerce to an (n, 2) int32 pixel array."""
    arr = np.asarray(values, dtype=np.int32).reshape(-1, 2)
    return arr
