"""Localization index tracking and submap construction."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import NoMatches


@dataclass(frozen=True)
class SubmapSpec:
    """Temporal window around the localization index.

    The submap is {center - R, ..., center + R} clipped to the sequence,
    thinned to every ``subsample_factor``-th offset, center always kept.
    """

    center_index: int
    temporal_radius: int = 4
    subsample_factor: int = 1

    def __post_init__(self):
        if self.temporal_radius < 0:
            raise ValueError("temporal_radius must be >= 0")
        if self.subsample_factor < 1:
            raise ValueError("subsample_factor must be >= 1")


@dataclass
class LocalizationState:
    """Global pointer into the map sequence plus its update history."""

    current_index: int
    num_frames: int
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not (0 <= self.current_index < self.num_frames):
            raise ValueError("current_index out of range")


def build_submap(spec, num_frames):
    """Ordered frame ids of the submap around ``spec.center_index``."""
    c, r, f = spec.center_index, spec.temporal_radius, spec.subsample_factor
    if not (0 <= c < num_frames):
        raise ValueError(f"center {c} outside [0, {num_frames - 1}]")
    ids = set()
    offset = 0
    while offset <= r:
        for idx in (c - offset, c + offset):
            if 0 <= idx < num_frames:
                ids.add(idx)
        offset += f
    return sorted(ids)


def localize(match_counts, state, step=None):
    """Move the pointer to the submap frame with the most matches.

    Ties break toward the larger frame id (forward progress). All-zero
    counts raise NoMatches and leave the state untouched.
    """
    if not match_counts or all(c == 0 for c in match_counts.values()):
        raise NoMatches("query matched no submap frame")
    best = max(sorted(match_counts), key=lambda f: (match_counts[f], f))
    state.current_index = int(best)
    state.history.append((step, state.current_index, dict(match_counts)))
    return state
