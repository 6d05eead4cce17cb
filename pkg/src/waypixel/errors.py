"""Exception types raised across the waypixel package."""


class WaypixelError(Exception):
    """Base class for all waypixel errors."""


# --- bundle I/O ---

class MalformedFile(WaypixelError):
    """File is not parseable at the container level (bad JSON, unreadable)."""


class SchemaViolation(WaypixelError):
    """File parsed but a required field is missing, mistyped, or dangling."""


class InvariantViolation(WaypixelError):
    """A semantic invariant of the data does not hold."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IoFailure(WaypixelError):
    """Writing an artifact to disk failed."""


# --- world generation ---

class DegenerateLayout(WaypixelError):
    """World walls self-intersect or otherwise fail to form a usable layout."""


class UnreachableRoute(WaypixelError):
    """Requested traversal route crosses walls or lacks clearance."""


# --- graph construction ---

class EmptyGraph(WaypixelError):
    """No correspondences survived subsampling; the graph has no nodes."""


# --- planning ---

class GoalNotInGraph(WaypixelError):
    """Requested goal node key is not a node of the graph."""


class NoReachableNode(WaypixelError):
    """Every candidate bridging node has infinite cost to the goal."""


class NoLocalizedFrame(WaypixelError):
    """No submap frame produced any bridgeable matches."""


class EmptySparseSet(WaypixelError):
    """Query frame has no matched pixels against the reference frame."""


# --- localization / control ---

class NoMatches(WaypixelError):
    """Every submap frame matched the query with zero correspondences."""


class NoNavigableTarget(WaypixelError):
    """No navigable pixel with finite cost exists in the current view."""


# --- task generation ---

class TaskInfeasible(WaypixelError):
    """World cannot host the requested task (too small, no valid goal)."""
