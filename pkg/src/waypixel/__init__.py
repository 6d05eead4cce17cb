"""waypixel: pixel-relative topological mapping, planning, and evaluation."""

from .controller import (
    ControllerParams,
    NavigabilityMask,
    Rollout,
    navigable_mask,
    plan_rollout,
    waypoint_to_control,
)
from .errors import WaypixelError
from .estimators import PixelGraphBuilder, WayPixelPlanner
from .frameio import (
    FrameRecord,
    MatchBundle,
    PairRecord,
    load_bundle,
    save_bundle,
    validate_bundle,
)
from .graph import (
    GraphBuildConfig,
    GraphStats,
    PixelGraph,
    build_graph,
    graph_stats,
    intra_edges_emst,
    intra_edges_exhaustive,
    intra_edges_knn,
    load_graph,
    merge_nodes,
    save_graph,
)
from .harness import (
    Episode,
    EpisodeOutcome,
    MetricsReport,
    PipelineConfig,
    benchmark_graph,
    compute_metrics,
    make_suite,
    make_task,
    run_episode,
    run_suite,
    scaling_benchmark,
)
from .localizer import LocalizationState, SubmapSpec, build_submap, localize
from .planner import (
    CostField,
    CostmapEmbedding,
    QueryView,
    SparseCostmap,
    WayPixelCostmap,
    bridge_cost,
    densify_costmap,
    encode_costmap,
    goal_costs,
    plan_query,
    select_reference,
    sparse_costmap,
)
from .world import (
    FrameObservation,
    Intrinsics,
    NoiseKnobs,
    Pose,
    World,
    build_world,
    generate_traversal,
    geodesic_distance,
    oracle_match,
    render_frame,
    step_robot,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
