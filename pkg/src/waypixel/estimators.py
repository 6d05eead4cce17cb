"""Scikit-learn style wrappers so the pipeline composes with that ecosystem.

``PixelGraphBuilder.fit(bundle)`` learns the topological map; a fitted
``WayPixelPlanner`` turns QueryView objects into dense costmaps (predict)
or sinusoidal embeddings (transform). Both inherit get_params/set_params
from BaseEstimator, so cloning and grid-style configuration work.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .graph import GraphBuildConfig, build_graph, graph_stats
from .planner import QueryView, encode_costmap, goal_costs, plan_query
from .validation import ensure_bundle, ensure_goal_node


class PixelGraphBuilder(BaseEstimator):
    """Estimator facade over graph construction.

    Parameters mirror GraphBuildConfig; after ``fit`` the learned map is
    available as ``graph_`` with summary counts in ``stats_``.
    """

    def __init__(self, window=None, subsample_factor=1.0, strategy="emst",
                 knn_k=8, merge_nodes=False, seed=0):
        self.window = window
        self.subsample_factor = subsample_factor
        self.strategy = strategy
        self.knn_k = knn_k
        self.merge_nodes = merge_nodes
        self.seed = seed

    def _config(self):
        return GraphBuildConfig(
            window=self.window,
            subsample_factor=self.subsample_factor,
            strategy=self.strategy,
            knn_k=self.knn_k,
            merge_nodes=self.merge_nodes,
            seed=self.seed,
        )

    def fit(self, bundle, y=None):
        ensure_bundle(bundle)
        timings = {}
        self.graph_ = build_graph(bundle, self._config(), timings)
        self.stats_ = graph_stats(self.graph_, timings)
        return self

    def fit_transform(self, bundle, y=None):
        return self.fit(bundle).graph_


class WayPixelPlanner(BaseEstimator):
    """Goal-conditioned costmap producer.

    ``fit(graph, goal)`` precomputes the Dijkstra cost field for the goal
    node (frame_id, u, v). ``predict`` maps QueryView -> WayPixelCostmap;
    ``transform`` maps QueryView -> sinusoidal embedding channels.
    """

    def __init__(self, goal=None, embed_channels=16, lambda_max=64.0, pruned=True):
        self.goal = goal
        self.embed_channels = embed_channels
        self.lambda_max = lambda_max
        self.pruned = pruned

    def fit(self, graph, goal=None):
        target = goal if goal is not None else self.goal
        ensure_goal_node(graph, target)
        self.graph_ = graph
        self.goal_node_ = tuple(int(x) for x in target)
        self.cost_field_ = goal_costs(graph, self.goal_node_)
        return self

    def _costmap(self, query):
        return plan_query(query, self.cost_field_, self.graph_, pruned=self.pruned)

    def predict(self, X):
        """Dense costmap(s) for one QueryView or a list of them."""
        check_is_fitted(self, "cost_field_")
        if isinstance(X, QueryView):
            return self._costmap(X)
        return [self._costmap(q) for q in X]

    def transform(self, X):
        check_is_fitted(self, "cost_field_")
        if isinstance(X, QueryView):
            return encode_costmap(self._costmap(X), self.embed_channels, self.lambda_max).channels
        return [
            encode_costmap(self._costmap(q), self.embed_channels, self.lambda_max).channels
            for q in X
        ]
