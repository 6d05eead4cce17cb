"""``waypixel`` command line: map, plan, run, bench, gen-world."""

from __future__ import annotations

import json
import math
import os
import sys

import click
import numpy as np

from .errors import WaypixelError
from .frameio import load_bundle, save_bundle
from .graph import GraphBuildConfig, build_graph, graph_stats, load_graph, save_graph
from .harness import (
    PipelineConfig,
    benchmark_graph,
    compute_metrics,
    make_task,
    run_episode,
    scaling_benchmark,
    worker_count,
    run_suite,
)
from .localizer import SubmapSpec, build_submap
from .planner import QueryView, goal_costs, plan_query
from .validation import ensure_goal_node, parse_goal_text
from .world import build_world, generate_traversal, load_world_spec, noise_from_spec, Intrinsics
from .harness import _mapping_route  # layout-default routes


def _echo_table(rows, columns):
    widths = [max(len(c), *(len(str(r.get(c, ""))) for r in rows)) if rows else len(c)
              for c in columns]
    header = "  ".join(c.ljust(w) for c, w in zip(columns, widths))
    click.echo(header)
    click.echo("-" * len(header))
    for r in rows:
        click.echo("  ".join(str(r.get(c, "")).ljust(w) for c, w in zip(columns, widths)))


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


@click.group()
def main():
    """Pixel-relative topological mapping and navigation toolkit."""


@main.command("map")
@click.option("--bundle", "bundle_path", required=True, type=click.Path(exists=True))
@click.option("--window", type=int, default=None, help="Pair window; default = bundle's")
@click.option("--subsample", type=float, default=1.0, show_default=True)
@click.option("--strategy", default="emst", show_default=True,
              help="exhaustive | emst | knn:K")
@click.option("--merge", is_flag=True, help="Contract zero-cost correspondence classes")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def map_cmd(bundle_path, window, subsample, strategy, merge, seed, out_path):
    """Build the pixel graph from a match bundle."""
    from .harness import parse_strategy

    bundle = load_bundle(bundle_path)
    name, k = parse_strategy(strategy)
    cfg = GraphBuildConfig(window=window, subsample_factor=subsample, strategy=name,
                           knn_k=k, merge_nodes=merge, seed=seed)
    timings = {}
    graph = build_graph(bundle, cfg, timings)
    save_graph(graph, out_path)
    stats = graph_stats(graph, timings)
    _echo_table([stats.as_dict()], ["num_frames", "num_nodes", "num_intra_edges",
                                    "num_inter_edges", "disk_bytes"])
    click.echo(f"graph written to {out_path}")


@main.command("plan")
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--goal", "goal_text", required=True, help="Goal node as FRAME,U,V")
@click.option("--query", "query_path", required=True, type=click.Path(exists=True),
              help="Bundle holding map frames, query frames, and their pairs")
@click.option("--out", "out_dir", required=True, type=click.Path())
def plan_cmd(graph_path, goal_text, query_path, out_dir):
    """Dense costmap for every query frame in the query bundle.

    Query frames are the bundle frames beyond the graph's mapped sequence;
    each must carry pairs against mapped frame ids. Output per frame: a flat
    little-endian float32 raster plus a JSON sidecar.
    """
    graph = load_graph(graph_path)
    goal = ensure_goal_node(graph, parse_goal_text(goal_text))
    field = goal_costs(graph, goal)
    bundle = load_bundle(query_path)
    n_map = graph.num_bundle_frames
    os.makedirs(out_dir, exist_ok=True)

    query_ids = sorted({p.frame_i for p in bundle.pairs if p.frame_i >= n_map})
    if not query_ids:
        raise click.ClickException("query bundle holds no frames beyond the mapped sequence")
    written = []
    for q in query_ids:
        matches = {
            p.frame_j: p.pixels
            for p in bundle.pairs
            if p.frame_i == q and p.frame_j < n_map
        }
        query = QueryView(
            record=bundle.frames[q],
            matches=matches,
            ref_records={f: bundle.frames[f] for f in matches},
        )
        dense = plan_query(query, field, graph)
        raster = dense.values.astype("<f4")
        raster_name = f"costmap_{q}.f32"
        with open(os.path.join(out_dir, raster_name), "wb") as fh:
            fh.write(raster.tobytes())
        prov = dense.provenance[dense.provenance >= 0]
        counts = {str(int(i)): int(c) for i, c in zip(*np.unique(prov, return_counts=True))}
        sidecar = {
            "version": 1,
            "frame_id": q,
            "width": bundle.frames[q].width,
            "height": bundle.frames[q].height,
            "raster": raster_name,
            "raster_dtype": "float32_le",
            "r_star": dense.sparse.ref_frame,
            "num_sparse": len(dense.sparse),
            "valid_pixels": int(dense.valid.sum()),
            "finite_pixels": int(np.isfinite(dense.values).sum()),
            "provenance_counts": counts,
        }
        _write_json(os.path.join(out_dir, f"costmap_{q}.json"), sidecar)
        written.append({"frame": q, "r_star": sidecar["r_star"],
                        "sparse": sidecar["num_sparse"], "raster": raster_name})
    _echo_table(written, ["frame", "r_star", "sparse", "raster"])


@main.command("run")
@click.option("--world", "world_path", required=True, type=click.Path(exists=True))
@click.option("--task", required=True,
              type=click.Choice(["imitate", "altgoal", "shortcut", "reverse"]))
@click.option("--episodes", type=int, default=36, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--localizer", type=click.Choice(["oracle", "matched"]), default="oracle",
              show_default=True)
@click.option("--strategy", default="emst", show_default=True)
@click.option("--trace", is_flag=True, help="Write per-episode traces next to the report")
@click.option("--report", "report_path", required=True, type=click.Path())
def run_cmd(world_path, task, episodes, seed, localizer, strategy, trace, report_path):
    """Run seeded navigation episodes and report SPL/SSPL."""
    from .harness import parse_strategy

    spec = load_world_spec(world_path)
    noise = noise_from_spec(spec)
    name, k = parse_strategy(strategy)
    cfg = PipelineConfig(
        graph=GraphBuildConfig(strategy=name, knn_k=k),
        map_noise=noise,
        exec_noise=noise,
        localizer_mode=localizer,
    )
    eps = []
    for i in range(episodes):
        wspec = dict(spec)
        wspec["seed"] = int(spec.get("seed", 0)) + i
        world = build_world(wspec)
        eps.append(make_task(world, task, seed + i, cfg))
    results = run_suite(eps, cfg, max_workers=worker_count())
    outcomes = [r[0] for r in results]
    report = compute_metrics(outcomes, eps)
    payload = {"version": 1, "task": task, "config": {"localizer": localizer,
               "strategy": strategy, "episodes": episodes, "seed": seed},
               **report.as_dict()}
    _write_json(report_path, payload)
    if trace:
        base, _ = os.path.splitext(report_path)
        for i, (_, tr) in enumerate(results):
            with open(f"{base}.trace{i}.json", "w", encoding="utf-8") as fh:
                fh.write(tr.to_json())
    rows = [{"episode": i, "success": r["success"], "spl": f"{r['spl']:.3f}",
             "sspl": f"{r['sspl']:.3f}", "steps": r["steps"]}
            for i, r in enumerate(report.episodes)]
    _echo_table(rows, ["episode", "success", "spl", "sspl", "steps"])
    click.echo(f"success_rate={report.success_rate:.3f} "
               f"spl={report.spl:.3f} sspl={report.sspl:.3f}")


@main.command("bench")
@click.option("--bundle", "bundle_path", required=True, type=click.Path(exists=True))
@click.option("--strategies", default="exhaustive,emst,knn:8", show_default=True)
@click.option("--subsample", type=float, default=1.0, show_default=True)
@click.option("--merge", is_flag=True)
@click.option("--goal", "goal_text", default=None, help="FRAME,U,V; default = last node")
@click.option("--scaling-bundles", default=None,
              help="Comma-separated bundle paths for the linear-scaling fit")
@click.option("--report", "report_path", required=True, type=click.Path())
def bench_cmd(bundle_path, strategies, subsample, merge, goal_text, scaling_bundles,
              report_path):
    """Representation-efficiency benchmark over connectivity strategies."""
    bundle = load_bundle(bundle_path)
    goal = parse_goal_text(goal_text) if goal_text else None
    rows = benchmark_graph(bundle, [s.strip() for s in strategies.split(",")],
                           goal=goal, subsample=subsample, merge=merge)
    payload = {"version": 1, "rows": rows}
    if scaling_bundles:
        extra = [load_bundle(p.strip()) for p in scaling_bundles.split(",")]
        payload["scaling"] = scaling_benchmark(extra)
    _write_json(report_path, payload)
    view = [
        {
            "strategy": r["strategy"],
            "nodes": r["num_nodes"],
            "intra": r["num_intra_edges"],
            "inter": r["num_inter_edges"],
            "disk_kb": round(r["disk_bytes"] / 1024, 1),
            "intra_s": round(r["time_intra_s"], 4),
            "weights_s": round(r["time_weights_s"], 4),
            "dijkstra_s": round(r["time_dijkstra_s"], 4),
        }
        for r in rows
    ]
    _echo_table(view, ["strategy", "nodes", "intra", "inter", "disk_kb",
                       "intra_s", "weights_s", "dijkstra_s"])


@main.command("gen-world")
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True))
@click.option("--route", "route_text", default=None,
              help='Polyline "x,y;x,y;..."; default follows the layout')
@click.option("--spacing", type=float, default=0.5, show_default=True)
@click.option("--window", type=int, default=3, show_default=True)
@click.option("--width", type=int, default=64, show_default=True)
@click.option("--height", type=int, default=48, show_default=True)
@click.option("--hfov-deg", type=float, default=90.0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def gen_world_cmd(spec_path, route_text, spacing, window, width, height, hfov_deg, out_path):
    """Render a traversal of a synthetic world into a match bundle."""
    spec = load_world_spec(spec_path)
    world = build_world(spec)
    noise = noise_from_spec(spec)
    if route_text:
        route = [tuple(float(v) for v in part.split(",")) for part in route_text.split(";")]
    else:
        route = _mapping_route(world, "imitate")
    k = Intrinsics(width, height, math.radians(hfov_deg))
    poses, bundle = generate_traversal(world, route, spacing, k, window, noise)
    save_bundle(bundle, out_path)
    click.echo(f"{len(poses)} poses, {len(bundle.pairs)} pairs -> {out_path}")


def cli_entry():
    try:
        main(standalone_mode=True)
    except WaypixelError as exc:  # uniform non-zero exit for pipeline errors
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    cli_entry()
