"""Deterministic serialization: RLE bitmaps, canonical JSON, graph snapshots.

Every float that reaches a log or snapshot is rendered to a string with
'%.9g' first, so file bytes cannot depend on platform repr() quirks; replay
compares these strings, never re-parsed floats.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .graph import GraphNode, Grounding, SemanticGraph


def fmt_float(x) -> str:
    return "%.9g" % float(x)


def rle_encode(mask: np.ndarray) -> list:
    """Row-major run lengths, starting with a zero-run (possibly length 0)."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs: list, shape: tuple) -> np.ndarray:
    total = int(shape[0]) * int(shape[1])
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != total:
        raise ValueError(f"RLE covers {pos} pixels, mask has {total}")
    return flat.reshape(shape)


def _stringify(obj):
    """Recursively turn floats into '%.9g' strings for byte-stable JSON."""
    if isinstance(obj, float):
        return fmt_float(obj)
    if isinstance(obj, dict):
        return {k: _stringify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_stringify(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return fmt_float(obj)
    if isinstance(obj, frozenset):
        return sorted(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_stringify(obj), sort_keys=True,
                      separators=(",", ":"), ensure_ascii=False)


def config_hash(config_dict: dict) -> str:
    digest = hashlib.sha256(canonical_json(config_dict).encode("utf-8"))
    return digest.hexdigest()[:12]


# -- graph snapshots -------------------------------------------------------------


def graph_to_snapshot(graph: SemanticGraph) -> dict:
    """Planner-visible graph state as one JSON-ready dict.

    Captures nodes (with RLE mask groundings), edges, task memory, and
    gripper state; appearance features are perception-internal and are not
    part of the snapshot contract.
    """
    nodes = []
    for node in graph.sorted_nodes():
        groundings = {}
        for view_id in sorted(node.groundings):
            g = node.groundings[view_id]
            groundings[view_id] = {
                "rle": rle_encode(g.mask),
                "size": [int(g.mask.shape[0]), int(g.mask.shape[1])],
                "centroid": [fmt_float(g.centroid[0]), fmt_float(g.centroid[1])],
                "area": int(g.area_px),
                "source": int(g.source_id),
                "seen_step": int(g.seen_step),
            }
        nodes.append({
            "id": node.node_id,
            "name": node.name,
            "class": node.class_name,
            "attributes": dict(sorted(node.attributes.items())),
            "groundings": groundings,
            "first_seen": node.first_seen_step,
            "last_seen": node.last_seen_step,
            "flags": list(node.flags),
        })
    edges = [[src, dst, rel, since]
             for (src, dst, rel), since in sorted(graph.edges.items())]
    return {
        "step": graph.step,
        "nodes": nodes,
        "edges": edges,
        "task_memory": list(graph.task_memory),
        "gripper_free": bool(graph.gripper_free),
        "held_node": graph.held_node,
    }


def graph_from_snapshot(snapshot: dict) -> SemanticGraph:
    """Rebuild a queryable graph from a snapshot (features are zeroed)."""
    graph = SemanticGraph(step=int(snapshot["step"]))
    for rec in snapshot["nodes"]:
        groundings = {}
        for view_id, g in rec["groundings"].items():
            mask = rle_decode(g["rle"], tuple(g["size"]))
            groundings[view_id] = Grounding(
                mask=mask,
                centroid=(float(g["centroid"][0]), float(g["centroid"][1])),
                area_px=int(g["area"]), source_id=int(g["source"]),
                seen_step=int(g["seen_step"]))
        node = GraphNode(
            node_id=int(rec["id"]), name=rec["name"], class_name=rec["class"],
            attributes=dict(rec["attributes"]),
            feature=np.zeros(16, dtype=np.float64), groundings=groundings,
            first_seen_step=int(rec["first_seen"]),
            last_seen_step=int(rec["last_seen"]),
            flags=tuple(rec["flags"]))
        graph.nodes[node.node_id] = node
        graph.bindings[node.name] = node.node_id
    graph.next_node_id = max(graph.nodes, default=0) + 1
    for src, dst, rel, since in snapshot["edges"]:
        graph.edges[(int(src), int(dst), rel)] = int(since)
    graph.task_memory = list(snapshot["task_memory"])
    graph.gripper_free = bool(snapshot["gripper_free"])
    held = snapshot.get("held_node")
    graph.held_node = None if held is None else int(held)
    return graph
