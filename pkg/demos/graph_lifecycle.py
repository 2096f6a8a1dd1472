"""Watch the scene graph persist through an occlusion.

place_and_stack drops the cube into an opaque cup: from that frame on no
camera sees the cube, yet the graph keeps its node and the in-edge, and the
planner stacks onto the right cup because of it.  Each round prints the
graph the planner actually saw (from the episode log snapshots).
"""

from __future__ import annotations

import argparse

from tableplan.config import perfect_config
from tableplan.harness import run_episode


def _describe(snapshot: dict) -> list:
    names = {n["id"]: n["name"] for n in snapshot["nodes"]}
    step = snapshot["step"]
    lines = []
    for n in snapshot["nodes"]:
        fresh = sorted(v for v, g in n["groundings"].items()
                       if g["seen_step"] == step)
        if fresh:
            tag = "visible in " + "+".join(fresh)
        else:
            tag = (f"UNSEEN since step {n['last_seen']} "
                   "(node + edges remembered)")
        lines.append(f"  node {n['id']} {n['name']:<10} {tag}")
    for src, dst, rel, _since in snapshot["edges"]:
        lines.append(f"  edge {names[src]} --{rel}--> {names[dst]}")
    if snapshot["held_node"] is not None:
        lines.append(f"  gripper holds node {snapshot['held_node']}"
                     f" ({names[snapshot['held_node']]})")
    mem = snapshot["task_memory"]
    if mem:
        lines.append(f"  memory: {'; '.join(mem)}")
    return lines


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = perfect_config("place_and_stack")
    result = run_episode(cfg, args.seed)
    for rec in result.records:
        if rec.get("kind") != "record":
            continue
        plan = rec["planner"]
        head = ("done" if plan["done"]
                else f'"{plan["instruction"]}"')
        print(f"--- round {rec['iter']} (sim step {rec['step']}): {head}")
        for line in _describe(rec["graph"]):
            print(line)
        print()
    print(f"success={result.footer['success']}"
          f"  decision={result.footer['stack_decision']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
