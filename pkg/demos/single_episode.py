"""Run one episode and narrate every replan round.

Shows the loop at its most legible: the policy reads the graph, names a
subtask and its relevant objects, the executor grounds and acts, milestones
tick.  Try --planner markovian on pnp_twice to watch memory loss kill it.
"""

from __future__ import annotations

import argparse

from tableplan.config import default_noise_config, perfect_config
from tableplan.harness import run_episode


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--task", default="swap_cups",
                    choices=["pnp_twice", "place_and_stack", "swap_cups"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--planner", default="code",
                    choices=["code", "markovian", "mock_vlm_graph",
                             "mock_vlm_rgb"])
    ap.add_argument("--noisy", action="store_true",
                    help="default noise profile instead of perfect mode")
    args = ap.parse_args()

    make = default_noise_config if args.noisy else perfect_config
    cfg = make(args.task, planner=args.planner)
    result = run_episode(cfg, args.seed)

    print(f"task: {cfg.task}  seed: {args.seed}  planner: {cfg.planner}")
    print(f"instruction: {result.header['task_instruction']}\n")
    for rec in result.records:
        if rec.get("kind") != "record":
            continue
        plan = rec["planner"]
        if plan["done"]:
            print(f"[{rec['iter']}] planner: task complete")
            continue
        label = {n["id"]: n["name"] for n in rec["graph"]["nodes"]}
        names = ", ".join(label.get(n, str(n)) for n in plan["relevant"])
        print(f"[{rec['iter']}] \"{plan['instruction']}\"  (relevant: {names})")
        ex = rec.get("execution", {})
        if "error" in ex:
            print(f"     executor error: {ex['error']}")
            continue
        prims = " -> ".join(p["kind"] for p in ex["primitives"])
        print(f"     {prims}  [{ex['outcome']}]"
              + (f"  clutter={ex['clutter']}" if ex["clutter"] else ""))
        if rec.get("milestones"):
            print(f"     milestones: {', '.join(rec['milestones'])}")

    f = result.footer
    print(f"\nsuccess={f['success']}  chunks={f['iterations']}"
          f"  sim_steps={f['sim_steps']}  milestones={f['milestones']}")
    if f["planner_error"]:
        print(f"planner error: {f['planner_error']}")
    if f["executor_error"]:
        print(f"executor error: {f['executor_error']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
