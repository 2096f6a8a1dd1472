"""Tour of the policy language on the swap task.

Prints the s-expression program, then replays how the interpreter walked
it: which bindings resolved to which nodes, which step fired each round,
and what landed in task memory.  Ends with a deliberately broken program to
show positioned parse errors.
"""

from __future__ import annotations

from pathlib import Path

import tableplan
from tableplan.config import perfect_config
from tableplan.dsl import ParseError, parse_program
from tableplan.harness import run_episode

PLANS = Path(tableplan.__file__).parent / "plans"

BROKEN = """\
(policy oops
  (bind cup (first (objects :class "cup")))
  (plan
    (step s (goal (truu))
      (when (true) (say "x") (focus cup)))))
"""


def main() -> int:
    source = (PLANS / "swap_cups.plan").read_text()
    print("== program ==")
    print(source)

    cfg = perfect_config("swap_cups")
    result = run_episode(cfg, 0)
    print("== interpreter trace (seed 0) ==")
    seen = 0
    for rec in result.records:
        if rec.get("kind") != "record":
            continue
        plan = rec["planner"]
        mem = rec["graph"]["task_memory"]
        for entry in mem[seen:]:
            print(f"  memory += {entry}")
        seen = len(mem)
        if plan["done"]:
            print("  -> done")
        else:
            print(f"  -> step {plan['emitted_step']}:"
                  f" \"{plan['instruction']}\"")

    print("\n== broken program ==")
    for line_no, line in enumerate(BROKEN.splitlines(), 1):
        print(f"  {line_no}: {line}")
    try:
        parse_program(BROKEN)
    except ParseError as err:
        print(f"parse error at {err}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
