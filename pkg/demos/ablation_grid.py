"""Small planner x vision ablation grid on the swap task.

Reproduces the shape of the full suite in about a minute: the code planner
beats the graph-reading mock, which beats the frame-only mock, and masking
beats raw vision once distractors are in frame.
"""

from __future__ import annotations

import argparse

from tableplan.config import default_noise_config
from tableplan.harness import format_suite_table, run_suite


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=25)
    ap.add_argument("--task", default="swap_cups",
                    choices=["pnp_twice", "place_and_stack", "swap_cups"])
    args = ap.parse_args()

    base = default_noise_config(args.task)
    report = run_suite(
        base, args.seeds,
        planners=("code", "mock_vlm_graph", "mock_vlm_rgb"),
        visions=("masked", "raw"),
        distractor_counts=(0, 8),
        progress=lambda cell: print(
            f"  done: {cell['planner']}/{cell['vision']}/d={cell['distractors']}"
            f" -> {cell['success_rate']:.0%}"),
    )
    print()
    print(format_suite_table(report))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
