"""Log an episode, replay it, then corrupt the log and watch replay object.

Replay re-runs the episode from the header config and seed and compares
every record byte-for-byte (timing fields aside).  Any tampering — here a
single instruction string — is caught at the exact record index.
"""

from __future__ import annotations

import argparse
import json
import tempfile
from pathlib import Path

from tableplan.config import default_noise_config
from tableplan.harness import DivergenceAt, replay_log, run_episode


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        log = Path(tmp) / "episode.jsonl"
        cfg = default_noise_config("swap_cups", distractors=4)
        first = run_episode(cfg, args.seed, log_path=log)
        print(f"logged episode: success={first.success}, "
              f"{first.footer['iterations']} chunks, "
              f"{len(log.read_text().splitlines())} records")

        replayed = replay_log(log)
        print(f"replay verdict: success={replayed.success} (bit-exact)")

        lines = log.read_text().splitlines()
        rec = json.loads(lines[2])
        rec["planner"]["instruction"] = "pick up the wrong thing"
        lines[2] = json.dumps(rec)
        tampered = Path(tmp) / "tampered.jsonl"
        tampered.write_text("\n".join(lines) + "\n")
        try:
            replay_log(tampered)
            print("tampered log replayed clean -- should not happen")
            return 1
        except DivergenceAt as err:
            print(f"tampered log rejected: diverged at record {err.record_index}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
