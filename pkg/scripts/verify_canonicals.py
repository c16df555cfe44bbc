"""Run the full verification suite on the three bundled canonical problems.

Usage: python scripts/verify_canonicals.py [--paths 100000] [--seed 42]
"""

import argparse
import json
import sys
from pathlib import Path

from regimelq import problem_from_config, run_standard_checks

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ("scalar.json", "two_regime.json", "det_lqr.json")


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--paths", type=int, default=100_000)
    parser.add_argument("--grid", type=int, default=200)
    parser.add_argument("--seed", type=int, default=42)
    args = parser.parse_args()

    failures = 0
    for name in CONFIGS:
        cfg = json.loads((ROOT / "configs" / name).read_text())
        problem = problem_from_config(cfg)
        print(f"== {name} ==")
        for check in run_standard_checks(problem, args.grid, args.paths, args.seed):
            status = "PASS" if check.passed else "FAIL"
            print(
                f"  {status} {check.name}: statistic={check.statistic:.4e} "
                f"tolerance={check.tolerance:.4e} "
                f"(3*stderr={3 * check.stderr:.2e}, bias={check.bias_allowance:.2e})"
            )
            failures += not check.passed
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
