"""Why the descendant check matters: fuzz with and without it.

Run: python3 demos/strict_vs_safe.py [RUNS]
"""
import sys

from mltx import FuzzConfig, fuzz


def main(runs=100):
    for strict in (False, True):
        s = fuzz(FuzzConfig(runs=runs, strict=strict), keep_going=True)
        label = "strict" if strict else "safe"
        print(f"{label:<6}: {s.runs} runs, {s.completed} completed, {s.deadlocks} deadlocks, "
              f"{s.violations} violations")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 100)
