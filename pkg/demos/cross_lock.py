"""Two machines lock /x and /y in opposite orders; watch the deadlock get resolved.

Run: python3 demos/cross_lock.py
"""
from pathlib import Path

from mltx import check_serializable, load_workload, run

HERE = Path(__file__).parent


def main():
    wl = load_workload(HERE / "workloads" / "cross_lock.wl")
    trace = run(wl, seed=0, scheduler="rr")
    for r in trace.rounds:
        notes = []
        for ev in r["events"]:
            kind = ev["type"]
            if kind == "deadlock":
                notes.append(f"deadlock among {ev['machines']}")
            elif kind in ("victimized", "undo", "recovered", "commit", "lock_refused", "lock_granted", "fire"):
                notes.append(f"{kind} {ev['machine']}")
        if notes:
            print(f"round {r['seq']:3d}  {r['agent']:<16} {'; '.join(notes)}")
    print("final store:", trace.footer["final_store"])
    print(check_serializable(trace, wl).to_json())


if __name__ == "__main__":
    main()
