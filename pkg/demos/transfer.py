"""Record-level adds, an auditor and a whole-page writer sharing one page.

Every schedule is checked against a serial replay; a forced abort of
the transfer shows the store coming back to its initial values.

Run: python3 demos/transfer.py
"""
from pathlib import Path

from mltx import check_serializable, load_workload, run

HERE = Path(__file__).parent


def main():
    wl = load_workload(HERE / "workloads" / "transfer.wl")
    for scheduler in ("rr", "random"):
        for seed in range(4):
            t = run(wl, seed=seed, scheduler=scheduler)
            v = check_serializable(t, wl)
            print(f"{scheduler:<6} seed {seed}: order {v.commit_order} serializable={v.serializable} "
                  f"store={t.footer['final_store']}")
    solo = load_workload(HERE / "workloads" / "transfer.wl")
    t = run(solo, machines=["T1"], abort_after={"T1": 1})
    print("T1 forced to abort after its step:", t.footer["aborted"], t.footer["final_store"])


if __name__ == "__main__":
    main()
