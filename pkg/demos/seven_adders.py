"""Seven concurrent "add 1" steps merged into a single store update.

A scripted prefix makes all seven machines request their add lock
before any of them fires, so they end up in one partner group.

Run: python3 demos/seven_adders.py
"""
from pathlib import Path

from mltx import RunConfig, Simulation, load_workload

HERE = Path(__file__).parent


def main():
    wl = load_workload(HERE / "workloads" / "seven_adders.wl")
    ids = [f"A{i}" for i in range(1, 8)]
    sim = Simulation(wl, RunConfig(script=tuple(ids + ["LockHandler"] * 7 + ["A1"])))
    while sim.world.store.root["x"] == 0 and sim.step():
        pass
    fired = sim.rounds[-1]
    agg = next(e for e in fired["events"] if e["type"] == "aggregate")
    print(f"round {fired['seq']}: group {agg['machines']} wrote {agg['updates']}")
    for m in ids:
        (entry,) = sim.world.histories[m]
        print(f"  {m} can be undone with {[(str(p), op, v) for p, op, v in entry.partial_inverses]}")
    while sim.step():
        pass
    print("status:", sim.status, "final store:", sim.world.store.root)


if __name__ == "__main__":
    main()
