import pytest

from conftest import CROSS_LOCK, seven_adders, wl
from mltx import controller as C
from mltx.controller import HistoryEntry, Round, World
from mltx.errors import InternalError
from mltx.executor import RunConfig, Simulation
from mltx.ops import GenuineUpdate, TEMP, WRITE
from mltx.values import Path, eval_loc
from mltx.workload import eval_step

P = Path.parse


def scripted(workload, script, **kw):
    sim = Simulation(workload, RunConfig(script=tuple(script), **kw))
    for _ in script:
        assert sim.step()
    return sim


def in_round(world, agent="test"):
    world.round = Round(999, agent)
    return world


THREE_CYCLE = """
    init /x = 0
    init /y = 0
    init /z = 0
    machine M1
      shared /x /y /z
      step:
        write /x := 1
      step:
        write /y := 1
    machine M2
      shared /x /y /z
      step:
        write /y := 2
      step:
        write /z := 2
    machine M3
      shared /x /y /z
      step:
        write /z := 3
      step:
        write /x := 3
"""

ALL3 = ["M1", "M2", "M3"]
# everyone takes its first lock and fires, then everyone asks for the next one and is refused
DEADLOCK_3 = ALL3 + ["LockHandler"] * 3 + ALL3 + ALL3 + ["LockHandler"] * 3 + ALL3


def test_recovery_upd_genuine_and_partial():
    w = wl("""
        init /y = 2
        init /x = 4
        machine M
          step:
            write /y := 5
            partial /x add 3
    """)
    intent = eval_step(w.programs[0], 0, w.store, 0)
    restores, inverses = C.recovery_upd("M", intent, w.store)
    assert restores == (GenuineUpdate(P("/y"), 2),)
    assert inverses == ((P("/x"), "add", -3),)


def test_undo_restores_and_applies_inverse_to_current_value():
    w = wl("""
        init /x = 10
        init /y = 9
        machine M
    """)
    world = in_round(World(w))
    world.register("M")
    world.histories["M"].append(HistoryEntry((GenuineUpdate(P("/y"), 2),), ((P("/x"), "add", -3),),
                                             frozenset({(P("/x"), "add")}), 5, 0))
    world.locks.add("M", P("/x"), "add")
    C.undo("M", world)
    assert world.store.root == {"x": 7, "y": 2}
    assert world.locks.held_by("M") == []
    assert world.histories["M"] == []


def test_undo_with_already_released_temp_lock():
    w = wl("""
        init /p = { r: 1 }
        machine M
    """)
    world = in_round(World(w))
    world.register("M")
    world.histories["M"].append(HistoryEntry((GenuineUpdate(P("/p/r"), 1),), (),
                                             frozenset({(P("/p"), TEMP), (P("/p/r"), WRITE)}), 3, 0))
    world.locks.add("M", P("/p/r"), WRITE)
    C.undo("M", world)
    assert world.locks.held_by("M") == []


def test_undo_with_empty_history_is_an_internal_error():
    world = in_round(World(wl("init /x = 0\nmachine M\n")))
    world.register("M")
    with pytest.raises(InternalError):
        C.undo("M", world)


def test_undo_only_own_partial():
    ids = [f"A{i}" for i in range(1, 8)]
    sim = scripted(seven_adders(), ids + ["LockHandler"] * 7 + ["A1"])
    world = in_round(sim.world)
    assert world.store.root == {"x": 7}
    C.undo("A3", world)
    assert world.store.root == {"x": 6}
    assert all(len(world.histories[m]) == 1 for m in ids if m != "A3")


def test_cross_lock_deadlock_detected():
    w = wl(CROSS_LOCK)
    sim = scripted(w, ["M1", "M2", "LockHandler", "LockHandler", "M1", "M2", "M1", "M2"])
    world = sim.world
    assert world.locks.holds("M1", P("/x"), WRITE) and world.locks.holds("M2", P("/y"), WRITE)
    assert C.deadlocked(world) == {"M1", "M2"}


def test_no_wants_no_deadlock():
    sim = scripted(wl(CROSS_LOCK), [])
    assert C.deadlocked(sim.world) == set()
    in_round(sim.world)
    assert C.deadlock_handler_step(sim.world) == []


def test_three_cycle_victim_is_highest_id():
    sim = scripted(wl(THREE_CYCLE), DEADLOCK_3)
    world = in_round(sim.world)
    assert C.deadlocked(world) == {"M1", "M2", "M3"}
    assert C.deadlock_handler_step(world) == ["M3"]
    assert world.victims == {"M3"}
    # already handled: nothing new to choose
    assert C.plan_victims(world)[1] == []


def test_machines_waiting_for_locks_are_not_victimized():
    sim = scripted(wl(THREE_CYCLE), DEADLOCK_3[:-1])  # M3 still in wait_for_locks
    world = in_round(sim.world)
    assert world.machines["M3"].ctl_state == C.WAIT_FOR_LOCKS
    assert C.deadlock_handler_step(world) == ["M2"]


def test_recovery_undoes_until_unblocked():
    sim = scripted(wl(THREE_CYCLE), DEADLOCK_3)
    world = in_round(sim.world)
    C.deadlock_handler_step(world)
    assert len(world.histories["M3"]) == 1
    C.recovery_step(world)
    assert world.histories["M3"] == []
    assert world.store.root["z"] == 0
    assert not world.locks.held_by("M3")
    # now M2 can get /z, so M3 is no longer needed as a victim
    C.recovery_step(world)
    assert world.victims == set()
    assert any(e["type"] == "recovered" for e in world.round.events)


def test_recovery_unmarks_victim_with_empty_history():
    world = in_round(World(wl(CROSS_LOCK)))
    for m in ("M1", "M2"):
        world.register(m)
    world.victims.add("M2")
    C.recovery_step(world)
    assert world.victims == set()


def test_recovery_keeps_undoing_while_deadlocked():
    text = """
        init /a = 0
        init /b = 0
        init /x = 0
        init /y = 0
        machine M1
          shared /a /b /x /y
          step:
            write /x := 1
          step:
            write /y := 1
        machine M2
          shared /a /b /x /y
          step:
            write /a := 2
          step:
            write /b := 2
          step:
            write /y := 2
          step:
            write /x := 2
    """
    # M2 fires a, b, y; M1 fires x; then M1 wants y and M2 wants x
    sim = scripted(wl(text), ["M2", "LockHandler", "M2", "M2", "LockHandler", "M2", "M2", "LockHandler", "M2",
                              "M1", "LockHandler", "M1", "M1", "M2", "LockHandler", "LockHandler", "M1", "M2"])
    world = in_round(sim.world)
    assert len(world.histories["M2"]) == 3
    assert C.deadlocked(world) == {"M1", "M2"}
    world.victims.add("M2")
    world.victim_of["M2"] = frozenset({"M1"})
    C.recovery_step(world)
    assert len(world.histories["M2"]) == 2
    assert "M2" in world.victims


def test_commit_releases_everything_and_orders_by_id():
    sim = scripted(wl(CROSS_LOCK), ["M1", "M2", "LockHandler", "LockHandler", "M1", "M2"])
    world = in_round(sim.world)
    world.commit_requests |= {"M2", "M1"}
    assert C.commit_step(world) == "M1"
    assert world.locks.held_by("M1") == []
    assert world.machines["M1"].ctl_state == C.COMMITTED
    assert "M2" in world.commit_requests
    assert C.commit_step(in_round(world)) == "M2"
    assert len(world.locks) == 0
    assert C.commit_step(in_round(world)) is None


def test_abort_restores_all_steps():
    w = wl("""
        init /a = 1
        init /b = "s"
        machine M
          shared /a /b
          step:
            write /a := 5
          step:
            partial /b append "tail"
          step:
            partial /a add 7
    """)
    sim = Simulation(w, RunConfig())
    while sim.world.machines["M"].fired < 3:
        sim.step()
    world = in_round(sim.world)
    assert world.store.root == {"a": 12, "b": "stail"}
    world.abort_requests.add("M")
    C.abort_step(world)
    assert world.store.root == {"a": 1, "b": "s"}
    assert world.histories["M"] == [] and len(world.locks) == 0
    assert world.machines["M"].ctl_state == C.ABORTED


def test_abort_with_empty_history_releases_residual_locks():
    sim = scripted(wl(CROSS_LOCK), ["M1", "LockHandler"])
    world = in_round(sim.world)
    assert world.locks.held_by("M1")
    world.abort_requests.add("M1")
    C.abort_step(world)
    assert world.locks.held_by("M1") == []
    assert "M1" not in world.trans_act


def test_abort_after_inconsistent_step_releases_granted_locks():
    w = wl("""
        init /x = 0
        machine M
          shared /x
          step:
            write /x := 1
            write /x := 2
    """)
    sim = Simulation(w, RunConfig())
    while sim.step():
        pass
    t = sim.trace()
    assert t.footer["aborted"] == ["M"]
    assert len(sim.world.locks) == 0
    reasons = [ev["reason"] for _, ev in t.events("abort_request")]
    assert "clashing" in reasons[0]


def test_restore_of_the_inverse_is_exact_for_strings():
    w = wl("""
        init /s = "héllo"
        machine M
          shared /s
          step:
            partial /s append "☃x"
    """)
    sim = Simulation(w, RunConfig())
    while sim.world.machines["M"].fired < 1:
        sim.step()
    world = in_round(sim.world)
    assert eval_loc(P("/s"), world.store) == "héllo☃x"
    C.undo("M", world)
    assert eval_loc(P("/s"), world.store) == "héllo"
