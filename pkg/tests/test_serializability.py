import copy
import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CROSS_LOCK, wl
from mltx.errors import DigestMismatch, MalformedTrace, SoloAbort
from mltx.executor import Trace, run
from mltx.fuzz import FuzzConfig, generate_workload
from mltx.serializability import (
    RULES,
    check_serializable,
    cleanse,
    cleanse_entries,
    commit_order,
    serial_replay,
    solo_schedule,
)
from mltx.workload import parse_workload

TRANSFER = """
    init /a = 1
    init /b = 0
    machine T1
      shared /a /b
      step:
        read /a
        write /b := read(/a) + 1
    machine T2
      shared /a /b
      step:
        write /a := 10
"""


def kinds(trace, m):
    return [e["kind"] for e in cleanse_entries(trace, m)]


def test_single_machine_schedule_is_its_fires():
    w = wl("""
        init /x = 0
        machine M
          shared /x
          step:
            partial /x add 1
          step:
            partial /x add 2
    """)
    t = run(w)
    assert kinds(t, "M") == ["request", "granted", "fire", "fire"]
    assert cleanse(t, "M") == solo_schedule(t, "M")
    assert [e.gamma for e in cleanse(t, "M")] == [('["partial","/x","add",1]',), ('["partial","/x","add",2]',)]


def test_refusals_and_undo_are_cleansed():
    t = run(wl(CROSS_LOCK), seed=0)
    raw = [ev["type"] for _, ev in t.events() if ev.get("machine") == "M2"]
    assert "lock_refused" in raw and "undo" in raw
    for m in ("M1", "M2"):
        left = set(kinds(t, m))
        assert left <= {"request", "granted", "fire"}
    v = check_serializable(t, wl(CROSS_LOCK))
    assert v.serializable and v.final_store_match


def test_empty_fire_is_dropped_with_its_grant():
    w = wl("""
        init /x = 0
        machine M
          shared /x
          step:
            read /x
            guard read(/x) > 5
            write /x := 1
    """)
    t = run(w)
    assert list(t.events("fire"))
    assert kinds(t, "M") == []
    assert cleanse(t, "M") == []


def test_aborted_machine_has_empty_schedule():
    t = run(wl(CROSS_LOCK), abort_after={"M1": 1})
    assert "M1" in t.footer["aborted"]
    assert cleanse(t, "M1") == []
    assert commit_order(t) == ["M2"]


def test_all_aborted_is_vacuously_serializable():
    w = wl("""
        init /x = 0
        machine M1
          step:
            write /x := 1
        machine M2
          step:
            write /x := 2
    """)
    t = run(w)
    v = check_serializable(t, w)
    assert v.serializable and v.commit_order == [] and v.final_store_match


def test_forged_undo_is_malformed():
    t = run(wl(CROSS_LOCK), seed=0)
    forged = copy.deepcopy(t)
    for r in forged.rounds:
        for ev in r["events"]:
            if ev["type"] == "undo":
                ev["step_seq"] = 10_000
    with pytest.raises(MalformedTrace):
        cleanse(forged, "M2")


def test_serial_replay_empty_order():
    w = wl(TRANSFER)
    s = serial_replay(w, [])
    assert s.final_store.root == w.store.root and s.schedules == {}


def test_serial_replay_chains_stores():
    w = wl(TRANSFER)
    assert serial_replay(w, ["T2", "T1"]).final_store.root == {"a": 10, "b": 11}
    assert serial_replay(w, ["T1", "T2"]).final_store.root == {"a": 10, "b": 2}
    (entry,) = serial_replay(w, ["T2", "T1"]).schedules["T1"]
    assert entry.reads == (("/a", "10"),)


def test_serial_replay_solo_abort():
    w = wl("""
        init /x = 0
        machine M
          step:
            write /x := 1
            write /x := 2
    """)
    with pytest.raises(SoloAbort):
        serial_replay(w, ["M"])


def test_forged_read_is_reported_at_its_round():
    w = wl(TRANSFER)
    t = run(w)
    assert check_serializable(t, w).serializable
    forged = copy.deepcopy(t)
    (seq, _), = [(s, ev) for s, ev in forged.events("fire") if ev["machine"] == "T1"]
    forged.rounds[seq]["reads"]["T1"]["/a"] = 999
    v = check_serializable(forged, w)
    assert not v.serializable
    assert v.failure["machine"] == "T1" and v.failure["round"] == seq
    assert v.failure["actual"]["reads"] == {"/a": 999}


def test_digest_mismatch():
    t = run(wl(TRANSFER))
    with pytest.raises(DigestMismatch):
        check_serializable(t, wl(CROSS_LOCK))


def test_verdict_json_round_trips_through_trace_file(tmp_path):
    w = wl(CROSS_LOCK)
    t = run(w, seed=4, scheduler="random")
    t.write(tmp_path / "t.jsonl")
    back = Trace.read(tmp_path / "t.jsonl")
    assert check_serializable(back, w).to_json() == check_serializable(t, w).to_json()


# -- properties --------------------------------------------------------------

@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["rr", "random"]))
def test_cleansing_is_confluent(seed, scheduler):
    w = parse_workload(generate_workload(FuzzConfig(), random.Random(seed)))
    t = run(w, seed=seed, scheduler=scheduler)
    for m in t.header["machines"]:
        reference = cleanse_entries(t, m)
        for order in itertools.permutations(RULES):
            assert cleanse_entries(t, m, rule_order=order) == reference
        assert cleanse_entries(t, m, rng=random.Random(seed)) == reference
