"""Cleansed schedules, serial replay in commit order and the serializability verdict."""
from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass, field

from .controller import machine_key
from .errors import DigestMismatch, InternalError, MalformedTrace, SoloAbort
from .executor import Trace, final_store, run
from .values import Store, canon
from .workload import Workload

# Kinds of schedule entries derived from a machine's events.
_KINDS = {
    "lock_request": "request",
    "lock_refused": "refused",
    "refused_back": "refused_back",
    "lock_granted": "granted",
    "fire": "fire",
    "undo": "undo",
    "victimized": "victim",
    "wait_for_recovery": "wait",
    "resume": "resume",
    "recovered": "recovered",
}

RULES = ("empty", "refused", "undone", "victim")


@dataclass(frozen=True)
class ScheduleEntry:
    """One fire of one machine: its own updates and the values it read."""

    seq: int
    pc: int
    delta: tuple
    gamma: tuple
    reads: tuple

    @classmethod
    def from_round(cls, r: dict, machine: str, pc: int) -> "ScheduleEntry":
        delta = tuple(sorted({canon(u): u for u in r["delta"].get(machine, [])}.items()))
        gamma = tuple(sorted(canon(u) for u in r["gamma"].get(machine, [])))
        reads = tuple(sorted((p, canon(v)) for p, v in r.get("reads", {}).get(machine, {}).items()))
        return cls(r["seq"], pc, tuple(k for k, _ in delta), gamma, reads)

    @property
    def empty(self) -> bool:
        return not self.delta and not self.gamma

    def key(self):
        """What equivalence compares: Δ as a set, Γ as a multiset, reads with values."""
        return (frozenset(self.delta), Counter(self.gamma), self.reads)

    def to_dict(self) -> dict:
        return {
            "round": self.seq,
            "pc": self.pc,
            "delta": [json.loads(u) for u in self.delta],
            "gamma": [json.loads(u) for u in self.gamma],
            "reads": {p: json.loads(v) for p, v in self.reads},
        }


def _machine_entries(trace: Trace, machine: str) -> list[dict]:
    out = []
    for r in trace.rounds:
        for ev in r["events"]:
            if ev.get("machine") != machine or ev["type"] not in _KINDS:
                continue
            e = {"kind": _KINDS[ev["type"]], "seq": r["seq"]}
            if ev["type"] == "fire":
                e["entry"] = ScheduleEntry.from_round(r, machine, ev["pc"])
            elif ev["type"] == "undo":
                e["step_seq"] = ev["step_seq"]
            out.append(e)
    return out


def _validate(entries: list[dict], machine: str):
    fired = set()
    for e in entries:
        if e["kind"] == "fire":
            fired.add(e["seq"])
        elif e["kind"] == "undo":
            if e["step_seq"] not in fired:
                raise MalformedTrace(f"undo of {machine} at round {e['seq']} has no matching fire "
                                     f"(step_seq {e['step_seq']})")
            fired.discard(e["step_seq"])


def _rule_empty(entries):
    # a fire with no updates, together with the grant that enabled it
    for i, e in enumerate(entries):
        if e["kind"] == "fire" and e["entry"].empty:
            drop = {i}
            j = _enabling_grant(entries, i)
            if j is not None:
                drop |= {j, *_request_before(entries, j)}
            return [x for k, x in enumerate(entries) if k not in drop]
    return None


def _rule_refused(entries):
    # a lock request answered by a refusal, plus the return to ta_ctl
    for i, e in enumerate(entries):
        if e["kind"] == "refused":
            drop = {i, *_request_before(entries, i)}
            for k in range(i + 1, len(entries)):
                if entries[k]["kind"] == "refused_back":
                    drop.add(k)
                    break
                if entries[k]["kind"] in ("request", "fire", "granted", "refused"):
                    break
            return [x for k, x in enumerate(entries) if k not in drop]
    return None


def _rule_undone(entries):
    # an undo together with the fire it reverts and that fire's grant
    for i, e in enumerate(entries):
        if e["kind"] != "undo":
            continue
        drop = {i}
        for k in range(i):
            if entries[k]["kind"] == "fire" and entries[k]["seq"] == e["step_seq"]:
                drop.add(k)
                j = _enabling_grant(entries, k)
                if j is not None:
                    drop |= {j, *_request_before(entries, j)}
                break
        return [x for k, x in enumerate(entries) if k not in drop]
    return None


def _rule_victim(entries):
    # victimization bracket with nothing but bookkeeping left inside
    for i, e in enumerate(entries):
        if e["kind"] != "victim":
            continue
        for k in range(i + 1, len(entries)):
            kind = entries[k]["kind"]
            if kind == "recovered":
                drop = {i, k}
                for m in range(k + 1, len(entries)):
                    if entries[m]["kind"] == "resume":
                        drop.add(m)
                        break
                    if entries[m]["kind"] not in ("wait",):
                        break
                drop |= {m for m in range(i + 1, k) if entries[m]["kind"] == "wait"}
                return [x for n, x in enumerate(entries) if n not in drop]
            if kind not in ("wait",):
                break
    return None


_RULE_FUNCS = {"empty": _rule_empty, "refused": _rule_refused, "undone": _rule_undone, "victim": _rule_victim}


def _enabling_grant(entries, fire_idx):
    """The grant immediately preceding a fire (a request serves the first fire it enabled)."""
    for k in range(fire_idx - 1, -1, -1):
        kind = entries[k]["kind"]
        if kind == "granted":
            return k
        if kind in ("fire", "undo", "refused"):
            return None
    return None


def _request_before(entries, idx):
    for k in range(idx - 1, -1, -1):
        if entries[k]["kind"] == "request":
            return [k]
        if entries[k]["kind"] in ("fire", "undo", "granted", "refused"):
            return []
    return []


def cleanse_entries(trace: Trace, machine: str, rule_order=None, rng: random.Random | None = None) -> list[dict]:
    """Apply the deletion rules to ``machine``'s entries until none applies.

    ``rule_order`` fixes the priority of rules; ``rng`` picks a random
    applicable rule at every step instead.  Both exist to exercise confluence.
    """
    entries = _machine_entries(trace, machine)
    _validate(entries, machine)
    order = list(rule_order or RULES)
    while True:
        names = list(order)
        if rng is not None:
            rng.shuffle(names)
        for name in names:
            nxt = _RULE_FUNCS[name](entries)
            if nxt is not None:
                entries = nxt
                break
        else:
            return entries


def aborted_machines(trace: Trace) -> set[str]:
    return {ev["machine"] for _, ev in trace.events("abort")}


def cleanse(trace: Trace, machine: str, rule_order=None, rng=None) -> list[ScheduleEntry]:
    """Cleansed schedule of ``machine``: its surviving fire entries, in order."""
    entries = cleanse_entries(trace, machine, rule_order, rng)
    if machine in aborted_machines(trace):
        return []
    return [e["entry"] for e in entries if e["kind"] == "fire"]


def commit_order(trace: Trace) -> list[str]:
    commits = [(seq, ev["machine"]) for seq, ev in trace.events("commit")]
    aborted = aborted_machines(trace)
    return [m for _, m in sorted(commits) if m not in aborted]


def solo_schedule(trace: Trace, machine: str) -> list[ScheduleEntry]:
    out = []
    for r in trace.rounds:
        for ev in r["events"]:
            if ev["type"] == "fire" and ev["machine"] == machine:
                e = ScheduleEntry.from_round(r, machine, ev["pc"])
                if not e.empty:
                    out.append(e)
    return out


@dataclass
class SerialRun:
    schedules: dict
    final_store: Store
    traces: dict = field(default_factory=dict)


def serial_replay(workload: Workload, order, seed: int = 0, store: Store | None = None) -> SerialRun:
    """Run each machine of ``order`` alone, chaining the store from one to the next."""
    current = store if store is not None else workload.store
    schedules, traces = {}, {}
    for m in order:
        t = run(workload, seed, "rr", machines=[m], store=current)
        if m in t.footer["aborted"]:
            reasons = [ev.get("reason", "") for _, ev in t.events("abort_request")]
            raise SoloAbort(f"{m} aborts even when running alone: {'; '.join(reasons)}")
        if not t.completed:
            raise InternalError(f"solo run of {m} did not complete: {t.status}")
        schedules[m] = solo_schedule(t, m)
        traces[m] = t
        current = final_store(t, workload)
    return SerialRun(schedules, current, traces)


@dataclass
class Verdict:
    serializable: bool
    commit_order: list
    status: str = ""
    final_store_match: bool | None = None
    failure: dict | None = None

    def to_dict(self) -> dict:
        return {
            "serializable": self.serializable,
            "commit_order": self.commit_order,
            "run_status": self.status,
            "final_store_match": self.final_store_match,
            "failure": self.failure,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)


def _first_divergence(machine, concurrent, serial):
    for i in range(max(len(concurrent), len(serial))):
        a = concurrent[i] if i < len(concurrent) else None
        b = serial[i] if i < len(serial) else None
        if a is None or b is None or a.key() != b.key():
            where = a.seq if a is not None else float("inf")
            return where, {
                "machine": machine,
                "position": i,
                "round": a.seq if a is not None else None,
                "expected": b.to_dict() if b is not None else None,
                "actual": a.to_dict() if a is not None else None,
            }
    return None


def check_serializable(trace: Trace, workload: Workload) -> Verdict:
    """Compare every committed machine's cleansed schedule with its serial replay."""
    if trace.header.get("workload_digest") != workload.digest:
        raise DigestMismatch("trace was not produced from this workload")
    order = commit_order(trace)
    seed = trace.header.get("seed", 0)
    serial = serial_replay(workload, order, seed)
    divergences = []
    for m in order:
        d = _first_divergence(m, cleanse(trace, m), serial.schedules[m])
        if d is not None:
            divergences.append(d)
    store_match = None
    settled = set(order) | aborted_machines(trace)
    if trace.footer and set(trace.header.get("machines", [])) <= settled:
        store_match = canon(trace.footer["final_store"]) == canon(serial.final_store.root)
    if divergences:
        _, failure = min(divergences, key=lambda d: (d[0], machine_key(d[1]["machine"])))
        return Verdict(False, order, trace.status, store_match, failure)
    return Verdict(True, order, trace.status, store_match)
