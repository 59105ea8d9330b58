"""Trace audits: two-phase locking discipline and lock-before-touch.

Both replay the lock table from ``lock_granted`` and ``release`` events,
so they need nothing beyond the trace (and the workload's classification
for lock-before-touch).
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .ops import READ, TEMP, WRITE
from .values import Path
from .workload import Workload

# release cause -> event that must appear for the same machine in the same round
_CAUSE_EVENT = {"temp": "fire", "commit": "commit", "abort": "abort", "undo": "undo"}


@dataclass
class AuditReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, seq, machine, message):
        self.violations.append({"round": seq, "machine": machine, "message": message})


def _locks(ev):
    return {(l, o) for l, o in ev.get("locks", [])}


def audit_two_phase(trace) -> AuditReport:
    """Non-temp locks are only released by commit, undo or abort; temps at their fire."""
    rep = AuditReport()
    held = defaultdict(set)
    for r in trace.rounds:
        seq = r["seq"]
        present = defaultdict(set)
        for ev in r["events"]:
            if "machine" in ev:
                present[ev["machine"]].add(ev["type"])
        for ev in r["events"]:
            m = ev.get("machine")
            if ev["type"] == "lock_granted":
                held[m] |= _locks(ev)
            elif ev["type"] == "release":
                locks = _locks(ev)
                cause = ev.get("cause")
                if not locks <= held[m]:
                    rep.add(seq, m, f"releases locks it does not hold: {sorted(locks - held[m])}")
                need = _CAUSE_EVENT.get(cause)
                if need is None:
                    rep.add(seq, m, f"unknown release cause {cause!r}")
                elif need not in present[m]:
                    rep.add(seq, m, f"release with cause {cause} but no {need} event in the round")
                if cause == "temp" and any(o != TEMP for _, o in locks):
                    rep.add(seq, m, "non-temp lock released at fire")
                held[m] -= locks
        # after a fire no temp lock may survive the round
        for m, kinds in present.items():
            if "fire" in kinds:
                left = sorted(l for l, o in held[m] if o == TEMP)
                if left:
                    rep.add(seq, m, f"temp locks kept past the fire round: {left}")
    for m, locks in held.items():
        if locks and m in set(trace.footer.get("committed", [])) | set(trace.footer.get("aborted", [])):
            rep.add(None, m, f"finished with locks still held: {sorted(locks)}")
    return rep


def audit_lock_before_touch(trace, workload: Workload) -> AuditReport:
    """Every fired read and write was covered by the member's locks at fire time."""
    rep = AuditReport()
    cls = workload.store
    held = defaultdict(set)
    for r in trace.rounds:
        seq = r["seq"]
        # check fires against the table as it stood before this round's releases
        fired = [ev["machine"] for ev in r["events"] if ev["type"] == "fire"]
        for m in fired:
            mine = held[m]
            for p in r["reads"].get(m, {}):
                path = Path.parse(p)
                if cls.is_read_locked_kind(m, path) and not ({(p, READ), (p, WRITE)} & mine):
                    rep.add(seq, m, f"read {p} without Read/Write lock")
            for _, p, *_ in r["delta"].get(m, []):
                if cls.is_write_locked_kind(m, Path.parse(p)) and (p, WRITE) not in mine:
                    rep.add(seq, m, f"genuine write {p} without Write lock")
            for _, p, op, _ in r["gamma"].get(m, []):
                if cls.is_write_locked_kind(m, Path.parse(p)) and (p, op) not in mine:
                    rep.add(seq, m, f"partial {op} on {p} without {op} lock")
            for _, p, *_ in r["delta"].get(m, []) + r["gamma"].get(m, []):
                path = Path.parse(p)
                if cls.is_write_locked_kind(m, path):
                    for a in path.ancestors():
                        if (str(a), TEMP) not in mine:
                            rep.add(seq, m, f"write below {a} without temp lock")
        for ev in r["events"]:
            if ev["type"] == "lock_granted":
                held[ev["machine"]] |= _locks(ev)
            elif ev["type"] == "release":
                held[ev["machine"]] -= _locks(ev)
    return rep
