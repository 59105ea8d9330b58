"""Lock table ``Locked(l, M, o)``, lock needs of a step, and the LockHandler."""
from __future__ import annotations

from collections import defaultdict

from .ops import DEFAULT_REGISTRY, READ, TEMP, WRITE, Registry, compatible
from .values import Path, Store, subsumes


def lock_key(entry):
    path, mode = entry
    return (path, mode)


def encode_locks(locks) -> list:
    return [[str(p), m] for p, m in sorted(locks, key=lock_key)]


class LockTable:
    """Set of (location, machine, mode) entries, indexed by machine."""

    def __init__(self):
        self._by_machine: dict[str, dict[Path, set[str]]] = defaultdict(lambda: defaultdict(set))
        # bumped on every change; lets callers cache derived data
        self.version = 0

    def __len__(self):
        return sum(len(ms) for per in self._by_machine.values() for ms in per.values())

    def entries(self):
        out = []
        for m, per in self._by_machine.items():
            for path, modes in per.items():
                out.extend((path, m, mode) for mode in modes)
        return sorted(out)

    def holds(self, machine, path, mode) -> bool:
        per = self._by_machine.get(machine)
        return bool(per) and mode in per.get(path, ())

    def modes(self, machine, path) -> frozenset:
        per = self._by_machine.get(machine)
        return frozenset(per.get(path, ())) if per else frozenset()

    def per_path(self, machine) -> dict:
        """Read-only view: path -> modes held by ``machine``."""
        return self._by_machine.get(machine) or {}

    def held_by(self, machine) -> list[tuple[Path, str]]:
        per = self._by_machine.get(machine, {})
        return sorted(((p, m) for p, ms in per.items() for m in ms), key=lock_key)

    def machines(self):
        return sorted(m for m, per in self._by_machine.items() if per)

    def add(self, machine, path, mode):
        self._by_machine[machine][path].add(mode)
        self.version += 1

    def remove(self, machine, path, mode) -> bool:
        per = self._by_machine.get(machine)
        if not per or mode not in per.get(path, ()):
            return False
        per[path].discard(mode)
        self.version += 1
        if not per[path]:
            del per[path]
        if not per:
            del self._by_machine[machine]
        return True

    def release(self, machine, locks) -> list[tuple[Path, str]]:
        """Remove the given (path, mode) pairs of ``machine``; absent ones are ignored."""
        return [(p, m) for p, m in sorted(locks, key=lock_key) if self.remove(machine, p, m)]

    def release_temp_locks(self, machine) -> list[tuple[Path, str]]:
        return self.release(machine, [(p, m) for p, m in self.held_by(machine) if m == TEMP])

    def unlock_all(self, machine) -> list[tuple[Path, str]]:
        return self.release(machine, self.held_by(machine))

    def copy(self) -> "LockTable":
        t = LockTable()
        for path, m, mode in self.entries():
            t.add(m, path, mode)
        return t

    def conflicts(self, registry: Registry = DEFAULT_REGISTRY):
        """Pairs of same-location entries by different machines that the matrix forbids."""
        by_path = defaultdict(list)
        for path, m, mode in self.entries():
            by_path[path].append((m, mode))
        bad = []
        for path, holders in by_path.items():
            for i, (m1, o1) in enumerate(holders):
                for m2, o2 in holders[i + 1:]:
                    if m1 != m2 and not compatible(o1, o2, registry):
                        bad.append((path, (m1, o1), (m2, o2)))
        return bad


def new_locks(machine: str, intent, store: Store, table: LockTable) -> frozenset:
    """Locks ``machine`` still needs before it may perform the step ``intent``."""
    need = set()
    for l in intent.r_loc:
        if store.is_read_locked_kind(machine, l):
            if not (table.holds(machine, l, READ) or table.holds(machine, l, WRITE)):
                need.add((l, READ))
    ops_at = defaultdict(set)
    for u in intent.partial:
        ops_at[u.loc].add(u.op)
    for l in intent.w_loc:
        if not store.is_write_locked_kind(machine, l):
            continue
        wanted = set(ops_at.get(l, ()))
        if l in intent.genuine_write_loc:
            wanted.add(WRITE)
        for o in wanted:
            if not table.holds(machine, l, o):
                need.add((l, o))
        for a in l.ancestors():
            if not table.holds(machine, a, TEMP):
                need.add((a, TEMP))
    return frozenset(need)


def blocks(holder: str, l: Path, o: str, table: LockTable, strict: bool = False,
           registry: Registry = DEFAULT_REGISTRY) -> bool:
    """Does ``holder``'s current locking prevent granting ``(l, o)`` to someone else?

    In safe mode (``strict=False``) a lock held on a descendant of ``l``
    that is incompatible with ``o`` also blocks, except for temp requests.
    """
    per = table.per_path(holder)
    if not per:
        return False
    for o2 in per.get(l, ()):
        if not compatible(o, o2, registry):
            return True
    for a in l.ancestors():
        if per.get(a):
            return True
    if not strict and o != TEMP:
        for l2, modes in per.items():
            if subsumes(l, l2) and any(not compatible(o, o2, registry) for o2 in modes):
                return True
    return False


def blockers(machine: str, locks, world) -> list[str]:
    """Machines in TransAct other than ``machine`` that block some requested lock."""
    out = []
    for n in sorted(world.trans_act):
        if n == machine:
            continue
        if any(blocks(n, l, o, world.locks, world.strict, world.registry) for l, o in locks):
            out.append(n)
    return out


def cannot_be_granted(machine: str, locks, world) -> bool:
    return bool(blockers(machine, locks, world))


def handle_lock_request(machine: str, world) -> bool:
    """LockHandler step for one request; all-or-nothing. Returns True if granted."""
    ctl = world.machines[machine]
    L = new_locks(machine, world.intent(machine), world.store, world.locks)
    world.lock_requests.pop(machine, None)
    blocking = blockers(machine, L, world)
    if blocking:
        ctl.refused = True
        world.emit("lock_refused", machine=machine, locks=encode_locks(L), blocked_by=blocking)
        world.ctl_update("RefusedLocksTo", machine, True)
        return False
    for l, o in L:
        world.locks.add(machine, l, o)
    ctl.granted = True
    ctl.granted_locks = frozenset(L)
    ctl.step_locks = ctl.step_locks | ctl.granted_locks
    world.emit("lock_granted", machine=machine, locks=encode_locks(L))
    world.ctl_update("GrantedLocksTo", machine, True)
    return True
