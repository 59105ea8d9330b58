"""Transaction controller components: Commit, DeadlockHandler, Recovery, Abort.

All components are plain functions over a :class:`World`; the executor
activates at most one of them per round.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import networkx as nx

from .errors import EvaluationError, InternalError, UnresolvedLocation
from .locks import LockTable, blocks, encode_locks, new_locks
from .ops import DEFAULT_REGISTRY, GenuineUpdate, PartialUpdate, Registry, aggregate
from .values import Store, apply_genuine_set, eval_loc
from .workload import StepIntent, Workload, eval_step, static_intent, terminated

TA_CTL = "ta_ctl"
WAIT_FOR_LOCKS = "wait_for_locks"
WAIT_FOR_RECOVERY = "wait_for_recovery"
COMMITTED = "committed"
ABORTED = "aborted"


def machine_key(machine_id: str):
    """Natural ordering, so M2 < M10; used wherever the controller must choose."""
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", machine_id)]


@dataclass
class MachineCtl:
    ctl_state: str = TA_CTL
    pc: int = 0
    granted: bool = False
    refused: bool = False
    fired: int = 0
    # locks granted since the last fire, recorded in the next history entry
    step_locks: frozenset = frozenset()
    granted_locks: frozenset = frozenset()


@dataclass(frozen=True)
class HistoryEntry:
    genuine_restores: tuple  # GenuineUpdate with the pre-fire values
    partial_inverses: tuple  # (Path, op, arg)
    acquired_locks: frozenset
    step_seq: int
    pc: int


@dataclass
class Round:
    seq: int
    agent: str
    delta: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    ctl: list = field(default_factory=list)
    reads: dict = field(default_factory=dict)
    events: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "agent": self.agent,
            "delta": self.delta,
            "gamma": self.gamma,
            "ctl": self.ctl,
            "reads": self.reads,
            "events": self.events,
        }


class World:
    """Everything one simulated run owns: store, lock table, controller sets."""

    def __init__(self, workload: Workload, seed: int = 0, *, strict: bool = False,
                 registry: Registry = DEFAULT_REGISTRY, machines=None, store: Store | None = None):
        self.workload = workload
        self.seed = seed
        self.strict = strict
        self.registry = registry
        ids = workload.machine_ids if machines is None else list(machines)
        self.programs = {m: workload.program(m) for m in ids}
        self.store = store if store is not None else workload.store
        self.store_version = 0
        self.locks = LockTable()
        self.machines: dict[str, MachineCtl] = {}
        self.trans_act: set[str] = set()
        # pending lock requests in arrival order; served first come, first served
        self.lock_requests: dict[str, None] = {}
        self.commit_requests: set[str] = set()
        self.abort_requests: set[str] = set()
        self.victims: set[str] = set()
        # victim -> the deadlocked machines it was chosen to unblock
        self.victim_of: dict[str, frozenset] = {}
        self.histories: dict[str, list[HistoryEntry]] = {}
        self.round: Round | None = None
        self._intents: dict = {}
        self._needs: dict = {}
        self._graph: tuple | None = None

    # -- bookkeeping ---------------------------------------------------------

    def emit(self, kind: str, **fields):
        self.round.events.append({"type": kind, **fields})

    def ctl_update(self, *update):
        self.round.ctl.append(list(update))

    def set_store(self, store: Store):
        self.store = store
        self.store_version += 1

    def register(self, machine: str):
        self.machines[machine] = MachineCtl()
        self.histories[machine] = []
        self.trans_act.add(machine)
        self.emit("register", machine=machine)
        self.ctl_update("TransAct", machine, True)

    def intent(self, machine: str) -> StepIntent | None:
        """Current step's intent, or None once the program is exhausted.

        Evaluation failures yield a conservative intent with ``error`` set.
        """
        pc = self.machines[machine].pc
        prog = self.programs[machine]
        if terminated(prog, pc):
            return None
        key = (machine, pc, self.store_version)
        hit = self._intents.get(key)
        if hit is None:
            try:
                hit = eval_step(prog, pc, self.store, self.seed)
            except (EvaluationError, UnresolvedLocation) as exc:
                hit = static_intent(prog, pc, str(exc))
            if len(self._intents) > 4096:
                self._intents.clear()
            self._intents[key] = hit
        return hit

    def needed_locks(self, machine: str) -> frozenset:
        intent = self.intent(machine)
        if intent is None:
            return frozenset()
        key = (machine, self.machines[machine].pc, self.store_version, self.locks.version)
        hit = self._needs.get(key)
        if hit is None:
            if len(self._needs) > 4096:
                self._needs.clear()
            hit = self._needs[key] = new_locks(machine, intent, self.store, self.locks)
        return hit

    def state_key(self):
        """Everything the wait graph depends on, cheap to compare."""
        return (
            self.store_version,
            self.locks.version,
            tuple((m, c.pc, c.ctl_state) for m, c in self.machines.items() if m in self.trans_act),
            frozenset(self.victims),
            frozenset(self.commit_requests),
            frozenset(self.abort_requests),
        )

    def active(self, machine: str) -> bool:
        return (machine in self.trans_act and machine not in self.commit_requests
                and machine not in self.abort_requests)


# -- recovery records and undo ----------------------------------------------

def recovery_upd(machine: str, intent: StepIntent, s: Store, registry: Registry = DEFAULT_REGISTRY):
    """(genuine restores, partial inverses) needed to undo ``intent`` fired on ``s``."""
    restores = tuple(GenuineUpdate(l, eval_loc(l, s)) for l in sorted(intent.genuine_write_loc))
    inverses = []
    for u in intent.partial:
        op2, arg2 = registry.inverse_op(u.op, u.arg)
        inverses.append((u.loc, op2, arg2))
    return restores, tuple(inverses)


def undo(machine: str, world: World, cause: str = "recovery") -> HistoryEntry:
    """Pop the youngest history entry of ``machine``: Restore, Release, Delete."""
    history = world.histories[machine]
    if not history:
        raise InternalError(f"undo of {machine} with empty history")
    entry = history.pop()
    inverses = [PartialUpdate(loc, op, arg) for loc, op, arg in entry.partial_inverses]
    agg = aggregate(world.store, entry.genuine_restores, inverses, world.registry)
    if not agg:
        raise InternalError(f"restore for {machine} is inconsistent: {agg.reason}")
    world.set_store(apply_genuine_set(world.store, agg.updates))
    ctl = world.machines[machine]
    # locks granted for the not-yet-fired current step go back too
    released = world.locks.release(machine, entry.acquired_locks | ctl.step_locks)
    ctl.step_locks = frozenset()
    restored = [[str(u.loc), u.val] for u in agg.genuine()]
    for loc, val in restored:
        world.ctl_update("genuine", loc, val)
    world.emit("undo", machine=machine, step_seq=entry.step_seq, pc=entry.pc, restored=restored, cause=cause)
    if released:
        world.emit("release", machine=machine, locks=encode_locks(released), cause="undo")
    ctl.pc = entry.pc
    return entry


# -- deadlock handling -------------------------------------------------------

def wait_graph(world: World) -> nx.DiGraph:
    """Wait(M, N): some lock M still needs is blocked by N."""
    key = world.state_key()
    if world._graph is not None and world._graph[0] == key:
        return world._graph[1]
    g = _build_wait_graph(world)
    world._graph = (key, g)
    return g


def _build_wait_graph(world: World) -> nx.DiGraph:
    g = nx.DiGraph()
    members = sorted(world.trans_act, key=machine_key)
    g.add_nodes_from(members)
    for m in members:
        if not world.active(m):
            continue
        need = world.needed_locks(m)
        if not need:
            continue
        for n in members:
            if n != m and any(blocks(n, l, o, world.locks, world.strict, world.registry) for l, o in need):
                g.add_edge(m, n)
    return g


def deadlocked(world: World, g: nx.DiGraph | None = None) -> set[str]:
    g = wait_graph(world) if g is None else g
    out = set()
    for comp in nx.strongly_connected_components(g):
        if len(comp) > 1:
            out |= comp
    return out


def default_victim_policy(world: World, g: nx.DiGraph, dead: set[str]) -> list[str]:
    """Per simple cycle without a victim, the greatest eligible machine-id."""
    cycles = sorted(
        (sorted(c, key=machine_key) for c in nx.simple_cycles(g.subgraph(dead))),
        key=lambda c: (len(c), [machine_key(m) for m in c]),
    )
    chosen: list[str] = []
    for cycle in cycles:
        if any(m in world.victims or m in chosen for m in cycle):
            continue
        eligible = [m for m in cycle if world.machines[m].ctl_state == TA_CTL and world.active(m)]
        if eligible:
            chosen.append(max(eligible, key=machine_key))
    return chosen


def plan_victims(world: World, policy=default_victim_policy) -> tuple[set[str], list[str]]:
    g = wait_graph(world)
    if g.number_of_edges() == 0:
        return set(), []
    dead = deadlocked(world, g)
    if not dead - world.victims:
        return dead, []
    return dead, policy(world, g, dead)


def deadlock_handler_step(world: World, policy=default_victim_policy) -> list[str]:
    dead, chosen = plan_victims(world, policy)
    if dead:
        world.emit("deadlock", machines=sorted(dead, key=machine_key))
    for m in chosen:
        world.victims.add(m)
        world.victim_of[m] = frozenset(dead - {m})
        world.ctl_update("Victim", m, True)
        world.emit("victimized", machine=m)
    return chosen


def recovery_step(world: World):
    if not world.victims:
        return None
    m = min(world.victims, key=machine_key)
    g = wait_graph(world)
    # keep backtracking while the victim is on a cycle or still blocks
    # one of the machines it was chosen to unblock
    blocking = any(g.has_edge(n, m) for n in world.victim_of.get(m, ()) if n in g)
    if not world.histories[m] or not (blocking or m in deadlocked(world, g)):
        world.victims.discard(m)
        world.victim_of.pop(m, None)
        world.ctl_update("Victim", m, False)
        world.emit("recovered", machine=m)
        return m
    undo(m, world)
    return m


# -- commit and abort --------------------------------------------------------

def commit_step(world: World):
    if not world.commit_requests:
        return None
    m = min(world.commit_requests, key=machine_key)
    released = world.locks.unlock_all(m)
    world.commit_requests.discard(m)
    world.trans_act.discard(m)
    world.machines[m].ctl_state = COMMITTED
    world.ctl_update("TransAct", m, False)
    world.emit("commit", machine=m, round=world.round.seq)
    if released:
        world.emit("release", machine=m, locks=encode_locks(released), cause="commit")
    return m


def abort_step(world: World) -> list[str]:
    done = sorted(world.abort_requests, key=machine_key)
    for m in done:
        while world.histories[m]:
            undo(m, world, cause="abort")
        released = world.locks.unlock_all(m)
        world.abort_requests.discard(m)
        world.trans_act.discard(m)
        world.victims.discard(m)
        world.victim_of.pop(m, None)
        world.lock_requests.pop(m, None)
        world.machines[m].ctl_state = ABORTED
        world.ctl_update("TransAct", m, False)
        world.emit("abort", machine=m, round=world.round.seq)
        if released:
            world.emit("release", machine=m, locks=encode_locks(released), cause="abort")
    return done
