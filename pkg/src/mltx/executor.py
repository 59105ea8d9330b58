"""Round-based simulation of machines running under the transaction controller.

One agent is activated per round: a machine (one transition of its
control-state automaton) or one of the controller components.  A fire
round moves a whole partner group at once.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from . import controller as C
from .controller import (
    ABORTED,
    COMMITTED,
    TA_CTL,
    WAIT_FOR_LOCKS,
    WAIT_FOR_RECOVERY,
    HistoryEntry,
    Round,
    World,
    machine_key,
)
from .locks import cannot_be_granted, encode_locks, handle_lock_request, new_locks
from .ops import DEFAULT_REGISTRY, Registry, aggregate
from .values import Store, apply_genuine_set, canon
from .workload import Workload, terminated

COMPONENTS = ("LockHandler", "DeadlockHandler", "Recovery", "Commit", "Abort")
SCHEDULERS = ("rr", "random")
TRACE_FORMAT = "mltx-trace/1"


@dataclass
class RunConfig:
    seed: int = 0
    scheduler: str = "rr"
    max_rounds: int | None = None
    strict: bool = False
    suspend: bool = False
    stagger: bool = False
    # machine -> number of fired steps after which it requests abort
    abort_after: dict = field(default_factory=dict)
    # agents to activate first, in order; round-robin takes over afterwards
    script: tuple = ()

    def flags(self, workload: Workload) -> dict:
        return {
            "script": list(self.script),
            "strict_subsumption": self.strict,
            "suspend": self.suspend,
            "stagger": self.stagger,
            "max_rounds": self.resolved_max_rounds(workload),
            "abort_after": dict(sorted(self.abort_after.items())),
        }

    def resolved_max_rounds(self, workload: Workload) -> int:
        if self.max_rounds is not None:
            return self.max_rounds
        return max(100, 100 * workload.total_steps)


@dataclass
class Trace:
    header: dict
    rounds: list
    footer: dict

    @property
    def status(self) -> str:
        return self.footer.get("status", "")

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def events(self, kind: str | None = None):
        for r in self.rounds:
            for ev in r["events"]:
                if kind is None or ev["type"] == kind:
                    yield r["seq"], ev

    def to_jsonl(self) -> str:
        lines = [self.header, *self.rounds, self.footer]
        return "".join(json.dumps(x, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n" for x in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        from .errors import MalformedTrace

        objs = []
        for n, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                objs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MalformedTrace(f"line {n}: {exc}") from None
        if not objs or objs[0].get("kind") != "header":
            raise MalformedTrace("first line must be a trace header")
        if objs[0].get("format") != TRACE_FORMAT:
            raise MalformedTrace(f"unsupported trace format {objs[0].get('format')!r}")
        header, body = objs[0], objs[1:]
        footer = {}
        if body and body[-1].get("kind") == "footer":
            footer = body.pop()
        for r in body:
            if not isinstance(r, dict) or not {"seq", "agent", "delta", "gamma", "events"} <= r.keys():
                raise MalformedTrace(f"bad round record: {str(r)[:80]}")
        return cls(header, body, footer)

    def write(self, filename):
        with open(filename, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def read(cls, filename) -> "Trace":
        with open(filename, encoding="utf-8") as fh:
            return cls.from_jsonl(fh.read())


# -- machine automaton -------------------------------------------------------

def call_abort(machine: str, world: World, reason: str):
    world.abort_requests.add(machine)
    world.ctl_update("AbortRequest", machine, True)
    world.emit("abort_request", machine=machine, reason=reason)


def _request_locks(machine: str, world: World, locks):
    ctl = world.machines[machine]
    world.lock_requests[machine] = None
    ctl.ctl_state = WAIT_FOR_LOCKS
    ctl.granted = ctl.refused = False
    world.ctl_update("LockRequest", machine, True)
    world.emit("lock_request", machine=machine, locks=encode_locks(locks))


def can_fire(machine: str, world: World) -> bool:
    intent = world.intent(machine)
    if intent is None or not intent.ok:
        return False
    return bool(aggregate(world.store, intent.genuine, intent.partial, world.registry))


def _at_fire_point(n: str, world: World, abort_after) -> bool:
    if not world.active(n) or n in world.victims:
        return False
    ctl = world.machines[n]
    if n in abort_after and ctl.fired >= abort_after[n]:
        return False
    if ctl.ctl_state == WAIT_FOR_LOCKS:
        ready = ctl.granted
    elif ctl.ctl_state == TA_CTL:
        ready = not terminated(world.programs[n], ctl.pc)
    else:
        return False
    return ready and not world.needed_locks(n) and can_fire(n, world)


def partners(machine: str, world: World, abort_after=None) -> list[str]:
    """Closure of ready machines sharing an updated location with the group."""
    abort_after = abort_after or {}
    group = {machine}
    locs = set(world.intent(machine).w_loc)
    candidates = [n for n in sorted(world.trans_act, key=machine_key)
                  if n != machine and _at_fire_point(n, world, abort_after)]
    changed = True
    while changed:
        changed = False
        for n in candidates:
            if n in group:
                continue
            w = world.intent(n).w_loc
            if w & locs:
                group.add(n)
                locs |= w
                changed = True
    return sorted(group, key=machine_key)


def fire(group, world: World) -> bool:
    """Aggregate and apply one step of every group member atomically."""
    pre = world.store
    intents = {n: world.intent(n) for n in group}
    all_g, all_p = [], []
    for n in group:
        all_g.extend(intents[n].genuine)
        all_p.extend(intents[n].partial)
    agg = aggregate(pre, all_g, all_p, world.registry)
    if not agg:
        for n in group:
            call_abort(n, world, f"partner group inconsistent: {agg.reason}")
        return False
    records = {n: C.recovery_upd(n, intents[n], pre, world.registry) for n in group}
    world.set_store(apply_genuine_set(pre, agg.updates))
    seq = world.round.seq
    world.emit("aggregate", machines=list(group), updates=[[str(u.loc), u.val] for u in agg.genuine()])
    for n in group:
        ctl = world.machines[n]
        intent = intents[n]
        restores, inverses = records[n]
        world.histories[n].append(HistoryEntry(restores, inverses, ctl.step_locks, seq, ctl.pc))
        world.round.delta[n] = sorted((u.encode() for u in intent.genuine), key=canon)
        world.round.gamma[n] = sorted((u.encode() for u in intent.partial), key=canon)
        world.round.reads[n] = {str(p): v for p, v in sorted(intent.read_values.items())}
        world.emit("fire", machine=n, step_seq=seq, pc=ctl.pc)
        released = world.locks.release_temp_locks(n)
        if released:
            world.emit("release", machine=n, locks=encode_locks(released), cause="temp")
        ctl.pc += 1
        ctl.fired += 1
        ctl.ctl_state = TA_CTL
        ctl.granted = False
        ctl.step_locks = frozenset()
    return True


def _can_go(machine: str, world: World, abort_after):
    intent = world.intent(machine)
    if not intent.ok:
        call_abort(machine, world, f"step evaluation failed: {intent.error}")
        return
    need = world.needed_locks(machine)
    if need:
        _request_locks(machine, world, need)
        return
    agg = aggregate(world.store, intent.genuine, intent.partial, world.registry)
    if not agg:
        call_abort(machine, world, agg.reason)
        return
    fire(partners(machine, world, abort_after), world)


def machine_step(machine: str, world: World, abort_after=None):
    abort_after = abort_after or {}
    ctl = world.machines[machine]
    state = ctl.ctl_state
    if state == TA_CTL:
        if machine in world.victims:
            ctl.ctl_state = WAIT_FOR_RECOVERY
            world.emit("wait_for_recovery", machine=machine)
        elif machine in abort_after and ctl.fired >= abort_after[machine]:
            call_abort(machine, world, f"forced after {ctl.fired} fired steps")
        elif terminated(world.programs[machine], ctl.pc):
            world.commit_requests.add(machine)
            world.ctl_update("CommitRequest", machine, True)
            world.emit("commit_request", machine=machine)
        else:
            need = world.needed_locks(machine)
            if need:
                _request_locks(machine, world, need)
            else:
                _can_go(machine, world, abort_after)
    elif state == WAIT_FOR_LOCKS:
        if ctl.granted:
            ctl.ctl_state = TA_CTL
            ctl.granted = False
            _can_go(machine, world, abort_after)
        elif ctl.refused:
            ctl.ctl_state = TA_CTL
            ctl.refused = False
            world.emit("refused_back", machine=machine)
    elif state == WAIT_FOR_RECOVERY:
        if machine not in world.victims:
            ctl.ctl_state = TA_CTL
            world.emit("resume", machine=machine)


# -- scheduling ---------------------------------------------------------------

class Simulation:
    """One run in progress.  :func:`run` drives it to the end; tests may step it."""

    def __init__(self, workload: Workload, cfg: RunConfig, registry: Registry = DEFAULT_REGISTRY,
                 machines=None, store: Store | None = None):
        if cfg.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {cfg.scheduler!r}")
        self.limit = cfg.resolved_max_rounds(workload)
        if self.limit <= 0:
            raise ValueError("max_rounds must be positive")
        self.workload = workload
        self.cfg = cfg
        self.world = World(workload, cfg.seed, strict=cfg.strict, registry=registry, machines=machines, store=store)
        self.ids = sorted(self.world.programs, key=machine_key)
        self.agents = list(self.ids) + list(COMPONENTS)
        self.rng = random.Random(cfg.seed)
        self.pointer = 0
        self.join_round = {}
        if cfg.stagger:
            span = max(1, 2 * sum(len(self.world.programs[m].steps) for m in self.ids))
            jr = random.Random(f"stagger:{cfg.seed}")
            self.join_round = {m: jr.randrange(span) for m in self.ids}
        self.script_pos = 0
        self.header = {
            "kind": "header",
            "format": TRACE_FORMAT,
            "workload_digest": workload.digest,
            "seed": cfg.seed,
            "scheduler": cfg.scheduler,
            "flags": cfg.flags(workload),
            "machines": list(self.ids),
            "initial_store": self.world.store.root,
        }
        self.rounds: list[dict] = []
        self.seq = 0
        self.status = None
        if self.ids and not cfg.stagger:
            self._begin("TaCtl")
            for m in self.ids:
                self.world.register(m)
            self._end()

    def machine_enabled(self, m: str, seq: int) -> bool:
        w = self.world
        ctl = w.machines.get(m)
        if ctl is None:
            return self.cfg.stagger and seq >= self.join_round[m]
        if not w.active(m):
            return False
        if ctl.ctl_state == TA_CTL:
            if self.cfg.suspend and m not in w.victims and not terminated(w.programs[m], ctl.pc):
                need = w.needed_locks(m)
                if need and cannot_be_granted(m, need, w):
                    return False
            return True
        if ctl.ctl_state == WAIT_FOR_LOCKS:
            return ctl.granted or ctl.refused
        if ctl.ctl_state == WAIT_FOR_RECOVERY:
            return m not in w.victims
        return False

    def enabled(self, agent: str, seq: int) -> bool:
        w = self.world
        if agent == "LockHandler":
            return bool(w.lock_requests)
        if agent == "DeadlockHandler":
            _, chosen = C.plan_victims(w)
            return bool(chosen)
        if agent == "Recovery":
            return bool(w.victims)
        if agent == "Commit":
            return bool(w.commit_requests)
        if agent == "Abort":
            return bool(w.abort_requests)
        return self.machine_enabled(agent, seq)

    def pick(self, seq: int) -> str | None:
        if self.script_pos < len(self.cfg.script):
            agent = self.cfg.script[self.script_pos]
            self.script_pos += 1
            if agent not in self.agents:
                raise ValueError(f"scripted agent {agent!r} does not exist")
            if not self.enabled(agent, seq):
                raise ValueError(f"scripted agent {agent!r} is not enabled at round {seq}")
            return agent
        n = len(self.agents)
        if self.cfg.scheduler == "rr":
            for k in range(n):
                idx = (self.pointer + k) % n
                if self.enabled(self.agents[idx], seq):
                    self.pointer = idx + 1
                    return self.agents[idx]
        else:
            live = [a for a in self.agents if self.enabled(a, seq)]
            if live:
                return self.rng.choice(live)
        if self.cfg.stagger:
            # nothing else to do: let the next pending machine join early
            pending = [m for m in self.ids if m not in self.world.machines]
            if pending:
                return min(pending, key=lambda m: (self.join_round[m], machine_key(m)))
        return None

    def activate(self, agent: str):
        w = self.world
        if agent in w.programs and agent not in w.machines:
            w.register(agent)
        elif agent == "LockHandler":
            handle_lock_request(next(iter(w.lock_requests)), w)
        elif agent == "DeadlockHandler":
            C.deadlock_handler_step(w)
        elif agent == "Recovery":
            C.recovery_step(w)
        elif agent == "Commit":
            C.commit_step(w)
        elif agent == "Abort":
            C.abort_step(w)
        else:
            machine_step(agent, w, self.cfg.abort_after)

    def all_done(self) -> bool:
        w = self.world
        return len(w.machines) == len(self.ids) and not w.trans_act

    def _begin(self, agent):
        self.world.round = Round(self.seq, agent)

    def _end(self):
        self.rounds.append(self.world.round.to_dict())
        self.world.round = None
        self.seq += 1

    def step(self) -> bool:
        """Play one round; False once the run is over (``status`` says why)."""
        if self.status is not None:
            return False
        if self.all_done():
            self.status = "completed"
            return False
        if self.seq >= self.limit:
            self.status = "round_limit"
            return False
        agent = self.pick(self.seq)
        if agent is None:
            self.status = "stalled"
            return False
        self._begin(agent)
        self.activate(agent)
        self._end()
        return True

    def trace(self) -> Trace:
        w = self.world
        states = {m: w.machines[m].ctl_state if m in w.machines else "unregistered" for m in self.ids}
        footer = {
            "kind": "footer",
            "status": self.status or "running",
            "rounds": self.seq,
            "final_store": w.store.root,
            "committed": [m for m in self.ids if states[m] == COMMITTED],
            "aborted": [m for m in self.ids if states[m] == ABORTED],
            "states": states,
        }
        return Trace(self.header, self.rounds, footer)


def run(workload: Workload, seed: int = 0, scheduler: str = "rr", max_rounds: int | None = None, *,
        strict: bool = False, suspend: bool = False, stagger: bool = False, abort_after=None,
        script=(), machines=None, store: Store | None = None, registry: Registry = DEFAULT_REGISTRY,
        config: RunConfig | None = None) -> Trace:
    """Simulate ``workload`` and return the full trace.

    ``script`` pins the first activations (agent names, in order) before
    ``scheduler`` takes over.  ``machines`` restricts the run to a subset of
    programs and ``store`` overrides the initial store; serial replay uses both.
    """
    cfg = config or RunConfig(seed, scheduler, max_rounds, strict, suspend, stagger,
                              dict(abort_after or {}), tuple(script))
    sim = Simulation(workload, cfg, registry, machines, store)
    while sim.step():
        pass
    return sim.trace()


def final_store(trace: Trace, workload: Workload) -> Store:
    return Store(trace.footer["final_store"], workload.store.classification)
