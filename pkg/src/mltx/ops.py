"""Partial-update operators, lock-mode compatibility and update aggregation."""
from __future__ import annotations

import itertools
import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable

from .errors import CarrierMismatch, InvalidArgument, UnresolvedLocation
from .values import Path, Store, canon, eval_loc, subsumes, wrap64

READ = "Read"
WRITE = "Write"
TEMP = "temp"
BASE_MODES = (READ, WRITE, TEMP)


@dataclass(frozen=True)
class GenuineUpdate:
    loc: Path
    val: object

    def encode(self):
        return ["genuine", str(self.loc), self.val]


@dataclass(frozen=True)
class PartialUpdate:
    loc: Path
    op: str
    arg: object

    def encode(self):
        return ["partial", str(self.loc), self.op, self.arg]


@dataclass(frozen=True)
class Inconsistent:
    reason: str

    def __bool__(self):
        return False


@dataclass(frozen=True)
class Aggregated:
    """A consistent genuine update set: location -> new value."""

    updates: dict

    def __bool__(self):
        return True

    def genuine(self) -> list[GenuineUpdate]:
        return [GenuineUpdate(p, self.updates[p]) for p in sorted(self.updates)]


@dataclass(frozen=True)
class OperatorDef:
    name: str
    value_type: type
    arg_type: type
    apply: Callable
    inverse: Callable  # arg -> (op name, arg)
    compatible_with: frozenset = frozenset()
    requestable: bool = True
    valid_arg: Callable = lambda v: True
    sample_value: Callable = None  # rng -> value, used for registry self-checks
    sample_arg: Callable = None


def _typed(v, t) -> bool:
    return type(v) is t


# -- built-in operators ------------------------------------------------------

def _rand_int(rng):
    # Mix small values with extremes so wraparound is exercised too.
    if rng.random() < 0.2:
        return rng.choice([-(2**63), 2**63 - 1, 0, -1, 1])
    return rng.randint(-(2**63), 2**63 - 1) if rng.random() < 0.5 else rng.randint(-1000, 1000)


def _rand_str(rng):
    alphabet = "abcxyzé☃0 "
    return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 8)))


def _chop(w, k):
    if k > len(w):
        raise InvalidArgument(f"chop {k} from string of length {len(w)}")
    return w[: len(w) - k] if k else w


BUILTIN_OPERATORS = (
    OperatorDef(
        "add", int, int,
        apply=lambda w, v: wrap64(w + v),
        inverse=lambda v: ("add", wrap64(-v)),
        compatible_with=frozenset({"add"}),
        sample_value=_rand_int, sample_arg=_rand_int,
    ),
    OperatorDef(
        "xor", int, int,
        apply=lambda w, v: w ^ v,
        inverse=lambda v: ("xor", v),
        compatible_with=frozenset({"xor"}),
        sample_value=_rand_int, sample_arg=_rand_int,
    ),
    OperatorDef(
        "mul", int, int,
        apply=lambda w, v: wrap64(w * v),
        inverse=lambda v: ("mul", v),
        compatible_with=frozenset({"mul"}),
        valid_arg=lambda v: v in (-1, 1),
        sample_value=_rand_int, sample_arg=lambda rng: rng.choice([-1, 1]),
    ),
    OperatorDef(
        "append", str, str,
        apply=lambda w, v: w + v,
        inverse=lambda v: ("chop", len(v)),
        sample_value=_rand_str, sample_arg=_rand_str,
    ),
    OperatorDef(
        "chop", str, int,
        apply=_chop,
        # Only ever produced as an inverse; its own inverse is not needed.
        inverse=None,
        requestable=False,
        valid_arg=lambda v: v >= 0,
    ),
)


class Registry:
    """Immutable operator registry.

    Declared compatibilities are checked on construction by random
    permutation testing, and every invertible operator is checked against
    the round-trip property on random samples.
    """

    def __init__(self, operators: Iterable[OperatorDef] = BUILTIN_OPERATORS, checks: int = 200, seed: int = 0):
        self._ops = {op.name: op for op in operators}
        for name in self._ops:
            if name in BASE_MODES:
                raise ValueError(f"operator name {name!r} collides with a lock mode")
        for op in self._ops.values():
            for other in op.compatible_with:
                if other not in self._ops:
                    raise ValueError(f"{op.name} declared compatible with unknown {other}")
                if op.name not in self._ops[other].compatible_with:
                    raise ValueError(f"compatibility {op.name}/{other} is not symmetric")
        if checks:
            self._self_check(random.Random(seed), checks)

    def _self_check(self, rng, n):
        for op in self._ops.values():
            if op.inverse is None or op.sample_value is None:
                continue
            for _ in range(n):
                w, v = op.sample_value(rng), op.sample_arg(rng)
                inv, iv = self.inverse_op(op.name, v)
                if canon(self.apply_op(inv, self.apply_op(op.name, w, v), iv)) != canon(w):
                    raise ValueError(f"operator {op.name} violates the inverse round trip at w={w!r}, v={v!r}")
            for other_name in op.compatible_with:
                other = self._ops[other_name]
                for _ in range(n):
                    w = op.sample_value(rng)
                    a, b = op.sample_arg(rng), other.sample_arg(rng)
                    x = self.apply_op(other.name, self.apply_op(op.name, w, a), b)
                    y = self.apply_op(op.name, self.apply_op(other.name, w, b), a)
                    if canon(x) != canon(y):
                        raise ValueError(f"{op.name} and {other.name} declared compatible but do not commute")

    def __contains__(self, name):
        return name in self._ops

    def __getitem__(self, name) -> OperatorDef:
        return self._ops[name]

    @property
    def names(self):
        return sorted(self._ops)

    def is_requestable(self, name) -> bool:
        return name in self._ops and self._ops[name].requestable

    def _get(self, name) -> OperatorDef:
        try:
            return self._ops[name]
        except KeyError:
            raise InvalidArgument(f"unknown operator {name!r}") from None

    def _check_arg(self, op: OperatorDef, v):
        if not _typed(v, op.arg_type):
            raise CarrierMismatch(f"{op.name}: argument {v!r} is not {op.arg_type.__name__}")
        if not op.valid_arg(v):
            raise InvalidArgument(f"{op.name}: invalid argument {v!r}")

    def apply_op(self, name, w, v):
        op = self._get(name)
        if not _typed(w, op.value_type):
            raise CarrierMismatch(f"{name}: value {w!r} is not {op.value_type.__name__}")
        self._check_arg(op, v)
        return op.apply(w, v)

    def inverse_op(self, name, v):
        op = self._get(name)
        if op.inverse is None:
            raise InvalidArgument(f"operator {name!r} has no registered inverse")
        self._check_arg(op, v)
        return op.inverse(v)

    def ops_compatible(self, a: str, b: str) -> bool:
        op = self._ops.get(a)
        return op is not None and b in op.compatible_with


DEFAULT_REGISTRY = Registry()


def apply_op(op, w, v, registry: Registry = DEFAULT_REGISTRY):
    return registry.apply_op(op, w, v)


def inverse_op(op, v, registry: Registry = DEFAULT_REGISTRY):
    return registry.inverse_op(op, v)


def is_op_mode(mode: str) -> bool:
    return mode not in BASE_MODES


def compatible(o1: str, o2: str, registry: Registry = DEFAULT_REGISTRY) -> bool:
    """Lock-mode compatibility between two different machines' locks on one location."""
    if o1 == WRITE or o2 == WRITE:
        return False
    if o1 == READ or o2 == READ:
        return o1 == o2
    if o1 == TEMP or o2 == TEMP:
        # temp coexists with temp and with any operator lock
        return True
    return registry.ops_compatible(o1, o2)


def check_multiset_compatible(ps, registry: Registry = DEFAULT_REGISTRY) -> bool:
    ps = list(ps)
    for a, b in itertools.combinations(ps, 2):
        if not registry.ops_compatible(a.op, b.op):
            return False
    return True


def fold_partials(w, ps, registry: Registry = DEFAULT_REGISTRY):
    for p in ps:
        w = registry.apply_op(p.op, w, p.arg)
    return w


def aggregate(s: Store, g, p, registry: Registry = DEFAULT_REGISTRY):
    """Merge genuine updates and a multiset of partial updates into one genuine set.

    Returns :class:`Aggregated` or :class:`Inconsistent`; never raises for
    semantic conflicts.
    """
    genuine = {}
    for u in g:
        if u.loc in genuine and canon(genuine[u.loc]) != canon(u.val):
            return Inconsistent(f"clashing genuine updates at {u.loc}")
        genuine[u.loc] = u.val
    partial = defaultdict(list)
    for u in p:
        partial[u.loc].append(u)

    for loc in genuine:
        parent = loc.parent
        if parent is not None:
            try:
                node = eval_loc(parent, s)
            except UnresolvedLocation:
                node = None
            if not isinstance(node, dict):
                return Inconsistent(f"genuine update at {loc} has no parent node")

    result = dict(genuine)
    for loc in sorted(partial):
        ps = partial[loc]
        if loc in genuine:
            return Inconsistent(f"mixed genuine and partial updates at {loc}")
        if not check_multiset_compatible(ps, registry):
            return Inconsistent(f"operator-incompatible partial updates at {loc}: {sorted({u.op for u in ps})}")
        try:
            result[loc] = fold_partials(eval_loc(loc, s), ps, registry)
        except (CarrierMismatch, InvalidArgument, UnresolvedLocation) as exc:
            return Inconsistent(f"partial update at {loc} failed: {exc}")

    locs = sorted(result, key=lambda q: len(q.segments))
    for i, a in enumerate(locs):
        for b in locs[i + 1:]:
            if subsumes(a, b):
                return Inconsistent(f"subsumption clash between {a} and {b}")
    return Aggregated(result)
