import ctypes
import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mltx.errors import CarrierMismatch, InvalidArgument
from mltx.ops import (
    BUILTIN_OPERATORS,
    DEFAULT_REGISTRY,
    READ,
    TEMP,
    WRITE,
    Aggregated,
    GenuineUpdate,
    OperatorDef,
    PartialUpdate,
    Registry,
    aggregate,
    apply_op,
    check_multiset_compatible,
    compatible,
    inverse_op,
)
from mltx.values import Path, Store, subsumes

P = Path.parse
X = P("/x")
ints = st.integers(-(2**63), 2**63 - 1)


def c_int64(n):
    # independent oracle for two's-complement wraparound
    return ctypes.c_int64(n).value


def test_apply_op_examples():
    assert apply_op("add", 4, 3) == 7
    assert apply_op("append", "ab", "cd") == "abcd"
    assert apply_op("xor", 6, 6) == 0


@given(ints, ints)
def test_add_wraps_like_int64(w, v):
    assert apply_op("add", w, v) == c_int64(w + v)


@given(ints, st.sampled_from([-1, 1]))
def test_mul_wraps_like_int64(w, v):
    assert apply_op("mul", w, v) == c_int64(w * v)


def test_inverse_op_examples():
    assert inverse_op("add", 3) == ("add", -3)
    assert inverse_op("xor", 5) == ("xor", 5)
    assert inverse_op("append", "cd") == ("chop", 2)


@given(st.text(max_size=10))
def test_chop_undoes_append_cd(w):
    op, v = inverse_op("append", "cd")
    assert apply_op(op, apply_op("append", w, "cd"), v) == w


def test_carrier_and_argument_errors():
    with pytest.raises(CarrierMismatch):
        apply_op("add", True, 1)
    with pytest.raises(CarrierMismatch):
        apply_op("append", 1, "a")
    with pytest.raises(InvalidArgument):
        apply_op("mul", 3, 0)
    with pytest.raises(InvalidArgument):
        apply_op("mul", 3, 2)
    with pytest.raises(InvalidArgument):
        apply_op("chop", "ab", 3)
    with pytest.raises(InvalidArgument):
        apply_op("nosuch", 1, 1)
    with pytest.raises(InvalidArgument):
        inverse_op("chop", 1)


def test_chop_not_requestable():
    assert not DEFAULT_REGISTRY.is_requestable("chop")
    assert DEFAULT_REGISTRY.is_requestable("add")


def test_compatibility_examples():
    assert compatible(READ, READ)
    assert not compatible(WRITE, "add")
    assert compatible("add", "add")
    assert not compatible(READ, "add")
    assert not compatible(WRITE, WRITE)
    assert compatible(TEMP, TEMP)
    assert compatible(TEMP, "xor")
    assert not compatible(TEMP, READ)
    assert not compatible(TEMP, WRITE)
    assert not compatible("add", "xor")
    assert not compatible("append", "append")


def test_compatibility_symmetric():
    modes = [READ, WRITE, TEMP, *DEFAULT_REGISTRY.names]
    for a, b in itertools.product(modes, repeat=2):
        assert compatible(a, b) == compatible(b, a)


def test_multiset_compatibility_examples():
    assert check_multiset_compatible([PartialUpdate(X, "add", 1), PartialUpdate(X, "add", 2)])
    assert not check_multiset_compatible([PartialUpdate(X, "append", "a"), PartialUpdate(X, "append", "b")])
    assert check_multiset_compatible([PartialUpdate(X, "add", 1)])
    # the incompatibility above is real: the two orders differ
    assert apply_op("append", apply_op("append", "", "a"), "b") != apply_op("append", apply_op("append", "", "b"), "a")


def test_aggregate_seven_partials():
    r = aggregate(Store({"x": 0}), [], [PartialUpdate(X, "add", 1)] * 7)
    assert r == Aggregated({X: 7})


@pytest.mark.parametrize(
    "root, g, p, word",
    [
        ({"x": 0}, [GenuineUpdate(X, 1), GenuineUpdate(X, 2)], [], "clashing"),
        ({"x": 0}, [GenuineUpdate(X, 1)], [PartialUpdate(X, "add", 1)], "mixed"),
        ({"p": {"r": 0}}, [GenuineUpdate(P("/p"), {"r": 1})], [PartialUpdate(P("/p/r"), "add", 1)], "subsumption"),
        ({"x": ""}, [], [PartialUpdate(X, "append", "a"), PartialUpdate(X, "append", "b")], "incompatible"),
        ({"x": 0}, [GenuineUpdate(P("/y/z"), 1)], [], "parent"),
        ({"x": "s"}, [], [PartialUpdate(X, "add", 1)], "failed"),
    ],
)
def test_aggregate_inconsistent(root, g, p, word):
    r = aggregate(Store(root), g, p)
    assert not r
    assert word in r.reason


def test_aggregate_identical_genuine_updates_merge():
    assert aggregate(Store({"x": 0}), [GenuineUpdate(X, 3), GenuineUpdate(X, 3)], []) == Aggregated({X: 3})
    # True and 1 are different values
    assert not aggregate(Store({"x": 0}), [GenuineUpdate(X, True), GenuineUpdate(X, 1)], [])


def test_registry_rejects_false_compatibility():
    bad = OperatorDef(
        "cat", str, str, apply=lambda w, v: w + v, inverse=lambda v: ("chop", len(v)),
        compatible_with=frozenset({"cat"}),
        sample_value=lambda rng: rng.choice(["", "a", "bc"]), sample_arg=lambda rng: rng.choice(["x", "yz"]),
    )
    ops = [o for o in BUILTIN_OPERATORS if o.name != "append"] + [bad]
    with pytest.raises(ValueError, match="do not commute"):
        Registry(ops)


def test_registry_rejects_broken_inverse():
    bad = OperatorDef(
        "inc", int, int, apply=lambda w, v: w + v, inverse=lambda v: ("inc", v),
        sample_value=lambda rng: rng.randint(-5, 5), sample_arg=lambda rng: rng.randint(1, 5),
    )
    with pytest.raises(ValueError, match="round trip"):
        Registry([bad])


def test_registry_rejects_asymmetric_and_reserved_names():
    one = OperatorDef("a", int, int, apply=lambda w, v: w, inverse=lambda v: ("a", v), compatible_with=frozenset({"b"}))
    two = OperatorDef("b", int, int, apply=lambda w, v: w, inverse=lambda v: ("b", v))
    with pytest.raises(ValueError, match="symmetric"):
        Registry([one, two], checks=0)
    with pytest.raises(ValueError, match="collides"):
        Registry([OperatorDef("temp", int, int, apply=lambda w, v: w, inverse=None)], checks=0)


# -- properties --------------------------------------------------------------

def sample_pair(op_name):
    op = DEFAULT_REGISTRY[op_name]
    if op.value_type is str:
        return st.tuples(st.text(max_size=8), st.text(max_size=8))
    if op_name == "mul":
        return st.tuples(ints, st.sampled_from([-1, 1]))
    return st.tuples(ints, ints)


@pytest.mark.parametrize("op", ["add", "xor", "mul", "append"])
@given(data=st.data())
def test_inverse_round_trip_property(op, data):
    w, v = data.draw(sample_pair(op))
    inv, iv = inverse_op(op, v)
    assert apply_op(inv, apply_op(op, w, v), iv) == w


paths = st.sampled_from([P("/a"), P("/a/b"), P("/a/c"), P("/d")])


@given(st.lists(st.tuples(paths, st.integers(0, 3)), max_size=6),
       st.lists(st.tuples(paths, st.sampled_from(["add", "xor"]), st.integers(-3, 3)), max_size=6))
def test_aggregate_never_returns_related_locations(g, p):
    s = Store({"a": {"b": 0, "c": 0}, "d": 0})
    # /a is a dict, so partials there fail; that is fine, they just make it inconsistent
    r = aggregate(s, [GenuineUpdate(l, v) for l, v in g], [PartialUpdate(l, o, v) for l, o, v in p])
    if r:
        locs = list(r.updates)
        for a, b in itertools.permutations(locs, 2):
            assert not subsumes(a, b)
