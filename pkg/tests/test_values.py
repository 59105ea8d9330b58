import pytest
from hypothesis import given
from hypothesis import strategies as st

from mltx.errors import ParseError, UnresolvedLocation
from mltx.values import (
    Classification,
    Path,
    Store,
    canon,
    eval_loc,
    format_value,
    iter_locations,
    parse_value,
    related,
    subsumes,
    wrap64,
    write_genuine,
)

P = Path.parse


def test_path_parse_and_str():
    assert str(P("/p1/r2")) == "/p1/r2"
    assert P("/a/b").segments == ("a", "b")
    assert P("/a/b") == Path(("a", "b"))


@pytest.mark.parametrize("bad", ["", "a/b", "/", "/a//b", "/a-b", "/a/b/"])
def test_path_rejects_bad_text(bad):
    with pytest.raises(ValueError):
        P(bad)


def test_ancestors_nearest_first():
    assert P("/a/b/c").ancestors() == (P("/a/b"), P("/a"))
    assert P("/a").ancestors() == ()


def test_eval_examples():
    assert eval_loc(P("/x"), {"x": 7}) == 7
    assert eval_loc(P("/p1/r2"), {"p1": {"r1": 1, "r2": 2}}) == 2
    assert eval_loc(P("/p1"), {"p1": {"r1": 1, "r2": 2}}) == {"r1": 1, "r2": 2}


def test_eval_missing_segment():
    with pytest.raises(UnresolvedLocation):
        eval_loc(P("/p/q"), {"p": {"r": 1}})
    with pytest.raises(UnresolvedLocation):
        eval_loc(P("/p/r/s"), {"p": {"r": 1}})


def test_write_genuine_examples():
    s = Store({"x": 1})
    assert write_genuine(s, P("/x"), 5).root == {"x": 5}
    s = Store({"p": {"r": 1, "q": 2}})
    assert write_genuine(s, P("/p/r"), 9).root == {"p": {"r": 9, "q": 2}}
    s = Store({"p": {"r": 1}})
    assert write_genuine(s, P("/p"), {"r": 3, "u": 4}).root == {"p": {"r": 3, "u": 4}}


def test_write_genuine_does_not_mutate_input():
    root = {"p": {"r": 1}}
    write_genuine(Store(root), P("/p/r"), 2)
    assert root == {"p": {"r": 1}}


def test_write_genuine_needs_parent():
    with pytest.raises(UnresolvedLocation):
        write_genuine(Store({"p": 1}), P("/p/r"), 2)


def test_subsumes_examples():
    assert subsumes(P("/p1"), P("/p1/r2"))
    assert not subsumes(P("/p1"), P("/p1"))
    assert not subsumes(P("/p1/r2"), P("/p1"))
    assert not subsumes(P("/p1"), P("/p10/r"))


def test_canon_separates_bool_from_int():
    assert canon(True) != canon(1)
    assert canon({"a": 1, "b": 2}) == canon({"b": 2, "a": 1})


def test_wrap64():
    assert wrap64(2**63) == -(2**63)
    assert wrap64(-(2**63) - 1) == 2**63 - 1
    assert wrap64(5) == 5


def test_value_literals_round_trip():
    v = parse_value('{ a: 1, b: { c: "x\\"y", d: true }, e: -4 }')
    assert v == {"a": 1, "b": {"c": 'x"y', "d": True}, "e": -4}
    assert parse_value(format_value(v)) == v


def test_value_literal_range_checked():
    with pytest.raises(ParseError):
        parse_value(str(2**63))


def test_classification_covers_subtree_and_ancestors():
    s = Store({"a": {"b": 1}, "c": 2}, {"M": Classification(shared=frozenset({P("/a")}))})
    assert s.is_shared("M", P("/a/b"))
    assert s.is_shared("M", P("/a"))
    assert not s.is_shared("M", P("/c"))
    assert not s.is_shared("N", P("/a"))


# -- properties --------------------------------------------------------------

segs = st.lists(st.sampled_from(["a", "b", "c"]), min_size=1, max_size=4).map(lambda x: Path(tuple(x)))


@given(segs, segs, segs)
def test_subsumes_is_strict_partial_order(a, b, c):
    assert not subsumes(a, a)
    if subsumes(a, b):
        assert not subsumes(b, a)
    if subsumes(a, b) and subsumes(b, c):
        assert subsumes(a, c)


scalars = st.one_of(st.integers(-(2**63), 2**63 - 1), st.text(max_size=4), st.booleans())
trees = st.recursive(
    scalars,
    lambda kids: st.dictionaries(st.sampled_from(["a", "b", "c"]), kids, min_size=1, max_size=3),
    max_leaves=10,
).filter(lambda t: isinstance(t, dict))


@given(trees)
def test_ancestor_contains_descendant_subtree(tree):
    for loc in iter_locations(tree):
        for anc in loc.ancestors():
            rest = loc.segments[len(anc.segments):]
            node = eval_loc(anc, tree)
            for seg in rest:
                node = node[seg]
            assert canon(node) == canon(eval_loc(loc, tree))


@given(trees, st.data())
def test_write_changes_only_related_locations(tree, data):
    locs = list(iter_locations(tree))
    target = data.draw(st.sampled_from(locs))
    new = data.draw(scalars)
    after = write_genuine(Store(tree), target, new).root
    for loc in locs:
        if related(loc, target):
            continue
        assert canon(eval_loc(loc, after)) == canon(eval_loc(loc, tree))
    assert canon(eval_loc(target, after)) == canon(new)
