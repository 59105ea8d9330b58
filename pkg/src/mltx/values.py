"""Hierarchical values addressed by paths.

A store is a tree: interior nodes are ``dict`` objects keyed by path
segments, leaves are ``int``, ``str`` or ``bool`` scalars.  Stores are
treated as immutable; :func:`write_genuine` copies the spine of the tree
along the written path and shares everything else.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Mapping

from .errors import ParseError, UnresolvedLocation
from .syntax import TokenStream, tokenize

_SEGMENT_RE = re.compile(r"[A-Za-z0-9_]+\Z")

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


def wrap64(n: int) -> int:
    """Two's complement wrap of an arbitrary integer into signed 64 bits."""
    n &= 0xFFFFFFFFFFFFFFFF
    return n - 2**64 if n >= 2**63 else n


def is_int(v) -> bool:
    return type(v) is int


def is_scalar(v) -> bool:
    return type(v) in (int, str, bool)


@dataclass(frozen=True, order=True)
class Path:
    segments: tuple[str, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a location path needs at least one segment")
        for seg in self.segments:
            if not isinstance(seg, str) or not _SEGMENT_RE.match(seg):
                raise ValueError(f"bad path segment {seg!r}")

    @classmethod
    def parse(cls, text: str) -> "Path":
        if not text.startswith("/"):
            raise ValueError(f"path must start with '/': {text!r}")
        return cls(tuple(text[1:].split("/")))

    def __str__(self):
        return "/" + "/".join(self.segments)

    def __repr__(self):
        return f"Path({str(self)!r})"

    @property
    def parent(self) -> "Path | None":
        if len(self.segments) == 1:
            return None
        return Path(self.segments[:-1])

    def ancestors(self) -> tuple["Path", ...]:
        """Strict ancestors, nearest first."""
        return _ancestors(self.segments)

    def child(self, seg: str) -> "Path":
        return Path(self.segments + (seg,))


@lru_cache(maxsize=4096)
def _ancestors(segments: tuple[str, ...]) -> tuple[Path, ...]:
    return tuple(Path(segments[:i]) for i in range(len(segments) - 1, 0, -1))


def as_path(p) -> Path:
    return p if isinstance(p, Path) else Path.parse(p)


def subsumes(l1: Path, l2: Path) -> bool:
    """True iff ``l1`` is a strict ancestor of ``l2`` (its value determines ``l2``'s)."""
    a, b = l1.segments, l2.segments
    return len(a) < len(b) and b[: len(a)] == a


def related(l1: Path, l2: Path) -> bool:
    """Equal, or one subsumes the other."""
    return l1 == l2 or subsumes(l1, l2) or subsumes(l2, l1)


# -- value helpers -----------------------------------------------------------

def canon(v) -> str:
    """Canonical text of a value; equal text iff equal values (bool is not int)."""
    return json.dumps(v, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def same_value(a, b) -> bool:
    return canon(a) == canon(b)


def check_value(v, where="value") -> None:
    if type(v) is bool or type(v) is str:
        return
    if type(v) is int:
        if not INT64_MIN <= v <= INT64_MAX:
            raise ValueError(f"{where}: integer {v} outside signed 64-bit range")
        return
    if isinstance(v, dict):
        for k, child in v.items():
            if not isinstance(k, str) or not _SEGMENT_RE.match(k):
                raise ValueError(f"{where}: bad key {k!r}")
            check_value(child, where)
        return
    raise ValueError(f"{where}: unsupported value {v!r}")


def iter_locations(tree: Mapping, prefix: tuple[str, ...] = ()) -> Iterable[Path]:
    """Every location of a tree, parents before children, keys sorted."""
    for key in sorted(tree):
        path = Path(prefix + (key,))
        yield path
        if isinstance(tree[key], dict):
            yield from iter_locations(tree[key], path.segments)


# -- store -------------------------------------------------------------------

@dataclass(frozen=True)
class Classification:
    shared: frozenset = frozenset()
    monitored: frozenset = frozenset()
    output: frozenset = frozenset()


@lru_cache(maxsize=8192)
def _overlaps(path: Path, declared: frozenset) -> bool:
    # A declaration of /p covers its whole subtree and every location whose
    # value depends on it, i.e. ancestors and descendants alike.
    for d in declared:
        if related(d, path):
            return True
    return False


@dataclass(frozen=True)
class Store:
    root: dict = field(default_factory=dict)
    classification: Mapping[str, Classification] = field(default_factory=dict)

    def with_root(self, root: dict) -> "Store":
        return replace(self, root=root)

    def _cls(self, machine: str) -> Classification:
        return self.classification.get(machine, Classification())

    def is_shared(self, machine: str, path: Path) -> bool:
        return _overlaps(path, self._cls(machine).shared)

    def is_read_locked_kind(self, machine: str, path: Path) -> bool:
        """Shared or monitored for ``machine``: reads need a lock."""
        c = self._cls(machine)
        return _overlaps(path, c.shared) or _overlaps(path, c.monitored)

    def is_write_locked_kind(self, machine: str, path: Path) -> bool:
        """Shared or output for ``machine``: writes need a lock."""
        c = self._cls(machine)
        return _overlaps(path, c.shared) or _overlaps(path, c.output)


def eval_loc(path: Path, store: Store | dict):
    root = store.root if isinstance(store, Store) else store
    node = root
    for i, seg in enumerate(path.segments):
        if not isinstance(node, dict) or seg not in node:
            raise UnresolvedLocation(path, f"missing segment {seg!r} at depth {i}")
        node = node[seg]
    return node


def resolves(path: Path, store: Store | dict) -> bool:
    try:
        eval_loc(path, store)
    except UnresolvedLocation:
        return False
    return True


def _set_in(node: dict, segs: tuple[str, ...], value, path: Path) -> dict:
    head = segs[0]
    new = dict(node)
    if len(segs) == 1:
        new[head] = value
        return new
    child = node.get(head)
    if not isinstance(child, dict):
        raise UnresolvedLocation(path, f"missing interior node {head!r}")
    new[head] = _set_in(child, segs[1:], value, path)
    return new


def write_root(root: dict, path: Path, value) -> dict:
    return _set_in(root, path.segments, value, path)


def write_genuine(store: Store, path: Path, value) -> Store:
    """Replace the subtree at ``path``; the parent must already resolve."""
    return store.with_root(write_root(store.root, path, value))


def apply_genuine_set(store: Store, updates: Mapping[Path, object]) -> Store:
    root = store.root
    for path in sorted(updates):
        root = write_root(root, path, updates[path])
    return store.with_root(root)


# -- literal text form -------------------------------------------------------

def parse_value_tokens(ts: TokenStream):
    if ts.accept("op", "{"):
        node = {}
        if ts.accept("op", "}"):
            return node
        while True:
            key_tok = ts.next()
            if key_tok.kind not in ("name", "int"):
                raise ParseError(f"expected key, got {key_tok.text!r}", ts.line, key_tok.column)
            key = key_tok.text
            if key in node:
                raise ParseError(f"duplicate key {key!r}", ts.line, key_tok.column)
            ts.expect("op", ":")
            node[key] = parse_value_tokens(ts)
            if ts.accept("op", "}"):
                return node
            ts.expect("op", ",")
    neg = ts.accept("op", "-") is not None
    tok = ts.next()
    if tok.kind == "int":
        v = -tok.value if neg else tok.value
        if not INT64_MIN <= v <= INT64_MAX:
            raise ParseError(f"integer {v} outside signed 64-bit range", ts.line, tok.column)
        return v
    if neg:
        raise ParseError("'-' must precede an integer", ts.line, tok.column)
    if tok.kind == "str":
        return tok.value
    if tok.kind == "name" and tok.text in ("true", "false"):
        return tok.text == "true"
    raise ParseError(f"expected a value, got {tok.text!r}", ts.line, tok.column)


def parse_value(text: str, line: int | None = None):
    """Parse ``{ a: 1, b: { c: "x" } }``-style literals."""
    ts = TokenStream(tokenize(text, line), line)
    v = parse_value_tokens(ts)
    ts.expect_end()
    return v


def format_value(v) -> str:
    if type(v) is bool:
        return "true" if v else "false"
    if type(v) is int:
        return str(v)
    if type(v) is str:
        return json.dumps(v, ensure_ascii=False)
    inner = ", ".join(f"{k}: {format_value(v[k])}" for k in sorted(v))
    return "{ " + inner + " }" if inner else "{}"
