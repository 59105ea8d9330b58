"""Tokenizer shared by the store-literal and workload-expression parsers."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import ParseError

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<path>(?:/[A-Za-z0-9_]+)+)
  | (?P<int>\d+)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>==|!=|<=|>=|:=|[-+*<>(){}\[\],:=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # path | int | str | name | op | end
    text: str
    column: int  # 1-based

    @property
    def value(self):
        if self.kind == "int":
            return int(self.text)
        if self.kind == "str":
            return json.loads(self.text)
        return self.text


def tokenize(text: str, line: int | None = None, column_offset: int = 0) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, column_offset + pos + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), column_offset + pos + 1))
        pos = m.end()
    tokens.append(Token("end", "", column_offset + len(text) + 1))
    return tokens


class TokenStream:
    def __init__(self, tokens: list[Token], line: int | None = None):
        self.tokens = tokens
        self.pos = 0
        self.line = line

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        if tok.kind != "end":
            self.pos += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        if self.at(kind, text):
            return self.next()
        return None

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if not self.at(kind, text):
            want = repr(text) if text else kind
            got = repr(tok.text) if tok.kind != "end" else "end of line"
            raise ParseError(f"expected {want}, got {got}", self.line, tok.column)
        return self.next()

    def error(self, message: str) -> ParseError:
        return ParseError(message, self.line, self.peek().column)

    def expect_end(self) -> None:
        if not self.at("end"):
            raise self.error(f"unexpected trailing input {self.peek().text!r}")
