"""Tiny s-expression reader/writer with source locations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Union

from .terms import RabError


class SpecSyntaxError(RabError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Sym:
    text: str
    line: int = 0
    col: int = 0

    def __repr__(self) -> str:
        return self.text


@dataclass(frozen=True)
class SList:
    items: tuple
    line: int = 0
    col: int = 0

    def __repr__(self) -> str:
        return "(" + " ".join(map(repr, self.items)) + ")"

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, i):
        return self.items[i]


Node = Union[Sym, SList]

_DELIMS = "(); \t\r\n"


def tokenize(text: str) -> Iterator[Sym]:
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
        elif c in " \t\r":
            i += 1
            col += 1
        elif c == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif c in "()":
            yield Sym(c, line, col)
            i += 1
            col += 1
        else:
            start = i
            scol = col
            while i < n and text[i] not in _DELIMS:
                i += 1
                col += 1
            yield Sym(text[start:i], line, scol)


def read_all(text: str) -> List[Node]:
    out: List[Node] = []
    stack: List[list] = []
    locs: List[tuple] = []
    for tok in tokenize(text):
        if tok.text == "(":
            stack.append([])
            locs.append((tok.line, tok.col))
        elif tok.text == ")":
            if not stack:
                raise SpecSyntaxError("unbalanced ')'", tok.line, tok.col)
            items = stack.pop()
            line, col = locs.pop()
            node = SList(tuple(items), line, col)
            if stack:
                stack[-1].append(node)
            else:
                out.append(node)
        else:
            if stack:
                stack[-1].append(tok)
            else:
                out.append(tok)
    if stack:
        line, col = locs[-1]
        raise SpecSyntaxError("unclosed '('", line, col)
    return out


def write(node: Node) -> str:
    if isinstance(node, Sym):
        return node.text
    return "(" + " ".join(write(x) for x in node.items) + ")"
