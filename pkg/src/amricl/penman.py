"""Reading and writing AMR graphs in PENMAN notation.

Only the subset of PENMAN that AMR parsers emit is handled: nested
``(var / concept :role target ...)`` nodes whose targets are nodes, variable
references, quoted strings or bare constants. Constants become leaf nodes in
the reserved ``_const<N>`` namespace.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass
from typing import Iterable, TextIO, Union

from .graph import AmrEdge, AmrGraph, AmrNode, GraphError, is_inverse_role

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
    |(?P<lp>\()
    |(?P<rp>\))
    |(?P<slash>/)
    |(?P<role>:[^\s()"/]*)
    |(?P<string>"(?:[^"\\]|\\.)*")
    |(?P<symbol>[^\s()"/:][^\s()"/]*)
    |(?P<bad>.)
    """,
    re.X | re.S,
)
# bare symbols of this shape are read as variables, anything else undefined is a constant
_VAR_SHAPE = re.compile(r"^[a-z]{1,3}\d*(?:~\d+)?$")
CONST_PREFIX = "_const"


@dataclass(frozen=True)
class ParseDiagnostic:
    line: int
    column: int
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class PenmanDocument:
    metadata: dict[str, str]
    body: str
    start_line: int = 1


class PenmanError(ValueError):
    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.line_starts = [0] + [m.end() for m in re.finditer(r"\n", text)]
        self.toks = [_Tok(m.lastgroup, m.group(), m.start())
                     for m in _TOKEN.finditer(text) if m.lastgroup != "ws"]
        self.i = 0
        self.diags: list[ParseDiagnostic] = []
        self.nodes: dict[str, AmrNode] = {}
        self.edges: list[AmrEdge] = []
        self.refs: list[tuple[str, int]] = []
        self.n_const = 0

    def where(self, pos: int) -> tuple[int, int]:
        pos = min(pos, max(len(self.text) - 1, 0))
        line = bisect.bisect_right(self.line_starts, pos)
        n_lines = max(1, len(self.text.splitlines()))
        line = min(line, n_lines)
        return line, pos - self.line_starts[line - 1] + 1

    def error(self, msg: str, pos: int) -> None:
        line, col = self.where(pos)
        self.diags.append(ParseDiagnostic(line, col, msg))

    def peek(self) -> _Tok | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self) -> _Tok | None:
        tok = self.peek()
        if tok is not None:
            self.i += 1
        return tok

    def parse(self) -> AmrGraph | None:
        tok = self.peek()
        if tok is None:
            self.error("empty graph", 0)
            return None
        if tok.kind != "lp":
            self.error(f"expected '(' but found {tok.text!r}", tok.pos)
            return None
        root = self.node()
        if self.diags:
            return None
        extra = self.peek()
        if extra is not None:
            msg = "unbalanced parentheses" if extra.kind == "rp" else f"unexpected {extra.text!r} after graph"
            self.error(msg, extra.pos)
            return None
        defined_vars = {v for v, n in self.nodes.items() if not n.is_constant}
        for var, pos in self.refs:
            if var not in defined_vars:
                self.error(f"dangling variable reference {var!r}", pos)
        if self.diags:
            return None
        try:
            return AmrGraph(tuple(self.nodes.values()), tuple(self.edges), root)
        except GraphError as exc:
            self.error(str(exc), 0)
            return None

    def node(self) -> str | None:
        self.take()
        var_tok = self.take()
        if var_tok is None:
            self.error("unbalanced parentheses", len(self.text))
            return None
        if var_tok.kind != "symbol":
            self.error(f"expected variable but found {var_tok.text!r}", var_tok.pos)
            return None
        var = var_tok.text
        slash = self.peek()
        if slash is None or slash.kind != "slash":
            self.error(f"missing '/' concept for variable {var!r}", var_tok.pos)
            return None
        self.take()
        concept = self.take()
        if concept is None:
            self.error("unbalanced parentheses", len(self.text))
            return None
        if concept.kind not in ("symbol", "string"):
            self.error(f"expected concept but found {concept.text!r}", concept.pos)
            return None
        if var in self.nodes:
            self.error(f"duplicate concept assignment to variable {var!r}", var_tok.pos)
            return None
        self.nodes[var] = AmrNode(var, concept.text)
        while True:
            tok = self.take()
            if tok is None:
                self.error("unbalanced parentheses", len(self.text))
                return None
            if tok.kind == "rp":
                return var
            if tok.kind != "role":
                if tok.kind == "bad" and tok.text == '"':
                    self.error("unterminated string", tok.pos)
                else:
                    self.error(f"expected role or ')' but found {tok.text!r}", tok.pos)
                return None
            if tok.text == ":":
                self.error("empty role name", tok.pos)
                return None
            # reserve the slot first so edges keep the textual order of their roles
            slot = len(self.edges)
            self.edges.append(None)
            target = self.target()
            if target is None:
                return None
            self.edges[slot] = AmrEdge(var, tok.text, target, is_inverse_role(tok.text))

    def target(self) -> str | None:
        tok = self.peek()
        if tok is None:
            self.error("unbalanced parentheses", len(self.text))
            return None
        if tok.kind == "lp":
            return self.node()
        self.take()
        if tok.kind == "string" or (tok.kind == "symbol" and not _VAR_SHAPE.match(tok.text)
                                     and tok.text not in self._all_defined()):
            return self.constant(tok.text)
        if tok.kind == "symbol":
            self.refs.append((tok.text, tok.pos))
            return tok.text
        if tok.kind == "bad" and tok.text == '"':
            self.error("unterminated string", tok.pos)
        else:
            self.error(f"expected role target but found {tok.text!r}", tok.pos)
        return None

    def constant(self, literal: str) -> str:
        var = f"{CONST_PREFIX}{self.n_const}"
        self.n_const += 1
        self.nodes[var] = AmrNode(var, literal, is_constant=True)
        return var

    def _all_defined(self) -> set[str]:
        # variables defined anywhere in the text, so forward references resolve
        if not hasattr(self, "_defined"):
            self._defined = {self.toks[k - 1].text for k in range(1, len(self.toks))
                             if self.toks[k].kind == "slash" and self.toks[k - 1].kind == "symbol"}
        return self._defined


def _strip_comments(text: str) -> str:
    # blank out comment lines but keep offsets so diagnostics stay aligned
    return "\n".join(" " * len(l) if l.lstrip().startswith("#") else l for l in text.split("\n"))


def parse_penman(text: str) -> AmrGraph:
    """Parse one PENMAN graph. Raises :class:`PenmanError` with diagnostics."""
    graph, diags = parse_with_diagnostics(text)
    if graph is None:
        raise PenmanError(diags)
    return graph


def parse_with_diagnostics(text: str) -> tuple[AmrGraph | None, list[ParseDiagnostic]]:
    p = _Parser(_strip_comments(text))
    graph = p.parse()
    return graph, p.diags


def serialize_penman(graph: AmrGraph, indent: int | None = 4) -> str:
    """Write ``graph`` as PENMAN, children in stored edge order.

    A variable is expanded at its first mention and referenced afterwards.
    With ``indent=None`` the graph is written on one line.
    """
    if graph.root not in graph.node_map:
        raise GraphError("graph has no root")
    nm = graph.node_map
    if nm[graph.root].is_constant:
        raise GraphError("constant node cannot be the root")
    incoming: dict[str, int] = {}
    for e in graph.edges:
        incoming[e.target] = incoming.get(e.target, 0) + 1
    for n in graph.nodes:
        if n.is_constant and (graph.outgoing[n.var] or incoming.get(n.var, 0) != 1):
            raise GraphError(f"constant node {n.var!r} must be a leaf with one parent")

    expanded: set[str] = set()
    parts: list[str] = []

    def write(var: str, depth: int) -> None:
        expanded.add(var)
        parts.append(f"({var} / {nm[var].concept}")
        for ei in graph.outgoing[var]:
            e = graph.edges[ei]
            parts.append(" " if indent is None else "\n" + " " * (indent * (depth + 1)))
            parts.append(e.role + " ")
            tgt = nm[e.target]
            if tgt.is_constant:
                parts.append(tgt.concept)
            elif tgt.var in expanded:
                parts.append(tgt.var)
            else:
                write(tgt.var, depth + 1)
        parts.append(")")

    write(graph.root, 0)
    if len(expanded) != sum(1 for n in graph.nodes if not n.is_constant):
        raise GraphError("graph is disconnected: some nodes are unreachable from the root")
    return "".join(parts)


def _parse_metadata(line: str) -> dict[str, str]:
    out = {}
    body = line.lstrip()[1:].strip()
    for chunk in re.split(r"(?:^|\s)::", " " + body)[1:]:
        key, _, value = chunk.strip().partition(" ")
        if key:
            out[key] = value.strip()
    return out


def _blocks(lines: Iterable[str]):
    block: list[str] = []
    start = 1
    for n, line in enumerate(lines, 1):
        if line.strip():
            if not block:
                start = n
            block.append(line.rstrip("\n"))
        elif block:
            yield start, block
            block = []
    if block:
        yield start, block


def parse_corpus(stream: Union[TextIO, Iterable[str]]) -> tuple[list[tuple[PenmanDocument, AmrGraph]], list[ParseDiagnostic]]:
    """Parse blank-line separated PENMAN blocks in file order.

    Malformed blocks are skipped; their diagnostics carry absolute line
    numbers. I/O errors propagate.
    """
    entries: list[tuple[PenmanDocument, AmrGraph]] = []
    diags: list[ParseDiagnostic] = []
    for start, block in _blocks(stream):
        meta: dict[str, str] = {}
        body_lines = []
        for line in block:
            if line.lstrip().startswith("#"):
                if line.lstrip().startswith("# ::"):
                    meta.update(_parse_metadata(line))
            else:
                body_lines.append(line)
        if not body_lines:
            diags.append(ParseDiagnostic(start, 1, "block has no graph body", "warning"))
            continue
        first_body = start + next(i for i, l in enumerate(block) if not l.lstrip().startswith("#"))
        body = "\n".join(body_lines)
        graph, block_diags = parse_with_diagnostics(body)
        if graph is None:
            diags.extend(ParseDiagnostic(d.line + first_body - 1, d.column, d.message, d.severity)
                         for d in block_diags)
            continue
        entries.append((PenmanDocument(meta, body, start), graph))
    return entries, diags


__all__ = ["PenmanDocument", "ParseDiagnostic", "PenmanError", "parse_penman", "parse_with_diagnostics",
           "serialize_penman", "parse_corpus"]
