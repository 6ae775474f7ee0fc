"""Render operator trees back to the LaTeX subset.

Printing is precedence-aware and inserts the minimal parentheses needed so
that re-parsing a printed tree reproduces it (modulo normalization). Trees
with degenerate shapes that the grammar cannot express, such as operators
with unusual arities produced by an unconstrained model, are still printed
best-effort but are not guaranteed to re-parse.
"""

from __future__ import annotations

from .errors import UnprintableNode
from .parser import FUNCTION_NAMES, GREEK_NAMES
from .tokens import OptNode, TokenKind

_RELATION_PREC = 10
_ADDITIVE_PREC = 20
_MULTIPLICATIVE_PREC = 30
_UNARY_PREC = 40
_POWER_PREC = 50
_ATOM_PREC = 100

_INFIX_PREC = {
    "=": _RELATION_PREC, "<": _RELATION_PREC, ">": _RELATION_PREC,
    "<=": _RELATION_PREC, ">=": _RELATION_PREC,
    "+": _ADDITIVE_PREC, "-": _ADDITIVE_PREC,
    "*": _MULTIPLICATIVE_PREC, "/": _MULTIPLICATIVE_PREC,
    "^": _POWER_PREC,
}

_INFIX_LATEX = {"<=": " \\leq ", ">=": " \\geq "}

_DIGITS = "0123456789."


def _merge_unsafe(left: str, right: str) -> bool:
    """Would juxtaposing these rendered fragments change how they lex?"""
    if not left or not right:
        return True
    a, b = left[-1], right[0]
    if a.isalpha() and b.isalpha():
        return True     # letter runs merge into one identifier
    if a in _DIGITS and b in _DIGITS:
        return True     # numerals merge
    return b == "-"     # would read as subtraction


def to_latex(tree: OptNode, frac: bool = False) -> str:
    """Print a raw or normalized tree as a LaTeX-subset string.

    With ``frac`` set, division renders as \\frac{..}{..} instead of inline.
    Raises UnprintableNode for structurally broken trees.
    """
    text, _ = _render(tree, frac)
    return text


def _real_children(node: OptNode) -> list[OptNode]:
    return [c for c in node.children if c.kind != TokenKind.END]


def _render(node: OptNode, frac: bool) -> tuple[str, int]:
    kind = node.kind
    if kind == TokenKind.VARIABLE:
        sym = node.symbol
        return ("\\" + sym if sym in GREEK_NAMES else sym), _ATOM_PREC
    if kind in (TokenKind.DIGIT, TokenKind.NUMBER):
        return node.symbol, _ATOM_PREC
    if kind == TokenKind.NUM_HEAD:
        digits = _real_children(node)
        if not digits or any(c.kind != TokenKind.DIGIT for c in digits):
            raise UnprintableNode(f"malformed number sub-tree: {node!r}")
        return "".join(c.symbol for c in digits), _ATOM_PREC
    if kind == TokenKind.OOV_HEAD:
        pieces = _real_children(node)
        if not pieces or any(c.kind != TokenKind.MATH_TEXT for c in pieces):
            raise UnprintableNode(f"malformed OOV sub-tree: {node!r}")
        return "".join(c.symbol for c in pieces), _ATOM_PREC
    if kind == TokenKind.OPERATOR:
        return _render_operator(node, frac)
    raise UnprintableNode(f"cannot print {node.token!r} node")


def _child(node: OptNode, frac: bool, min_prec: int) -> str:
    text, prec = _render(node, frac)
    return f"({text})" if prec < min_prec else text


def _render_operator(node: OptNode, frac: bool) -> tuple[str, int]:
    sym = node.symbol
    args = _real_children(node)

    if not args:
        return sym, _ATOM_PREC

    if sym in FUNCTION_NAMES and len(args) == 1:
        return f"\\{sym}{{{to_latex(args[0], frac)}}}", _ATOM_PREC

    if sym == "-" and len(args) == 1:
        body = _child(args[0], frac, _UNARY_PREC + 1)
        return "-" + body, _UNARY_PREC

    if sym == "^" and len(args) == 2:
        base = _child(args[0], frac, _POWER_PREC + 1)
        return f"{base}^{{{to_latex(args[1], frac)}}}", _POWER_PREC

    if sym == "/" and frac:
        out = to_latex(args[0], frac)
        for arg in args[1:]:
            out = f"\\frac{{{out}}}{{{to_latex(arg, frac)}}}"
        return out, _ATOM_PREC

    if sym == "*":
        prec = _MULTIPLICATIVE_PREC
        out = _child(args[0], frac, prec)
        for arg in args[1:]:
            piece = _child(arg, frac, prec + 1)
            out += piece if not _merge_unsafe(out, piece) else f" \\cdot {piece}"
        return out, prec

    if sym in _INFIX_PREC and len(args) >= 2:
        prec = _INFIX_PREC[sym]
        glue = _INFIX_LATEX.get(sym, sym)
        out = _child(args[0], frac, prec)
        for arg in args[1:]:
            out += glue + _child(arg, frac, prec + 1)
        return out, prec

    # Arities the grammar cannot express; printed but not re-parseable.
    inner = ", ".join(to_latex(a, frac) for a in args)
    return f"\\operatorname{{{sym}}}({inner})", _ATOM_PREC
