"""Recursive-descent parser for a fixed LaTeX math subset.

Supported syntax: binary + - * / ^ and the relations = < > <= >=, parentheses
and brace groups, \\frac{..}{..}, \\sqrt, named single-argument functions,
unary minus, implicit multiplication, multi-character identifiers, decimal
numbers, and Greek letter commands. Unicode variants of the operator symbols
are accepted and canonicalized.

Grammar decisions (by fiat, to keep parsing deterministic):
  * A maximal run of letters is one identifier unless it names a function,
    so "newvelocity" is a single symbol and "xy" is never x*y.
  * Adjacency is multiplication when the right side starts a new atom, and
    implicit multiplication binds tighter than explicit * and /.
  * An exponent written without braces takes exactly one atom: "x^12" is
    x^(12) in this subset.
  * A function argument without parentheses or braces takes one atom plus
    any attached exponent: "\\sin x^2" is sin(x^2), "\\sin 2x" is sin(2)*x.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import MathSyntaxError, UnbalancedDelimiter
from .tokens import OptNode, TokenKind, MathToken, number, op, var

FUNCTION_NAMES = (
    "sin", "cos", "tan", "cot", "sec", "csc",
    "arcsin", "arccos", "arctan", "sinh", "cosh", "tanh",
    "log", "ln", "exp", "sqrt", "abs", "floor", "ceil",
)

GREEK_NAMES = (
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
    "iota", "kappa", "lambda", "mu", "nu", "xi", "pi", "rho", "sigma",
    "tau", "upsilon", "phi", "chi", "psi", "omega",
)

RELATION_SYMBOLS = ("=", "<", ">", "<=", ">=")
ARITHMETIC_SYMBOLS = ("+", "-", "*", "/", "^")

# Canonical spellings for LaTeX commands and unicode operator characters.
_SYMBOL_ALIASES = {
    "times": "*", "cdot": "*", "div": "/",
    "leq": "<=", "le": "<=", "geq": ">=", "ge": ">=",
    "−": "-", "×": "*", "⋅": "*", "÷": "/",
    "≤": "<=", "≥": ">=",
}

_NUMBER_RE = re.compile(r"\d+\.\d+|\d+|\.\d+")
_LETTERS_RE = re.compile(r"[A-Za-z]+")

# Binding powers; larger binds tighter.
_RELATION_BP = 10
_ADDITIVE_BP = 20
_MULTIPLICATIVE_BP = 30
_IMPLICIT_MUL_BP = 35
_UNARY_MINUS_BP = 40
_FUNC_ARG_BP = 45
_POWER_BP = 50

_INFIX_BP = {
    "=": _RELATION_BP, "<": _RELATION_BP, ">": _RELATION_BP,
    "<=": _RELATION_BP, ">=": _RELATION_BP,
    "+": _ADDITIVE_BP, "-": _ADDITIVE_BP,
    "*": _MULTIPLICATIVE_BP, "/": _MULTIPLICATIVE_BP,
    "^": _POWER_BP,
}


@dataclass(frozen=True)
class _Tok:
    kind: str   # "number" | "name" | "func" | "frac" | "sym" | "end"
    text: str
    offset: int


def _lex(expr: str) -> list[_Tok]:
    toks = []
    i = 0
    n = len(expr)
    while i < n:
        ch = expr[i]
        if ch.isspace():
            i += 1
            continue
        m = _NUMBER_RE.match(expr, i)
        if m:
            toks.append(_Tok("number", m.group(), i))
            i = m.end()
            continue
        m = _LETTERS_RE.match(expr, i)
        if m:
            word = m.group()
            kind = "func" if word in FUNCTION_NAMES else "name"
            toks.append(_Tok(kind, word, i))
            i = m.end()
            continue
        if ch == "\\":
            m = _LETTERS_RE.match(expr, i + 1)
            if not m:
                raise MathSyntaxError("stray backslash", i)
            word = m.group()
            if word == "frac":
                toks.append(_Tok("frac", word, i))
            elif word in _SYMBOL_ALIASES:
                toks.append(_Tok("sym", _SYMBOL_ALIASES[word], i))
            elif word in FUNCTION_NAMES:
                toks.append(_Tok("func", word, i))
            elif word in GREEK_NAMES:
                toks.append(_Tok("name", word, i))
            else:
                raise MathSyntaxError(f"unknown command \\{word}", i)
            i = m.end()
            continue
        if expr.startswith(("<=", ">="), i):
            toks.append(_Tok("sym", expr[i:i + 2], i))
            i += 2
            continue
        if ch in _SYMBOL_ALIASES:
            toks.append(_Tok("sym", _SYMBOL_ALIASES[ch], i))
            i += 1
            continue
        if ch in "+-*/^=<>(){}":
            toks.append(_Tok("sym", ch, i))
            i += 1
            continue
        raise MathSyntaxError(f"unexpected character {ch!r}", i)
    toks.append(_Tok("end", "", n))
    return toks


class _Parser:
    def __init__(self, expr: str):
        self.expr = expr
        self.toks = _lex(expr)
        self.pos = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.pos]

    def advance(self) -> _Tok:
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def expect_sym(self, text: str, opener_offset: int | None = None):
        tok = self.cur
        if tok.kind == "sym" and tok.text == text:
            self.advance()
            return
        if opener_offset is not None:
            raise UnbalancedDelimiter(f"expected {text!r}", opener_offset)
        raise MathSyntaxError(f"expected {text!r}", tok.offset)

    def parse(self) -> OptNode:
        if self.cur.kind == "end":
            raise MathSyntaxError("empty expression", 0)
        tree = self.expression(0)
        if self.cur.kind != "end":
            tok = self.cur
            if tok.kind == "sym" and tok.text in ")}":
                raise UnbalancedDelimiter(f"unmatched {tok.text!r}", tok.offset)
            raise MathSyntaxError(f"unexpected {tok.text!r}", tok.offset)
        return tree

    def expression(self, rbp: int) -> OptNode:
        left = self.prefix()
        while True:
            tok = self.cur
            if tok.kind == "sym" and tok.text in _INFIX_BP:
                lbp = _INFIX_BP[tok.text]
                if lbp <= rbp:
                    break
                self.advance()
                # ^ is right-associative, everything else left-associative
                right = self.expression(lbp - 1 if tok.text == "^" else lbp)
                left = OptNode(op(tok.text), [left, right])
                continue
            if self._starts_atom(tok) and _IMPLICIT_MUL_BP > rbp:
                right = self.expression(_IMPLICIT_MUL_BP)
                left = OptNode(op("*"), [left, right])
                continue
            break
        return left

    @staticmethod
    def _starts_atom(tok: _Tok) -> bool:
        if tok.kind in ("number", "name", "func", "frac"):
            return True
        return tok.kind == "sym" and tok.text in ("(", "{")

    def prefix(self) -> OptNode:
        tok = self.advance()
        if tok.kind == "number":
            return OptNode(number(tok.text))
        if tok.kind == "name":
            return OptNode(var(tok.text))
        if tok.kind == "func":
            return OptNode(op(tok.text), [self.func_argument()])
        if tok.kind == "frac":
            a = self.braced_group()
            b = self.braced_group()
            return OptNode(op("/"), [a, b])
        if tok.kind == "sym":
            if tok.text == "-":
                operand = self.expression(_UNARY_MINUS_BP)
                return OptNode(op("-"), [operand])
            if tok.text == "(":
                inner = self.expression(0)
                self.expect_sym(")", tok.offset)
                return inner
            if tok.text == "{":
                inner = self.expression(0)
                self.expect_sym("}", tok.offset)
                return inner
        raise MathSyntaxError(f"unexpected {tok.text!r}", tok.offset)

    def func_argument(self) -> OptNode:
        tok = self.cur
        if tok.kind == "sym" and tok.text == "{":
            return self.braced_group()
        return self.expression(_FUNC_ARG_BP)

    def braced_group(self) -> OptNode:
        tok = self.cur
        self.expect_sym("{")
        inner = self.expression(0)
        self.expect_sym("}", tok.offset)
        return inner


def parse_math(expr: str) -> OptNode:
    """Parse an expression from the LaTeX subset into a raw operator tree.

    The result is un-normalized: numerals are single NUMBER leaves, there are
    no end markers, and out-of-vocabulary symbols are plain variables.
    Raises MathSyntaxError (with character offset) on malformed input.
    """
    return _Parser(expr).parse()


def is_numeral(s: str) -> bool:
    """True for the numeral spellings the lexer accepts as a single number."""
    return bool(_NUMBER_RE.fullmatch(s))


def default_operator_symbols() -> list[str]:
    """Operator symbols the parser can produce, in a stable order."""
    return list(ARITHMETIC_SYMBOLS) + list(RELATION_SYMBOLS) + list(FUNCTION_NAMES)


def default_variable_symbols() -> list[str]:
    """Single Latin letters plus spelled-out Greek letters."""
    letters = [chr(c) for c in range(ord("a"), ord("z") + 1)]
    letters += [chr(c) for c in range(ord("A"), ord("Z") + 1)]
    return letters + list(GREEK_NAMES)
