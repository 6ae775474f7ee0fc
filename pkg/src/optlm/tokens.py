"""Core token and operator-tree types.

An operator tree (OPT) is an ordered rooted tree where internal nodes are
operators and leaves are variables or numbers. Normalized trees additionally
carry an end-marker as the last child of every parent, represent multi-digit
numbers as digit sub-trees under a number head, and represent symbols outside
the math vocabulary as text-token sub-trees under an OOV head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

from .errors import CapExceeded

MAX_TREE_DEPTH = 32
MAX_CHILD_COUNT = 64

# Tree position: sibling indices from the root. The root is the empty tuple;
# child j of a node at p sits at p + (j,).
TreePos = tuple[int, ...]


class TokenKind(IntEnum):
    OPERATOR = 0
    VARIABLE = 1
    DIGIT = 2          # single character "0"-"9" or "."
    NUMBER = 3         # multi-character numeral; raw trees only, unless
                       # number sub-trees are disabled by configuration
    END = 4            # closes a parent's child list
    START_FORMULA = 5
    END_FORMULA = 6
    NUM_HEAD = 7       # parent of digit children
    OOV_HEAD = 8       # parent of text-token children
    MATH_TEXT = 9      # text token inside an OOV sub-tree


class TypeTag(IntEnum):
    """Symbol type used for the type-embedding summand and the id groups."""

    TEXT = 0
    OPERATOR = 1
    VARIABLE = 2
    NUMBER = 3
    END = 4
    CONTROL = 5


PARENT_KINDS = frozenset({TokenKind.OPERATOR, TokenKind.NUM_HEAD, TokenKind.OOV_HEAD})

CONTROL_KINDS = frozenset({TokenKind.START_FORMULA, TokenKind.END_FORMULA})

# Kinds that never carry a user-visible symbol.
SYMBOLLESS_KINDS = frozenset(
    {TokenKind.END, TokenKind.START_FORMULA, TokenKind.END_FORMULA,
     TokenKind.NUM_HEAD, TokenKind.OOV_HEAD}
)

KIND_TO_TYPE: dict[TokenKind, TypeTag] = {
    TokenKind.OPERATOR: TypeTag.OPERATOR,
    TokenKind.VARIABLE: TypeTag.VARIABLE,
    TokenKind.DIGIT: TypeTag.NUMBER,
    TokenKind.NUMBER: TypeTag.NUMBER,
    TokenKind.END: TypeTag.END,
    TokenKind.START_FORMULA: TypeTag.CONTROL,
    TokenKind.END_FORMULA: TypeTag.CONTROL,
    TokenKind.NUM_HEAD: TypeTag.OPERATOR,
    TokenKind.OOV_HEAD: TypeTag.OPERATOR,
    TokenKind.MATH_TEXT: TypeTag.TEXT,
}

DIGIT_CHARS = "0123456789."


@dataclass(frozen=True)
class MathToken:
    kind: TokenKind
    symbol: str = ""

    def __post_init__(self):
        if self.kind in SYMBOLLESS_KINDS and self.symbol:
            raise ValueError(f"{self.kind.name} tokens carry no symbol")
        if self.kind == TokenKind.DIGIT and self.symbol not in DIGIT_CHARS:
            raise ValueError(f"invalid digit symbol {self.symbol!r}")

    def __repr__(self):
        return f"{self.kind.name}({self.symbol!r})" if self.symbol else self.kind.name


END = MathToken(TokenKind.END)
START_FORMULA = MathToken(TokenKind.START_FORMULA)
END_FORMULA = MathToken(TokenKind.END_FORMULA)
NUM_HEAD = MathToken(TokenKind.NUM_HEAD)
OOV_HEAD = MathToken(TokenKind.OOV_HEAD)


def op(symbol: str) -> MathToken:
    return MathToken(TokenKind.OPERATOR, symbol)


def var(symbol: str) -> MathToken:
    return MathToken(TokenKind.VARIABLE, symbol)


def digit(symbol: str) -> MathToken:
    return MathToken(TokenKind.DIGIT, symbol)


def number(symbol: str) -> MathToken:
    return MathToken(TokenKind.NUMBER, symbol)


@dataclass
class OptNode:
    """Ordered tree node. Equality is structural (token and children)."""

    token: MathToken
    children: list[OptNode] = field(default_factory=list)

    @property
    def kind(self) -> TokenKind:
        return self.token.kind

    @property
    def symbol(self) -> str:
        return self.token.symbol

    def is_parent_kind(self) -> bool:
        return self.token.kind in PARENT_KINDS

    def is_leaf(self) -> bool:
        return not self.children

    def preorder(self):
        yield self
        for child in self.children:
            yield from child.preorder()

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)

    def depth(self) -> int:
        """Length of the longest root-to-node path; a lone leaf has depth 0."""
        return 1 + max(c.depth() for c in self.children) if self.children else 0

    def max_width(self) -> int:
        return max((max(len(n.children), *(0,)) for n in self.preorder()), default=0)

    def __repr__(self):
        if not self.children:
            return repr(self.token)
        inner = ", ".join(repr(c) for c in self.children)
        return f"{self.token!r}({inner})"


def node(token: MathToken, *children: OptNode | MathToken) -> OptNode:
    """Convenience constructor; bare tokens become leaf nodes."""
    kids = [c if isinstance(c, OptNode) else OptNode(c) for c in children]
    return OptNode(token, kids)


def check_position(path: TreePos) -> TreePos:
    if len(path) > MAX_TREE_DEPTH:
        raise CapExceeded(f"tree position depth {len(path)} exceeds cap {MAX_TREE_DEPTH}")
    for entry in path:
        if not 0 <= entry < MAX_CHILD_COUNT:
            raise CapExceeded(f"sibling index {entry} outside [0, {MAX_CHILD_COUNT})")
    return path


@dataclass(frozen=True)
class MixedItem:
    """One element of a mixed text/math sequence.

    ``token`` is a plain string for text-region tokens and a MathToken inside
    formula spans. ``position`` is None for text and control tokens.
    """

    token: MathToken | str
    type_tag: TypeTag
    position: TreePos | None = None

    def is_text(self) -> bool:
        return isinstance(self.token, str)


class MixedSequence:
    """Ordered items alternating between text regions and formula spans."""

    def __init__(self, items: list[MixedItem] | None = None):
        self.items: list[MixedItem] = items or []

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, idx):
        return self.items[idx]

    def append(self, item: MixedItem):
        self.items.append(item)

    def extend(self, items):
        self.items.extend(items)

    def formula_spans(self) -> list[tuple[int, int]]:
        """(start, end) index pairs of the math tokens inside each complete
        formula, excluding the control tokens themselves."""
        spans = []
        start = None
        for i, item in enumerate(self.items):
            if isinstance(item.token, MathToken):
                if item.token.kind == TokenKind.START_FORMULA:
                    start = i + 1
                elif item.token.kind == TokenKind.END_FORMULA and start is not None:
                    spans.append((start, i))
                    start = None
        return spans

    def __repr__(self):
        return f"MixedSequence({self.items!r})"
