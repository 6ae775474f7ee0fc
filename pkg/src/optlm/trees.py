"""Operator-tree normalization, traversal, and serialization.

Normalization turns a raw parse tree into the canonical form the model
consumes: every parent gains a trailing end-marker child, multi-digit
numbers become digit sub-trees under a number head, and symbols outside the
math vocabulary become text-token sub-trees under an OOV head. Normalized
trees obey the depth and child-count caps.

All functions here are pure; input trees are never mutated.
"""

from __future__ import annotations

from typing import Callable, Iterable, TYPE_CHECKING

from .errors import (
    CapExceeded,
    InvalidTraversal,
    MathSyntaxError,
    UnbalancedDelimiter,
    UnsupportedOperator,
)
from .parser import parse_math
from .tokens import (
    END,
    END_FORMULA,
    KIND_TO_TYPE,
    MAX_CHILD_COUNT,
    MAX_TREE_DEPTH,
    NUM_HEAD,
    OOV_HEAD,
    PARENT_KINDS,
    START_FORMULA,
    MathToken,
    MixedItem,
    MixedSequence,
    OptNode,
    TokenKind,
    TreePos,
    TypeTag,
    check_position,
    digit,
)

if TYPE_CHECKING:
    from .vocab import MathVocab

# Splits an out-of-vocabulary symbol into text tokens when no trained text
# tokenizer is supplied.
def _char_fallback(symbol: str) -> list[str]:
    return list(symbol)


_RAW_LEAF_KINDS = (TokenKind.VARIABLE, TokenKind.NUMBER, TokenKind.DIGIT)


def normalize_tree(
    tree: OptNode,
    vocab: "MathVocab",
    oov_tokenize: Callable[[str], list[str]] | None = None,
    number_subtrees: bool = True,
) -> OptNode:
    """Normalize a raw parse tree against a math vocabulary.

    ``oov_tokenize`` decides how out-of-vocabulary symbols decompose into
    text tokens; it defaults to single characters. With ``number_subtrees``
    disabled, multi-digit numbers stay single leaves when the vocabulary
    lists them and fall back to OOV sub-trees otherwise.
    """
    tokenize = oov_tokenize or _char_fallback

    def oov_subtree(symbol: str) -> OptNode:
        pieces = tokenize(symbol)
        if not pieces:
            raise ValueError(f"empty text tokenization for {symbol!r}")
        children = [OptNode(MathToken(TokenKind.MATH_TEXT, p)) for p in pieces]
        children.append(OptNode(END))
        return OptNode(OOV_HEAD, children)

    def number_subtree(symbol: str) -> OptNode:
        children = [OptNode(digit(ch)) for ch in symbol]
        children.append(OptNode(END))
        return OptNode(NUM_HEAD, children)

    def walk(n: OptNode) -> OptNode:
        kind = n.kind
        if kind == TokenKind.OPERATOR:
            if n.symbol not in vocab.operators:
                raise UnsupportedOperator(f"operator {n.symbol!r} not in vocabulary")
            children = [walk(c) for c in n.children]
            children.append(OptNode(END))
            return OptNode(n.token, children)
        if kind not in _RAW_LEAF_KINDS or n.children:
            raise ValueError(f"not a raw parse tree: unexpected {n.token!r}")
        if kind == TokenKind.VARIABLE:
            if n.symbol in vocab.variables:
                return OptNode(n.token)
            return oov_subtree(n.symbol)
        if kind == TokenKind.DIGIT:
            return OptNode(n.token)
        # numbers
        if number_subtrees:
            if len(n.symbol) == 1:
                return OptNode(digit(n.symbol))
            return number_subtree(n.symbol)
        if vocab.has_number_token(n.symbol):
            return OptNode(n.token)
        if len(n.symbol) == 1:
            return OptNode(digit(n.symbol))
        return oov_subtree(n.symbol)

    normalized = walk(tree)
    check_caps(normalized)
    return normalized


def check_caps(tree: OptNode):
    """Raise CapExceeded if any node breaks the depth or child-count limit."""

    def walk(n: OptNode, depth: int):
        if depth > MAX_TREE_DEPTH:
            raise CapExceeded(f"node depth {depth} exceeds cap {MAX_TREE_DEPTH}")
        if len(n.children) > MAX_CHILD_COUNT:
            raise CapExceeded(
                f"{len(n.children)} children exceed cap {MAX_CHILD_COUNT}"
            )
        for c in n.children:
            walk(c, depth + 1)

    walk(tree, 0)


def compute_positions(tree: OptNode) -> list[tuple[OptNode, TreePos]]:
    """Preorder list of (node, position); the root has the empty position."""
    out: list[tuple[OptNode, TreePos]] = []

    def walk(n: OptNode, path: TreePos):
        out.append((n, check_position(path)))
        for j, c in enumerate(n.children):
            walk(c, path + (j,))

    walk(tree, ())
    return out


def linearize(tree: OptNode) -> list[MixedItem]:
    """Depth-first token stream of a normalized tree, with positions."""
    return [
        MixedItem(node.token, KIND_TO_TYPE[node.kind], pos)
        for node, pos in compute_positions(tree)
    ]


def delinearize(items: Iterable[tuple[MathToken, TreePos]]) -> OptNode:
    """Rebuild the unique tree whose depth-first traversal matches ``items``.

    Raises InvalidTraversal when the token/position stream is not a valid
    traversal (wrong position, leaf given children, missing or extra end
    markers) and CapExceeded when it implies a tree past the caps.
    """
    pairs = [(tok, tuple(pos)) for tok, pos in items]
    if not pairs:
        raise InvalidTraversal("empty token stream")
    token, pos = pairs[0]
    if pos != ():
        raise InvalidTraversal(f"first token at {pos}, expected the root")
    if token.kind == TokenKind.END:
        raise InvalidTraversal("end marker with no open parent")
    root = OptNode(token)
    if token.kind not in PARENT_KINDS:
        if len(pairs) > 1:
            raise InvalidTraversal("tokens after a complete tree")
        return root
    stack = [root]
    expected: TreePos = (0,)
    for token, pos in pairs[1:]:
        if not stack:
            raise InvalidTraversal("tokens after a complete tree")
        if pos != expected:
            raise InvalidTraversal(f"token at {pos}, expected {expected}")
        if token.kind == TokenKind.END:
            stack[-1].children.append(OptNode(token))
            stack.pop()
            parent_pos = pos[:-1]
            if not stack:
                expected = ()
                continue
            expected = parent_pos[:-1] + (parent_pos[-1] + 1,)
        elif token.kind in PARENT_KINDS:
            child = OptNode(token)
            stack[-1].children.append(child)
            stack.append(child)
            expected = pos + (0,)
        else:
            stack[-1].children.append(OptNode(token))
            expected = pos[:-1] + (pos[-1] + 1,)
        check_position(expected)
    if stack:
        raise InvalidTraversal(f"{len(stack)} unterminated parent nodes")
    return root


def tree_from_span(items: Iterable[MixedItem]) -> OptNode:
    """Delinearize the math tokens of one formula span."""
    pairs = []
    for item in items:
        if not isinstance(item.token, MathToken) or item.position is None:
            raise InvalidTraversal("formula span contains non-tree items")
        pairs.append((item.token, item.position))
    return delinearize(pairs)


# JSON tree files: each node is [kind, name, children-or-null], with an
# optional fourth element holding the node's position as an integer array.

_KIND_TO_JSON = {
    TokenKind.OPERATOR: "op",
    TokenKind.VARIABLE: "var",
    TokenKind.DIGIT: "digit",
    TokenKind.NUMBER: "number",
    TokenKind.END: "end",
    TokenKind.NUM_HEAD: "num_head",
    TokenKind.OOV_HEAD: "oov_head",
    TokenKind.MATH_TEXT: "text",
}
_JSON_TO_KIND = {v: k for k, v in _KIND_TO_JSON.items()}


def tree_to_json(tree: OptNode, with_positions: bool = False):
    def walk(n: OptNode, path: TreePos):
        children = (
            [walk(c, path + (j,)) for j, c in enumerate(n.children)]
            if n.children
            else None
        )
        node = [_KIND_TO_JSON[n.kind], n.symbol, children]
        if with_positions:
            node.append(list(path))
        return node

    return walk(tree, ())


def tree_from_json(obj) -> OptNode:
    if not isinstance(obj, (list, tuple)) or len(obj) not in (3, 4):
        raise ValueError(f"malformed tree node: {obj!r}")
    kind_str, symbol, children = obj[0], obj[1], obj[2]
    if kind_str not in _JSON_TO_KIND:
        raise ValueError(f"unknown node kind {kind_str!r}")
    token = MathToken(_JSON_TO_KIND[kind_str], symbol)
    kids = [tree_from_json(c) for c in children] if children else []
    return OptNode(token, kids)


def strip_end_nodes(tree: OptNode) -> OptNode:
    """Copy of the tree without end-marker children."""
    kids = [strip_end_nodes(c) for c in tree.children if c.kind != TokenKind.END]
    return OptNode(tree.token, kids)


def collapse_number_subtrees(tree: OptNode) -> OptNode:
    """Copy with digit sub-trees folded back into single number leaves."""
    if tree.kind == TokenKind.NUM_HEAD:
        numeral = "".join(
            c.symbol for c in tree.children if c.kind != TokenKind.END
        )
        kind = TokenKind.DIGIT if len(numeral) == 1 else TokenKind.NUMBER
        return OptNode(MathToken(kind, numeral))
    return OptNode(tree.token, [collapse_number_subtrees(c) for c in tree.children])


def mixed_to_document(seq: MixedSequence, frac: bool = False) -> str:
    """Inverse of segment_regions: text chunks plus $-wrapped printed trees."""
    from .latex import to_latex

    out = []
    items = list(seq)
    spans = seq.formula_spans()
    span_at = {start - 1: (start, end) for start, end in spans}
    i = 0
    while i < len(items):
        item = items[i]
        if isinstance(item.token, str):
            out.append(item.token)
            i += 1
        elif i in span_at:
            start, end = span_at[i]
            out.append("$" + to_latex(tree_from_span(items[start:end]), frac) + "$")
            i = end + 1
        else:
            i += 1   # stray control or truncated span
    return "".join(out)


def segment_regions(
    doc: str,
    vocab: "MathVocab",
    oov_tokenize: Callable[[str], list[str]] | None = None,
    number_subtrees: bool = True,
) -> MixedSequence:
    """Split a document into text regions and $-delimited formula spans.

    Each formula is parsed, normalized, and linearized in place between
    start/end control items. Text regions stay single un-tokenized chunks.
    Raises UnbalancedDelimiter on an unclosed $ and MathSyntaxError on empty
    or adjacent formulas (every formula must have text on at least one side
    of the pair, since a formula end may only be followed by text).
    """
    seq = MixedSequence()
    i = 0
    n = len(doc)
    last_was_formula = False
    while i < n:
        dollar = doc.find("$", i)
        if dollar == -1:
            seq.append(MixedItem(doc[i:], TypeTag.TEXT))
            last_was_formula = False
            break
        if dollar > i:
            seq.append(MixedItem(doc[i:dollar], TypeTag.TEXT))
            last_was_formula = False
        elif last_was_formula:
            raise MathSyntaxError("adjacent formulas without separating text", dollar)
        delim = "$$" if doc.startswith("$$", dollar) else "$"
        start = dollar + len(delim)
        close = doc.find(delim, start)
        if close == -1:
            raise UnbalancedDelimiter("unclosed formula delimiter", dollar)
        body = doc[start:close]
        if not body.strip():
            raise MathSyntaxError("empty formula", dollar)
        try:
            tree = normalize_tree(
                parse_math(body), vocab, oov_tokenize, number_subtrees
            )
        except MathSyntaxError as exc:
            raise type(exc)(exc.message, start + exc.offset) from exc
        seq.append(MixedItem(START_FORMULA, TypeTag.CONTROL))
        seq.extend(linearize(tree))
        seq.append(MixedItem(END_FORMULA, TypeTag.CONTROL))
        last_was_formula = True
        i = close + len(delim)
    return seq
