"""Tree and text evaluation metrics.

Tree edit distance is the ordered-tree Zhang-Shasha dynamic program with
unit insert/delete/relabel costs. Expression evaluation uses exact rational
arithmetic so value comparisons carry no tolerance. Text metrics are
corpus-level BLEU-4 (epsilon-smoothed) and mean sentence ROUGE-L.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from fractions import Fraction

from .errors import (
    DivisionByZero,
    EvaluationError,
    Misaligned,
    OptLmError,
    UnboundVariable,
    UnsupportedOperator,
)
from .latex import to_latex
from .tokens import MathToken, OptNode, TokenKind
from .trees import (
    collapse_number_subtrees,
    segment_regions,
    strip_end_nodes,
    tree_from_span,
)

# ---------------------------------------------------------------------------
# tree edit distance (Zhang-Shasha, unit costs)


def _label(node: OptNode) -> tuple[int, str]:
    return (int(node.kind), node.symbol)


class _Annotated:
    """Postorder nodes, leftmost leaf descendants, and keyroots."""

    def __init__(self, root: OptNode):
        self.labels: list[tuple[int, str]] = []
        self.lmds: list[int] = []
        lmd_of: dict[int, int] = {}

        def walk(node: OptNode) -> int:
            child_ids = [walk(c) for c in node.children]
            idx = len(self.labels)
            self.labels.append(_label(node))
            self.lmds.append(lmd_of[child_ids[0]] if child_ids else idx)
            lmd_of[idx] = self.lmds[idx]
            return idx

        walk(root)
        keyroots = {}
        for i, lmd in enumerate(self.lmds):
            keyroots[lmd] = i
        self.keyroots = sorted(keyroots.values())

    def __len__(self):
        return len(self.labels)


def ted(a: OptNode, b: OptNode) -> int:
    """Minimum unit-cost edit script (insert/delete/relabel) between trees."""
    ta, tb = _Annotated(a), _Annotated(b)
    na, nb = len(ta), len(tb)
    dist = [[0] * nb for _ in range(na)]

    for i in ta.keyroots:
        for j in tb.keyroots:
            _tree_dist(ta, tb, i, j, dist)
    return dist[na - 1][nb - 1]


def _tree_dist(ta: _Annotated, tb: _Annotated, i: int, j: int, dist):
    al, bl = ta.lmds, tb.lmds
    m = i - al[i] + 2
    n = j - bl[j] + 2
    fd = [[0] * n for _ in range(m)]
    ioff = al[i] - 1
    joff = bl[j] - 1
    for x in range(1, m):
        fd[x][0] = fd[x - 1][0] + 1
    for y in range(1, n):
        fd[0][y] = fd[0][y - 1] + 1
    for x in range(1, m):
        for y in range(1, n):
            if al[i] == al[x + ioff] and bl[j] == bl[y + joff]:
                relabel = 0 if ta.labels[x + ioff] == tb.labels[y + joff] else 1
                fd[x][y] = min(
                    fd[x - 1][y] + 1,
                    fd[x][y - 1] + 1,
                    fd[x - 1][y - 1] + relabel,
                )
                dist[x + ioff][y + joff] = fd[x][y]
            else:
                p = al[x + ioff] - 1 - ioff
                q = bl[y + joff] - 1 - joff
                fd[x][y] = min(
                    fd[x - 1][y] + 1,
                    fd[x][y - 1] + 1,
                    fd[p][q] + dist[x + ioff][y + joff],
                )


def tree_match(a: OptNode, b: OptNode) -> bool:
    """Structural equality of trees."""
    return a == b


# ---------------------------------------------------------------------------
# exact rational evaluation

Bindings = dict[str, Fraction]


def evaluate_expression(tree: OptNode, bindings: Bindings | None = None) -> Fraction:
    """Exact rational value of a tree; an equation evaluates its right side.

    Supports + - * / with any arity, ^ with an integer exponent, and unary
    minus. Numbers may be digit leaves, number leaves, or digit sub-trees.
    OOV sub-trees evaluate through ``bindings`` by their reassembled name.
    """
    bindings = bindings or {}
    root = tree
    if root.kind == TokenKind.OPERATOR and root.symbol in ("=", "<", ">", "<=", ">="):
        args = _args(root)
        if len(args) != 2:
            raise UnsupportedOperator(f"relation with arity {len(args)}")
        root = args[1]
    return _eval(root, bindings)


def _args(node: OptNode) -> list[OptNode]:
    return [c for c in node.children if c.kind != TokenKind.END]


def _numeral_value(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise EvaluationError(f"malformed numeral {text!r}") from exc


def _eval(node: OptNode, bindings: Bindings) -> Fraction:
    kind = node.kind
    if kind in (TokenKind.DIGIT, TokenKind.NUMBER):
        return _numeral_value(node.symbol)
    if kind == TokenKind.NUM_HEAD:
        return _numeral_value("".join(c.symbol for c in _args(node)))
    if kind == TokenKind.VARIABLE or kind == TokenKind.OOV_HEAD:
        name = (
            node.symbol
            if kind == TokenKind.VARIABLE
            else "".join(c.symbol for c in _args(node))
        )
        if name not in bindings:
            raise UnboundVariable(f"no binding for {name!r}")
        return Fraction(bindings[name])
    if kind != TokenKind.OPERATOR:
        raise UnsupportedOperator(f"cannot evaluate {node.token!r}")

    sym = node.symbol
    args = [_eval(c, bindings) for c in _args(node)]
    if not args:
        raise UnsupportedOperator(f"operator {sym!r} with no operands")
    if sym == "+":
        return sum(args, Fraction(0))
    if sym == "-":
        if len(args) == 1:
            return -args[0]
        out = args[0]
        for value in args[1:]:
            out -= value
        return out
    if sym == "*":
        out = Fraction(1)
        for value in args:
            out *= value
        return out
    if sym == "/":
        if len(args) < 2:
            raise UnsupportedOperator("division needs two operands")
        out = args[0]
        for value in args[1:]:
            if value == 0:
                raise DivisionByZero("division by zero")
            out /= value
        return out
    if sym == "^":
        if len(args) != 2:
            raise UnsupportedOperator("power needs exactly two operands")
        base, exponent = args
        if exponent.denominator != 1:
            raise UnsupportedOperator("non-integer exponent")
        if base == 0 and exponent < 0:
            raise DivisionByZero("zero raised to a negative power")
        return base ** int(exponent)
    raise UnsupportedOperator(f"operator {sym!r} is not evaluatable")


def solve_equal(pred: OptNode, gold: OptNode, bindings: Bindings | None = None) -> bool:
    """Do two equations produce the same value?

    Structurally identical trees always count as solve-equal, which keeps
    tree match a lower bound of solve rate even when evaluation fails.
    """
    if pred == gold:
        return True
    try:
        return evaluate_expression(pred, bindings) == evaluate_expression(
            gold, bindings
        )
    except EvaluationError:
        return False


# ---------------------------------------------------------------------------
# text metrics

_METRIC_TOKEN_RE = re.compile(r"\\[A-Za-z]+|[A-Za-z0-9]+|[^\sA-Za-z0-9]")

_BLEU_EPS = 1e-9


def metric_tokenize(text: str) -> list[str]:
    """LaTeX commands, alphanumeric runs, and single symbols as tokens."""
    return _METRIC_TOKEN_RE.findall(text)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates: list[list[str]], references: list[list[str]]) -> float:
    """Corpus-level BLEU-4 on a 0-100 scale with epsilon smoothing."""
    if len(candidates) != len(references):
        raise Misaligned("candidate/reference count mismatch")
    if not candidates:
        return 0.0
    matches = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            cand_ngrams = _ngrams(cand, n)
            ref_ngrams = _ngrams(ref, n)
            matches[n - 1] += sum(
                min(count, ref_ngrams[g]) for g, count in cand_ngrams.items()
            )
            totals[n - 1] += sum(cand_ngrams.values())
    log_precision = 0.0
    for m, t in zip(matches, totals):
        log_precision += math.log((m + _BLEU_EPS) / (t + _BLEU_EPS)) if t else math.log(_BLEU_EPS)
    log_precision /= 4
    if cand_len == 0:
        return 0.0
    brevity = min(1.0, math.exp(1.0 - ref_len / cand_len))
    return 100.0 * brevity * math.exp(log_precision)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidates: list[list[str]], references: list[list[str]]) -> float:
    """Mean sentence-level ROUGE-L F1 on a 0-100 scale."""
    if len(candidates) != len(references):
        raise Misaligned("candidate/reference count mismatch")
    if not candidates:
        return 0.0
    scores = []
    for cand, ref in zip(candidates, references):
        lcs = _lcs_length(cand, ref)
        if lcs == 0:
            scores.append(0.0)
            continue
        precision = lcs / len(cand)
        recall = lcs / len(ref)
        scores.append(2 * precision * recall / (precision + recall))
    return 100.0 * sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# corpus scoring

@dataclass
class EvalReport:
    tree_match_rate: float
    solve_rate: float
    mean_ted: float
    bleu4: float
    rouge_l: float
    n_lines: int
    n_formula_pairs: int
    n_tree_match: int
    n_solve: int
    n_unparseable: int

    def to_json(self):
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("tree match", f"{100 * self.tree_match_rate:6.2f} %"),
            ("solve rate", f"{100 * self.solve_rate:6.2f} %"),
            ("mean TED", f"{self.mean_ted:8.3f}"),
            ("BLEU-4", f"{self.bleu4:8.2f}"),
            ("ROUGE-L", f"{self.rouge_l:8.2f}"),
            ("lines", f"{self.n_lines:8d}"),
            ("formula pairs", f"{self.n_formula_pairs:8d}"),
            ("unparseable", f"{self.n_unparseable:8d}"),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def _line_trees(line: str, vocab) -> tuple[list[OptNode | None], str]:
    """Formula trees of one line (None for unparseable spans) and the line
    itself with math spans re-printed from their trees."""
    try:
        seq = segment_regions(line, vocab)
    except OptLmError:
        return [None], line
    trees = [tree_from_span(seq[start:end]) for start, end in seq.formula_spans()]
    return trees, _render_line(seq)


def _render_line(seq) -> str:
    out = []
    spans = seq.formula_spans()
    idx = 0
    i = 0
    items = list(seq)
    while i < len(items):
        item = items[i]
        if isinstance(item.token, str):
            out.append(item.token)
            i += 1
            continue
        if item.token.kind == TokenKind.START_FORMULA and idx < len(spans):
            start, end = spans[idx]
            out.append("$" + to_latex(tree_from_span(items[start:end])) + "$")
            i = end + 1
            idx += 1
            continue
        i += 1
    return "".join(out)


def _comparison_tree(
    tree: OptNode, include_end: bool, collapse_numbers: bool
) -> OptNode:
    if not include_end:
        tree = strip_end_nodes(tree)
    if collapse_numbers:
        tree = collapse_number_subtrees(tree)
    return tree


def score_predictions(
    pred_lines: list[str],
    gold_lines: list[str],
    vocab,
    include_end: bool = False,
    collapse_numbers: bool = False,
) -> EvalReport:
    """Score line-aligned predictions against gold lines.

    Formula spans pair up positionally within each line; a missing or
    unparseable predicted formula counts as a full miss with edit distance
    equal to the gold tree size, while gold spans that fail to parse are
    skipped. Text metrics compare whole lines with math spans printed back
    from their trees.
    """
    if len(pred_lines) != len(gold_lines):
        raise Misaligned(
            f"{len(pred_lines)} prediction lines vs {len(gold_lines)} gold lines"
        )
    pairs = 0
    n_match = 0
    n_solve = 0
    n_unparseable = 0
    ted_total = 0
    cand_tokens = []
    ref_tokens = []
    for pred_line, gold_line in zip(pred_lines, gold_lines):
        pred_trees, pred_rendered = _line_trees(pred_line, vocab)
        gold_trees, gold_rendered = _line_trees(gold_line, vocab)
        cand_tokens.append(metric_tokenize(pred_rendered))
        ref_tokens.append(metric_tokenize(gold_rendered))
        for k, gold_tree in enumerate(gold_trees):
            if gold_tree is None:
                continue
            pairs += 1
            gold_cmp = _comparison_tree(gold_tree, include_end, collapse_numbers)
            pred_tree = pred_trees[k] if k < len(pred_trees) else None
            if pred_tree is None:
                n_unparseable += 1
                ted_total += gold_cmp.size()
                continue
            pred_cmp = _comparison_tree(pred_tree, include_end, collapse_numbers)
            if tree_match(pred_cmp, gold_cmp):
                n_match += 1
            if solve_equal(pred_tree, gold_tree):
                n_solve += 1
            ted_total += ted(pred_cmp, gold_cmp)

    report = EvalReport(
        tree_match_rate=n_match / pairs if pairs else 0.0,
        solve_rate=n_solve / pairs if pairs else 0.0,
        mean_ted=ted_total / pairs if pairs else 0.0,
        bleu4=bleu4(cand_tokens, ref_tokens),
        rouge_l=rouge_l(cand_tokens, ref_tokens),
        n_lines=len(pred_lines),
        n_formula_pairs=pairs,
        n_tree_match=n_match,
        n_solve=n_solve,
        n_unparseable=n_unparseable,
    )
    # identical trees always evaluate identically, so this ordering is a law
    assert report.n_tree_match <= report.n_solve, (
        "tree match count exceeded solve count"
    )
    return report


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.to_json(), indent=1)
