"""Tree edit distance, exact evaluation, text metrics, and corpus scoring."""

import random
from fractions import Fraction

import pytest

from optlm.errors import (
    DivisionByZero,
    Misaligned,
    UnboundVariable,
    UnsupportedOperator,
)
from optlm.metrics import (
    bleu4,
    evaluate_expression,
    metric_tokenize,
    rouge_l,
    score_predictions,
    solve_equal,
    ted,
    tree_match,
)
from optlm.parser import parse_math
from optlm.tokens import END, OptNode, digit, node, op, var
from optlm.trees import normalize_tree
from optlm.vocab import MathVocab

from helpers import brute_force_ted, random_plain_tree

VOCAB = MathVocab.default()


def norm(expr: str):
    return normalize_tree(parse_math(expr), VOCAB)


# --- tree edit distance -------------------------------------------------------


def test_ted_identity():
    t = norm("x=1+2")
    assert ted(t, t) == 0


def test_ted_single_relabel():
    a = node(op("+"), var("a"), digit("2"), END)
    b = node(op("+"), var("b"), digit("2"), END)
    assert ted(a, b) == 1
    assert brute_force_ted(a, b) == 1


def test_ted_single_delete():
    a = node(op("+"), var("a"), digit("2"), END)
    b = node(op("+"), var("a"), END)
    assert ted(a, b) == 1
    assert brute_force_ted(a, b) == 1


def test_ted_symmetry_and_triangle():
    rng = random.Random(31)
    for _ in range(60):
        a = random_plain_tree(rng)
        b = random_plain_tree(rng)
        c = random_plain_tree(rng)
        ab, ba = ted(a, b), ted(b, a)
        assert ab == ba
        assert ted(a, c) <= ab + ted(b, c)
        assert (ted(a, b) == 0) == (a == b)


def test_ted_equals_brute_force_on_small_trees():
    rng = random.Random(13)
    for _ in range(150):
        a = random_plain_tree(rng, max_nodes=6)
        b = random_plain_tree(rng, max_nodes=6)
        assert ted(a, b) == brute_force_ted(a, b)


def test_tree_match():
    assert tree_match(norm("1+2"), norm("1+2"))
    assert not tree_match(norm("1+2"), norm("2+1"))


# --- exact rational evaluation --------------------------------------------------


def test_evaluate_simple_sum():
    assert evaluate_expression(norm("1+2")) == 3


def test_evaluate_nested_fraction_equation():
    # independent check with stdlib rational arithmetic:
    # 1 - 2/5 - 1/3 = 4/15, and 280 / (4/15) = 1050
    expected = Fraction(280) / (1 - Fraction(2, 5) - Fraction(1, 3))
    assert expected == 1050
    assert evaluate_expression(norm("x=280/(1-(2/5)-(1/3))")) == expected


def test_evaluate_decimals_exactly():
    assert evaluate_expression(norm("9.8*10")) == Fraction(98)
    assert evaluate_expression(norm("0.1+0.2")) == Fraction(3, 10)


def test_evaluate_power_and_unary_minus():
    assert evaluate_expression(norm("-2^2")) == -4      # ^ binds above unary -
    assert evaluate_expression(norm("2^{10}")) == 1024
    assert evaluate_expression(norm("2^(-2)")) == Fraction(1, 4)


def test_evaluate_bindings_and_oov_names():
    tree = norm("speed = 2t")
    value = evaluate_expression(tree, {"t": Fraction(3)})
    assert value == 6
    with pytest.raises(UnboundVariable):
        evaluate_expression(tree)


def test_evaluate_errors():
    with pytest.raises(DivisionByZero):
        evaluate_expression(norm("1/0"))
    with pytest.raises(DivisionByZero):
        evaluate_expression(norm("1/(2-2)"))
    with pytest.raises(UnsupportedOperator):
        evaluate_expression(norm("\\sin{x}"), {"x": Fraction(1)})
    with pytest.raises(UnsupportedOperator):
        evaluate_expression(norm("2^{0.5}"))


def test_solve_equal_vs_tree_match():
    a, b = norm("x=1+2"), norm("x=2+1")
    assert solve_equal(a, b)
    assert not tree_match(a, b)
    assert solve_equal(a, a)
    assert not solve_equal(norm("x=3"), norm("x=4"))
    # unevaluable but identical trees still count as solve-equal
    t = norm("y+z")
    assert solve_equal(t, t)


# --- text metrics ---------------------------------------------------------------


def test_bleu_identical_is_hundred():
    toks = [metric_tokenize("x = 2 + 3")]
    assert abs(bleu4(toks, toks) - 100.0) < 1e-6


def test_bleu_disjoint_is_zero():
    assert bleu4([list("abcd")], [list("wxyz")]) < 1e-3


def test_bleu_matches_hand_computed_fixture():
    # counts by hand for cand=a b c d e f g vs ref=a b c d x f g:
    #   p1=6/7, p2=4/6, p3=2/5, p4=1/4, brevity 1
    cand = [list("abcdefg")]
    ref = [list("abcdxfg")]
    expected = 100.0 * float(
        Fraction(6, 7) * Fraction(4, 6) * Fraction(2, 5) * Fraction(1, 4)
    ) ** 0.25
    assert abs(bleu4(cand, ref) - expected) < 0.1


def test_rouge_identical_and_disjoint():
    toks = [metric_tokenize("the quick fox")]
    assert abs(rouge_l(toks, toks) - 100.0) < 1e-6
    assert rouge_l([list("abc")], [list("xyz")]) == 0.0


def test_rouge_matches_hand_computed_fixture():
    # LCS(a b c d e f g, a b c d x f g) = 6; P = R = 6/7; F1 = 6/7
    got = rouge_l([list("abcdefg")], [list("abcdxfg")])
    assert abs(got - 100.0 * 6 / 7) < 0.1


def test_metric_tokenize_latex():
    assert metric_tokenize("x=\\frac{280}{1-x}") == [
        "x", "=", "\\frac", "{", "280", "}", "{", "1", "-", "x", "}",
    ]


# --- corpus scoring --------------------------------------------------------------


def test_score_gold_against_itself_is_perfect():
    gold = [
        "Sum it: $x = 1+2$",
        "Scale: $y = 3 \\cdot 4$ done",
    ]
    report = score_predictions(gold, gold, VOCAB)
    assert report.tree_match_rate == 1.0
    assert report.solve_rate == 1.0
    assert report.mean_ted == 0.0
    assert abs(report.bleu4 - 100.0) < 1e-6
    assert abs(report.rouge_l - 100.0) < 1e-6


def test_score_empty_files():
    report = score_predictions([], [], VOCAB)
    assert report.n_lines == 0 and report.n_formula_pairs == 0
    assert report.tree_match_rate == 0.0


def test_score_misaligned():
    with pytest.raises(Misaligned):
        score_predictions(["a"], ["a", "b"], VOCAB)


def test_score_hand_tallied_fixture():
    gold = [
        "$x = 1+2$", "$x = 3-1$", "$x = 2 \\cdot 5$", "$x = 9/3$",
        "$x = 1+2$", "$x = 4+4$",
        "$x = 5+5$", "$x = 6+6$",
        "$x = 7+7$", "$x = 8$",
    ]
    pred = [
        "$x = 1+2$", "$x = 3-1$", "$x = 2 \\cdot 5$", "$x = 9/3$",   # 4 exact
        "$x = 2+1$", "$x = 2 \\cdot 4$",                             # solve only
        "$x = 9+9$", "$x = 1$",                                      # misses
        "$)($", "no formula here",                                   # unparseable
    ]
    report = score_predictions(pred, gold, VOCAB)
    assert report.n_formula_pairs == 10
    assert report.n_tree_match == 4
    assert report.n_solve == 6
    assert report.n_unparseable == 2
    assert report.tree_match_rate == 0.4
    assert report.solve_rate == 0.6
    assert report.tree_match_rate <= report.solve_rate


def test_score_renders_math_from_trees_for_text_metrics():
    # different spellings of the same tree compare as identical text
    report = score_predictions(["$\\frac{1}{2}$"], ["$1/2$"], VOCAB)
    assert report.tree_match_rate == 1.0
    assert abs(report.bleu4 - 100.0) < 1e-6


def test_ted_flags():
    gold = ["$x = 280$"]
    pred = ["$x = 91$"]
    base = score_predictions(pred, gold, VOCAB)
    collapsed = score_predictions(pred, gold, VOCAB, collapse_numbers=True)
    # digit sub-trees penalize every differing digit; collapsing folds the
    # whole mismatch into one relabel
    assert base.mean_ted == 3.0
    assert collapsed.mean_ted == 1.0
    with_end = score_predictions(pred, gold, VOCAB, include_end=True)
    assert with_end.mean_ted >= base.mean_ted
