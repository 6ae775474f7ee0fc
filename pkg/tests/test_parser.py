"""Parser and printer behavior on the LaTeX subset."""

import random

import pytest

from optlm.errors import MathSyntaxError, UnbalancedDelimiter
from optlm.latex import to_latex
from optlm.parser import parse_math
from optlm.tokens import OptNode, node, number, op, var
from optlm.trees import normalize_tree
from optlm.vocab import MathVocab

from helpers import random_normalized_tree


def tree(sym, *kids):
    return node(op(sym), *kids)


def test_single_binary_op():
    assert parse_math("a+2") == tree("+", var("a"), number("2"))


def test_relation_with_implicit_multiplication():
    expected = tree(
        "=",
        OptNode(var("newvelocity")),
        tree("*", number("9.8"), var("t")),
    )
    assert parse_math("newvelocity = 9.8t") == expected


def test_nested_fraction_precedence():
    # hand-checked against the precedence rules; value cross-checked in
    # test_metrics against an independent rational evaluator
    expected = tree(
        "=",
        OptNode(var("x")),
        tree(
            "/",
            number("280"),
            tree(
                "-",
                tree("-", number("1"), tree("/", number("2"), number("5"))),
                tree("/", number("1"), number("3")),
            ),
        ),
    )
    assert parse_math("x=280/(1-(2/5)-(1/3))") == expected


def test_precedence_chain():
    # ^ binds above unary minus, which binds above * and /
    assert parse_math("-x^2") == tree("-", tree("^", var("x"), number("2")))
    assert parse_math("2*x+1") == tree("+", tree("*", number("2"), var("x")), number("1"))
    assert parse_math("a<b+1") == tree("<", var("a"), tree("+", var("b"), number("1")))


def test_power_right_associative():
    assert parse_math("x^y^z") == tree("^", var("x"), tree("^", var("y"), var("z")))


def test_implicit_multiplication_binds_tighter_than_division():
    assert parse_math("a/2b") == tree(
        "/", var("a"), tree("*", number("2"), var("b"))
    )


def test_letter_run_is_one_identifier():
    assert parse_math("xy") == OptNode(var("xy"))
    assert parse_math("x y") == tree("*", var("x"), var("y"))


def test_frac_and_sqrt_commands():
    assert parse_math("\\frac{1}{2}") == tree("/", number("1"), number("2"))
    assert parse_math("\\sqrt{2}") == tree("sqrt", number("2"))
    assert parse_math("\\sqrt2") == tree("sqrt", number("2"))


def test_functions_take_one_atom_with_exponent():
    assert parse_math("\\sin x^2") == tree("sin", tree("^", var("x"), number("2")))
    assert parse_math("sin(x+1)") == tree("sin", tree("+", var("x"), number("1")))


def test_greek_and_unicode_operators():
    assert parse_math("\\alpha + \\beta") == tree("+", var("alpha"), var("beta"))
    assert parse_math("a × b") == tree("*", var("a"), var("b"))
    assert parse_math("a ≤ b") == tree("<=", var("a"), var("b"))


def test_syntax_errors_carry_offsets():
    with pytest.raises(UnbalancedDelimiter) as err:
        parse_math("(a+2")
    assert err.value.offset == 0
    with pytest.raises(MathSyntaxError) as err:
        parse_math("a+\\foo{2}")
    assert err.value.offset == 2
    with pytest.raises(MathSyntaxError):
        parse_math("")
    with pytest.raises(MathSyntaxError) as err:
        parse_math("a+2}")
    assert err.value.offset == 3


def test_unknown_character_offset():
    with pytest.raises(MathSyntaxError) as err:
        parse_math("a ? b")
    assert err.value.offset == 2


# --- printing ---------------------------------------------------------------


def test_print_simple():
    vocab = MathVocab.default()
    t = normalize_tree(parse_math("a+2"), vocab)
    assert to_latex(t) == "a+2"


def test_print_division_styles():
    vocab = MathVocab.default()
    t = normalize_tree(parse_math("280/(1-x)"), vocab)
    assert to_latex(t) == "280/(1-x)"
    assert to_latex(t, frac=True) == "\\frac{280}{1-x}"


def test_print_oov_name():
    vocab = MathVocab.default()
    t = normalize_tree(parse_math("newvelocity"), vocab)
    assert to_latex(t) == "newvelocity"


def test_print_inserts_explicit_product_when_fragments_would_merge():
    assert to_latex(tree("*", number("2"), number("3"))) == "2 \\cdot 3"
    assert to_latex(tree("*", var("x"), var("y"))) == "x \\cdot y"
    assert to_latex(tree("*", number("9.8"), var("t"))) == "9.8t"
    assert to_latex(tree("*", var("x"), number("2"))) == "x2"


def test_print_parse_closure_on_corpus_grammar():
    vocab = MathVocab.default()
    expressions = [
        "a+b*c", "(a+b)*c", "x=280/(1-(2/5)-(1/3))", "-x^2+1",
        "\\frac{a}{b-c}", "speed = 4.2t", "x^{2}-y^{2}", "2(x+1)(x-2)",
        "\\sqrt{x+1}", "\\sin{x}+\\cos{y}", "a \\leq b+1", "1/2/3",
    ]
    for expr in expressions:
        t = normalize_tree(parse_math(expr), vocab)
        for frac in (False, True):
            printed = to_latex(t, frac=frac)
            again = normalize_tree(parse_math(printed), vocab)
            assert again == t, f"{expr!r} -> {printed!r} changed structure"


def test_print_parse_closure_on_random_trees():
    vocab = MathVocab.default()
    rng = random.Random(11)
    checked = 0
    for _ in range(300):
        t = random_normalized_tree(rng, max_depth=4, max_width=4)
        try:
            printed = to_latex(t)
        except Exception:
            continue  # degenerate arities are not printable-parseable
        try:
            again = normalize_tree(parse_math(printed), vocab)
        except MathSyntaxError:
            continue
        if _in_printable_closure(t, vocab):
            assert again == t, f"{printed!r} changed structure"
            checked += 1
    assert checked >= 50


def _in_printable_closure(t, vocab) -> bool:
    """True when the tree lies in the image of parse+normalize, i.e. every
    operator arity is expressible and sub-tree heads reverse uniquely."""
    from optlm.parser import FUNCTION_NAMES
    from optlm.tokens import TokenKind

    for n in t.preorder():
        real = [c for c in n.children if c.kind != TokenKind.END]
        if n.kind == TokenKind.NUM_HEAD and len(real) < 2:
            return False      # single digits normalize to plain leaves
        if n.kind == TokenKind.OOV_HEAD:
            name = "".join(c.symbol for c in real)
            if len(name) < 2 or name in vocab.variables or name in FUNCTION_NAMES:
                return False  # would re-parse as a known symbol
        if n.kind != TokenKind.OPERATOR:
            continue
        if n.symbol in FUNCTION_NAMES:
            if len(real) != 1:
                return False
        elif n.symbol == "-":
            if len(real) not in (1, 2):
                return False
        elif len(real) != 2:
            return False
    return True
