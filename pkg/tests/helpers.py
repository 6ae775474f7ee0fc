"""Shared test utilities: random tree/corpus builders and tiny fixtures."""

from __future__ import annotations

import random

from optlm.tokens import (
    END,
    MathToken,
    NUM_HEAD,
    OOV_HEAD,
    OptNode,
    TokenKind,
    digit,
    node,
    op,
    var,
)
from optlm.vocab import MathVocab

OPS = ("+", "-", "*", "/", "^", "=")
VARS = ("x", "y", "a", "b", "t")
DIGITS = "0123456789"
OOV_CHARS = "spedcot"


def random_normalized_tree(
    rng: random.Random,
    max_depth: int = 6,
    max_width: int = 8,
    parent_prob: float = 0.45,
) -> OptNode:
    """Random tree obeying every normalization rule.

    Parents always end with an end-marker child; number heads hold digits,
    OOV heads hold text pieces; ``max_width`` counts the end marker.
    """

    def build(depth_left: int) -> OptNode:
        if depth_left <= 0 or rng.random() >= parent_prob:
            if rng.random() < 0.5:
                return OptNode(var(rng.choice(VARS)))
            return OptNode(digit(rng.choice(DIGITS)))
        roll = rng.random()
        if roll < 0.2 and depth_left >= 1:
            kids = [
                OptNode(digit(rng.choice(DIGITS + ".")))
                for _ in range(rng.randint(1, min(4, max_width - 1)))
            ]
            return OptNode(NUM_HEAD, kids + [OptNode(END)])
        if roll < 0.35 and depth_left >= 1:
            kids = [
                OptNode(MathToken(TokenKind.MATH_TEXT, rng.choice(OOV_CHARS)))
                for _ in range(rng.randint(1, min(4, max_width - 1)))
            ]
            return OptNode(OOV_HEAD, kids + [OptNode(END)])
        n_children = rng.randint(1, max_width - 1)
        kids = [build(depth_left - 1) for _ in range(n_children)]
        return OptNode(op(rng.choice(OPS)), kids + [OptNode(END)])

    root = build(max_depth)
    if not root.is_parent_kind():
        # make the common case a real tree, keeping leaf roots possible
        if rng.random() < 0.9:
            kids = [root, build(max_depth - 1), OptNode(END)]
            return OptNode(op(rng.choice(OPS)), kids)
    return root


def random_plain_tree(
    rng: random.Random, max_nodes: int = 6, labels: tuple = ("f", "g", "a", "b", "c")
) -> OptNode:
    """Small arbitrary ordered labeled tree (for edit-distance oracles)."""
    budget = rng.randint(1, max_nodes)

    def build() -> tuple[OptNode, int]:
        nonlocal budget
        budget -= 1
        me = OptNode(var(rng.choice(labels)))
        while budget > 0 and rng.random() < 0.6:
            child, _ = build()
            me.children.append(child)
        return me, budget

    tree, _ = build()
    return tree


def brute_force_ted(a: OptNode, b: OptNode) -> int:
    """Independent minimal-edit-script oracle via forest recursion.

    Uses the ordered-forest recurrence over rightmost roots with unit costs,
    memoized on structural forest keys; fine for the tiny trees it sees.
    """
    memo: dict[tuple, int] = {}

    def fsize(t: tuple) -> int:
        return 1 + sum(fsize(c) for c in t[1])

    def dist(fa: tuple, fb: tuple) -> int:
        if not fa:
            return sum(fsize(t) for t in fb)
        if not fb:
            return sum(fsize(t) for t in fa)
        key = (fa, fb)
        if key in memo:
            return memo[key]
        ra, rb = fa[-1], fb[-1]
        best = min(
            dist(fa[:-1] + ra[1], fb) + 1,                       # delete
            dist(fa, fb[:-1] + rb[1]) + 1,                       # insert
            dist(fa[:-1], fb[:-1]) + dist(ra[1], rb[1])
            + (0 if ra[0] == rb[0] else 1),                      # relabel
        )
        memo[key] = best
        return best

    return dist((freeze_tree(a),), (freeze_tree(b),))


def freeze_tree(t: OptNode) -> tuple:
    return ((int(t.kind), t.symbol), tuple(freeze_tree(c) for c in t.children))


def default_vocab() -> MathVocab:
    return MathVocab.default()


def equation_prompts(bundle, records):
    """Encoded prompts that end with an opened formula, plus gold trees."""
    from optlm.data import encode_document
    from optlm.tokens import TypeTag
    from optlm.trees import normalize_tree
    from optlm.parser import parse_math

    rules = bundle.rules()
    layout = bundle.layout
    prompts, golds = [], []
    for rec in records:
        seq = encode_document(rec["problem"] + " ", layout, bundle.number_subtrees)
        seq.ids.append(rules.fs_id)
        seq.type_tags.append(int(TypeTag.CONTROL))
        seq.positions.append(None)
        prompts.append(seq)
        golds.append(
            normalize_tree(
                parse_math(rec["equation"]), bundle.math_vocab,
                oov_tokenize=bundle.text_vocab.tokenize,
            )
        )
    return prompts, golds


def generated_formula_tree(result, rules):
    """Tree of the formula opened by the prompt, or None if unfinished."""
    from optlm.tokens import MixedSequence
    from optlm.trees import tree_from_span

    if rules.fe_id not in result.new_ids:
        return None
    cut = result.new_ids.index(rules.fe_id)
    new_items = list(result.sequence)[result.prompt_len:]
    try:
        return tree_from_span(new_items[:cut])
    except Exception:
        return None


def equation_tree_match_rate(model, bundle, records, batch_size=64,
                             max_len=110) -> float:
    """Greedy-decode equations for each record; exact-tree match rate."""
    from optlm.decoding import generate_batch
    from optlm.metrics import tree_match

    rules = bundle.rules()
    prompts, golds = equation_prompts(bundle, records)
    model.eval()
    hits = 0
    for start in range(0, len(prompts), batch_size):
        results = generate_batch(
            model, rules, prompts[start:start + batch_size], mode="greedy",
            max_len=max_len, stop_at_formula_end=True,
        )
        for res, gold in zip(results, golds[start:start + batch_size]):
            tree = generated_formula_tree(res, rules)
            if tree is not None and tree_match(tree, gold):
                hits += 1
    model.train()
    return hits / len(prompts)
