"""Deterministic synthetic corpus of word problems with equations.

Each record pairs a short natural-language problem with a single-variable
equation in the LaTeX subset. Templates cover one to three arithmetic
operations, parenthesized and nested-fraction structure, decimal numbers,
and equations whose left side is a multi-letter (out-of-vocabulary) name.
Every instantiated equation is checked to parse, normalize, and (for closed
forms) evaluate to an exact rational before it is emitted.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import EvaluationError, OptLmError
from .metrics import evaluate_expression
from .parser import parse_math
from .trees import normalize_tree
from .vocab import MathVocab

_NAMES = ("Tom", "Mia", "Sam", "Ava", "Leo", "Zoe", "Max", "Ida")
_THINGS = ("apples", "marbles", "coins", "pages", "stickers", "cards",
           "pebbles", "tickets")


@dataclass(frozen=True)
class ProblemTemplate:
    """Text with value slots plus the matching equation skeleton.

    ``slots`` maps a slot name to a range spec: ("int", lo, hi) for whole
    numbers or ("dec", lo, hi) for one-decimal-place values. ``closed``
    marks equations whose right side evaluates with no free variables.
    """

    text: str
    equation: str
    slots: dict[str, tuple]
    closed: bool = True


DEFAULT_TEMPLATES: tuple[ProblemTemplate, ...] = (
    ProblemTemplate(
        "{name} has {a} {thing} and finds {b} more. How many {thing} in total?",
        "x = {a} + {b}",
        {"a": ("int", 2, 99), "b": ("int", 2, 99)},
    ),
    ProblemTemplate(
        "{name} starts with {a} {thing} and gives away {b}. How many are left?",
        "x = {a} - {b}",
        {"a": ("int", 40, 99), "b": ("int", 2, 39)},
    ),
    ProblemTemplate(
        "Each box holds {a} {thing} and {name} fills {b} boxes. How many {thing}?",
        "x = {a} \\cdot {b}",
        {"a": ("int", 2, 12), "b": ("int", 2, 12)},
    ),
    ProblemTemplate(
        "{name} splits {a} {thing} evenly among {b} friends. How many each?",
        "x = {a} / {b}",
        {"a": ("int", 10, 96), "b": ("int", 2, 8)},
    ),
    ProblemTemplate(
        "{name} buys {b} bags of {a} {thing} and also {c} loose ones. How many?",
        "x = {a} \\cdot {b} + {c}",
        {"a": ("int", 2, 12), "b": ("int", 2, 9), "c": ("int", 2, 20)},
    ),
    ProblemTemplate(
        "{name} owns {a} {thing}, gets {b} more, then doubles the pile {c} times"
        " over. How many now?",
        "x = ({a} + {b}) \\cdot {c}",
        {"a": ("int", 2, 30), "b": ("int", 2, 30), "c": ("int", 2, 6)},
    ),
    ProblemTemplate(
        "A tank drains {a} liters through two leaks of {b} and {c} liters."
        " What remains?",
        "x = {a} - ({b} + {c})",
        {"a": ("int", 50, 99), "b": ("int", 2, 20), "c": ("int", 2, 20)},
    ),
    ProblemTemplate(
        "A recipe needs {a} cups split across portions of {b} minus a part"
        " of {c} over {d}. Compute the share.",
        "x = {a} / ({b} - {c} / {d})",
        {"a": ("int", 10, 99), "b": ("int", 3, 9), "c": ("int", 1, 9),
         "d": ("int", 2, 9)},
    ),
    ProblemTemplate(
        "{name} walks {a} kilometers every hour for {b} hours. How far?",
        "x = {a} \\cdot {b}",
        {"a": ("dec", 1, 9), "b": ("int", 2, 9)},
    ),
    ProblemTemplate(
        "A ribbon of {a} meters is cut into pieces of {b} meters. How many"
        " pieces?",
        "x = \\frac{{{a}}}{{{b}}}",
        {"a": ("int", 10, 90), "b": ("int", 2, 9)},
    ),
    ProblemTemplate(
        "Mix {a} parts of one syrup with {b} parts of another over a base"
        " of {c}. What fraction results?",
        "x = {a}/{c} + {b}/{c}",
        {"a": ("int", 1, 9), "b": ("int", 1, 9), "c": ("int", 2, 9)},
    ),
    ProblemTemplate(
        "A square garden has sides of {a} meters. What is its area?",
        "x = {a}^{{2}}",
        {"a": ("int", 2, 30)},
    ),
    ProblemTemplate(
        "The total cost is {a} {thing} plus {b} batches of {c}. Give the total.",
        "total = {a} + {b} \\cdot {c}",
        {"a": ("int", 2, 50), "b": ("int", 2, 9), "c": ("int", 2, 20)},
    ),
    ProblemTemplate(
        "A cart moves at {a} meters per second. Express the distance after"
        " t seconds.",
        "distance = {a}t",
        {"a": ("dec", 1, 9)},
        closed=False,
    ),
    ProblemTemplate(
        "Take {a}, subtract the ratio of {b} to {c}, then scale by {d}."
        " What is the result?",
        "x = ({a} - {b}/{c}) \\cdot {d}",
        {"a": ("int", 2, 20), "b": ("int", 1, 20), "c": ("int", 2, 9),
         "d": ("int", 2, 9)},
    ),
    ProblemTemplate(
        "Stack {a} rows of {b} {thing}, then remove {c} of them. How many stay?",
        "x = {a} \\cdot {b} - {c}",
        {"a": ("int", 2, 12), "b": ("int", 2, 12), "c": ("int", 2, 20)},
    ),
)


def _draw(rng: random.Random, spec: tuple) -> str:
    kind = spec[0]
    if kind == "int":
        return str(rng.randint(spec[1], spec[2]))
    if kind == "dec":
        return f"{rng.randint(spec[1], spec[2])}.{rng.randint(1, 9)}"
    raise ValueError(f"unknown slot kind {kind!r}")


def _instantiate(
    rng: random.Random, template: ProblemTemplate, vocab: MathVocab
) -> dict[str, str] | None:
    values = {name: _draw(rng, spec) for name, spec in template.slots.items()}
    values["name"] = rng.choice(_NAMES)
    values["thing"] = rng.choice(_THINGS)
    problem = template.text.format(**values)
    equation = template.equation.format(**values)
    try:
        tree = parse_math(equation)
        normalize_tree(tree, vocab)
        if template.closed:
            evaluate_expression(tree)
    except (OptLmError, EvaluationError):
        return None
    return {"problem": problem, "equation": equation}


def generate_examples(
    n: int, seed: int, templates=DEFAULT_TEMPLATES, vocab: MathVocab | None = None
) -> list[dict[str, str]]:
    """Deterministically generate ``n`` validated problem/equation records."""
    if n <= 0:
        raise ValueError("need a positive number of examples")
    rng = random.Random(seed)
    vocab = vocab or MathVocab.default()
    out = []
    while len(out) < n:
        template = templates[rng.randrange(len(templates))]
        record = _instantiate(rng, template, vocab)
        if record is not None:
            out.append(record)
    return out


def split_examples(examples: list[dict]) -> dict[str, list[dict]]:
    """80/10/10 train/validation/test split by position."""
    n = len(examples)
    n_test = max(1, n // 10) if n >= 3 else 0
    n_val = n_test
    n_train = n - n_val - n_test
    return {
        "train": examples[:n_train],
        "val": examples[n_train:n_train + n_val],
        "test": examples[n_train + n_val:],
    }


def cross_validation_folds(
    examples: list[dict], k: int = 5
) -> list[dict[str, list[dict]]]:
    """Rotate ``k`` folds; each uses one slice as test, a tenth of the rest
    as validation, and the remainder for training."""
    n = len(examples)
    folds = []
    for i in range(k):
        lo, hi = i * n // k, (i + 1) * n // k
        test = examples[lo:hi]
        rest = examples[:lo] + examples[hi:]
        n_val = max(1, len(rest) // 10)
        folds.append({"train": rest[n_val:], "val": rest[:n_val], "test": test})
    return folds


def to_document(record: dict[str, str]) -> str:
    """The ingestible document form of a record."""
    return f"{record['problem']} ${record['equation']}$"


def write_jsonl(path: str | Path, records: list[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_corpus(out_dir: str | Path, n: int, seed: int) -> dict[str, Path]:
    """Generate, split, and write train/val/test JSONL files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = split_examples(generate_examples(n, seed))
    paths = {}
    for name, records in splits.items():
        path = out / f"{name}.jsonl"
        write_jsonl(path, records)
        paths[name] = path
    return paths
