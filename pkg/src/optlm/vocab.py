"""Text tokenizer, math vocabulary, and the unified token-id space.

Text uses a frequency-ranked word-level tokenizer with character fallback,
so every string over the known character inventory round-trips exactly and
every math symbol has a text-token decomposition. Math tokens occupy a
contiguous id block placed directly after the text ids; the two prediction
heads concatenate along this layout.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import SequenceTooLong
from .parser import (
    default_operator_symbols,
    default_variable_symbols,
    is_numeral,
)
from .tokens import (
    DIGIT_CHARS,
    MathToken,
    MixedItem,
    MixedSequence,
    TokenKind,
    TreePos,
    TypeTag,
)

PAD_ID = 0

# Partition of a string into word runs, whitespace runs, and single symbols.
_PIECE_RE = re.compile(r"[A-Za-z0-9]+|\s+|.", re.DOTALL)

_BASE_CHARS = tuple(string.printable)


class TextVocab:
    """Lossless word-level tokenizer with character fallback.

    Id 0 is reserved for padding and never produced by tokenization.
    """

    def __init__(self, words: list[str] | None = None, chars: list[str] | None = None):
        self.chars = list(dict.fromkeys(list(chars or _BASE_CHARS)))
        self.words = list(dict.fromkeys(w for w in (words or []) if len(w) > 1))
        self._id_to_piece = [None] + self.chars + self.words
        self._piece_to_id = {
            p: i for i, p in enumerate(self._id_to_piece) if p is not None
        }

    @classmethod
    def build(cls, texts, max_words: int = 512) -> "TextVocab":
        """Rank word pieces by frequency over ``texts``; characters always
        fall back to the printable-ASCII inventory plus any seen characters."""
        counts: Counter[str] = Counter()
        chars = list(_BASE_CHARS)
        seen_chars = set(chars)
        for text in texts:
            for piece in _PIECE_RE.findall(text):
                if len(piece) > 1 and piece[0].isalnum():
                    counts[piece] += 1
                for ch in piece:
                    if ch not in seen_chars:
                        seen_chars.add(ch)
                        chars.append(ch)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(words=[w for w, _ in ranked[:max_words]], chars=chars)

    @property
    def size(self) -> int:
        return len(self._id_to_piece)

    def tokenize(self, text: str) -> list[str]:
        """Split into pieces whose concatenation equals ``text``."""
        out: list[str] = []
        for piece in _PIECE_RE.findall(text):
            if piece in self._piece_to_id:
                out.append(piece)
            else:
                for ch in piece:
                    if ch not in self._piece_to_id:
                        raise ValueError(f"character {ch!r} outside inventory")
                    out.append(ch)
        return out

    def detokenize(self, pieces) -> str:
        return "".join(pieces)

    def encode(self, text: str) -> list[int]:
        return [self._piece_to_id[p] for p in self.tokenize(text)]

    def decode(self, ids) -> str:
        return "".join(self._id_to_piece[i] or "" for i in ids)

    def piece_id(self, piece: str) -> int:
        return self._piece_to_id[piece]

    def piece_at(self, idx: int) -> str | None:
        return self._id_to_piece[idx]

    def to_json(self):
        return {"chars": self.chars, "words": self.words}

    @classmethod
    def from_json(cls, obj) -> "TextVocab":
        return cls(words=list(obj["words"]), chars=list(obj["chars"]))


class SymbolClass(Enum):
    OPERATOR = "operator"
    VARIABLE = "variable"
    NUMBER = "number"
    OOV = "oov"


# Local order of the special tokens at the end of the math id block.
_SPECIAL_KINDS = (
    TokenKind.START_FORMULA,
    TokenKind.END_FORMULA,
    TokenKind.END,
    TokenKind.NUM_HEAD,
    TokenKind.OOV_HEAD,
)


@dataclass(frozen=True)
class MathVocab:
    """Fixed-size math vocabulary; ids are local indices until laid out."""

    operators: tuple[str, ...]
    variables: tuple[str, ...]
    numbers: tuple[str, ...] = ()   # only populated when number sub-trees are off

    def __post_init__(self):
        groups = [set(self.operators), set(self.variables), set(self.numbers),
                  set(DIGIT_CHARS)]
        total = sum(len(g) for g in groups)
        if len(set().union(*groups)) != total:
            raise ValueError("operator/variable/number/digit sets must be disjoint")

    @classmethod
    def default(cls, numbers=()) -> "MathVocab":
        return cls(
            operators=tuple(default_operator_symbols()),
            variables=tuple(default_variable_symbols()),
            numbers=tuple(numbers),
        )

    @property
    def size(self) -> int:
        return (len(self.operators) + len(self.variables) + len(DIGIT_CHARS)
                + len(self.numbers) + len(_SPECIAL_KINDS))

    def has_number_token(self, symbol: str) -> bool:
        return symbol in self.numbers

    def local_index(self, token: MathToken) -> int:
        kind = token.kind
        if kind == TokenKind.OPERATOR:
            return self.operators.index(token.symbol)
        base = len(self.operators)
        if kind == TokenKind.VARIABLE:
            return base + self.variables.index(token.symbol)
        base += len(self.variables)
        if kind == TokenKind.DIGIT:
            return base + DIGIT_CHARS.index(token.symbol)
        base += len(DIGIT_CHARS)
        if kind == TokenKind.NUMBER:
            return base + self.numbers.index(token.symbol)
        base += len(self.numbers)
        if kind in _SPECIAL_KINDS:
            return base + _SPECIAL_KINDS.index(kind)
        raise KeyError(f"{token!r} has no math id")

    def token_at(self, idx: int) -> MathToken:
        for symbols, kind in (
            (self.operators, TokenKind.OPERATOR),
            (self.variables, TokenKind.VARIABLE),
            (tuple(DIGIT_CHARS), TokenKind.DIGIT),
            (self.numbers, TokenKind.NUMBER),
        ):
            if idx < len(symbols):
                return MathToken(kind, symbols[idx])
            idx -= len(symbols)
        if idx < len(_SPECIAL_KINDS):
            return MathToken(_SPECIAL_KINDS[idx])
        raise IndexError("math id out of range")

    def to_json(self):
        return {
            "operators": list(self.operators),
            "variables": list(self.variables),
            "numbers": list(self.numbers),
        }

    @classmethod
    def from_json(cls, obj) -> "MathVocab":
        return cls(
            operators=tuple(obj["operators"]),
            variables=tuple(obj["variables"]),
            numbers=tuple(obj.get("numbers", ())),
        )


def classify_symbol(symbol: str, vocab: MathVocab) -> SymbolClass:
    """Deterministic classification of a bare symbol string."""
    if symbol in vocab.operators:
        return SymbolClass.OPERATOR
    if symbol in vocab.variables:
        return SymbolClass.VARIABLE
    if is_numeral(symbol) or symbol in vocab.numbers:
        return SymbolClass.NUMBER
    return SymbolClass.OOV


class IdLayout:
    """Unified id space: text ids in [0, T), math ids in [T, T + M)."""

    def __init__(self, text: TextVocab, math: MathVocab):
        self.text = text
        self.math = math
        self.text_size = text.size
        self.math_size = math.size
        self.total = self.text_size + self.math_size
        self.math_offset = self.text_size
        self.pad_id = PAD_ID

    def math_id(self, token: MathToken) -> int:
        return self.math_offset + self.math.local_index(token)

    def special_id(self, kind: TokenKind) -> int:
        return self.math_id(MathToken(kind))

    def item_id(self, item: MixedItem) -> int:
        token = item.token
        if isinstance(token, str):
            return self.text.piece_id(token)
        if token.kind == TokenKind.MATH_TEXT:
            return self.text.piece_id(token.symbol)
        return self.math_id(token)

    def is_text_id(self, idx: int) -> bool:
        return 0 <= idx < self.text_size

    def math_token_at(self, idx: int) -> MathToken:
        return self.math.token_at(idx - self.math_offset)

    def id_groups(self) -> dict[str, list[int]]:
        """Id lists by role, used to assemble decoding masks."""
        off = self.math_offset
        n_ops = len(self.math.operators)
        n_vars = len(self.math.variables)
        n_digits = len(DIGIT_CHARS)
        n_nums = len(self.math.numbers)
        base = off
        ops = list(range(base, base + n_ops))
        base += n_ops
        variables = list(range(base, base + n_vars))
        base += n_vars
        digits = list(range(base, base + n_digits))
        base += n_digits
        numbers = list(range(base, base + n_nums))
        return {
            "text": list(range(1, self.text_size)),   # pad excluded
            "operator": ops,
            "variable": variables,
            "digit": digits,
            "number": numbers,
            "start_formula": [self.special_id(TokenKind.START_FORMULA)],
            "end_formula": [self.special_id(TokenKind.END_FORMULA)],
            "end": [self.special_id(TokenKind.END)],
            "num_head": [self.special_id(TokenKind.NUM_HEAD)],
            "oov_head": [self.special_id(TokenKind.OOV_HEAD)],
        }


def id_layout(text: TextVocab, math: MathVocab) -> IdLayout:
    return IdLayout(text, math)


MAX_SEQ_LEN = 1024


@dataclass
class EncodedSequence:
    """Id-level view of a mixed sequence, ready for batching."""

    ids: list[int]
    type_tags: list[int]
    positions: list[TreePos | None]
    source: str = ""

    def __len__(self):
        return len(self.ids)


def encode_mixed(
    seq: MixedSequence, layout: IdLayout, max_len: int = MAX_SEQ_LEN,
    source: str = "",
) -> EncodedSequence:
    """Expand text chunks into text tokens and map every item to its id."""
    ids: list[int] = []
    types: list[int] = []
    positions: list[TreePos | None] = []
    for item in seq:
        if isinstance(item.token, str):
            for piece in layout.text.tokenize(item.token):
                ids.append(layout.text.piece_id(piece))
                types.append(int(TypeTag.TEXT))
                positions.append(None)
        else:
            ids.append(layout.item_id(item))
            types.append(int(item.type_tag))
            positions.append(item.position)
    if len(ids) > max_len:
        raise SequenceTooLong(f"{len(ids)} tokens exceed limit {max_len}")
    return EncodedSequence(ids, types, positions, source)


def save_vocab(path: str | Path, math: MathVocab, text: TextVocab | None = None):
    obj = math.to_json()
    if text is not None:
        obj["text_tokens"] = text.to_json()
    Path(path).write_text(json.dumps(obj, indent=1), encoding="utf-8")


def load_vocab(path: str | Path) -> tuple[MathVocab, TextVocab | None]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    math = MathVocab.from_json(obj)
    text = TextVocab.from_json(obj["text_tokens"]) if "text_tokens" in obj else None
    return math, text
