"""Dataset ingestion: documents to encoded sequences and training batches.

A dataset bundle holds the vocabularies, the normalization flags, and the
encoded train/val/test splits. Batches carry, for every position, the legal
next-token mask produced by replaying the decoding automaton, so the loss
can restrict its softmax to valid continuations.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .corpus import to_document
from .decoding import DecoderRules, sequence_masks
from .embedding import BIN_LENGTH, bin_encode_batch
from .model import IGNORE_INDEX
from .parser import parse_math
from .tokens import TokenKind
from .trees import segment_regions
from .vocab import (
    EncodedSequence,
    IdLayout,
    MathVocab,
    TextVocab,
    encode_mixed,
    id_layout,
)


@dataclass
class DatasetBundle:
    math_vocab: MathVocab
    text_vocab: TextVocab
    number_subtrees: bool
    splits: dict[str, list[EncodedSequence]]

    @property
    def layout(self) -> IdLayout:
        return id_layout(self.text_vocab, self.math_vocab)

    def rules(self, **kwargs) -> DecoderRules:
        return DecoderRules(
            self.layout, number_subtrees=self.number_subtrees, **kwargs
        )


def _numbers_from_equations(records, limit: int = 200) -> tuple[str, ...]:
    """Most frequent multi-character numerals, for single-token number mode."""
    from collections import Counter

    counts: Counter[str] = Counter()
    for record in records:
        try:
            tree = parse_math(record["equation"])
        except Exception:
            continue
        for node in tree.preorder():
            if node.kind == TokenKind.NUMBER and len(node.symbol) > 1:
                counts[node.symbol] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple(sym for sym, _ in ranked[:limit])


def encode_document(
    doc: str, layout: IdLayout, number_subtrees: bool = True, source: str = ""
) -> EncodedSequence:
    seq = segment_regions(
        doc,
        layout.math,
        oov_tokenize=layout.text.tokenize,
        number_subtrees=number_subtrees,
    )
    return encode_mixed(seq, layout, source=source)


def build_dataset(
    records_by_split: dict[str, list[dict]],
    max_words: int = 512,
    number_subtrees: bool = True,
    math_vocab: MathVocab | None = None,
    text_vocab: TextVocab | None = None,
) -> DatasetBundle:
    """Build vocabularies from the train split and encode every split."""
    train_records = records_by_split.get("train", [])
    if text_vocab is None:
        text_vocab = TextVocab.build(
            [r["problem"] for r in train_records], max_words=max_words
        )
    if math_vocab is None:
        numbers = () if number_subtrees else _numbers_from_equations(train_records)
        math_vocab = MathVocab.default(numbers=numbers)
    layout = id_layout(text_vocab, math_vocab)
    splits = {
        name: [
            encode_document(
                to_document(r), layout, number_subtrees, source=r["equation"]
            )
            for r in records
        ]
        for name, records in records_by_split.items()
    }
    return DatasetBundle(math_vocab, text_vocab, number_subtrees, splits)


def save_dataset(path: str | Path, bundle: DatasetBundle):
    torch.save(
        {
            "version": 1,
            "math_vocab": bundle.math_vocab.to_json(),
            "text_vocab": bundle.text_vocab.to_json(),
            "number_subtrees": bundle.number_subtrees,
            "splits": {
                name: [
                    {
                        "ids": seq.ids,
                        "type_tags": seq.type_tags,
                        "positions": seq.positions,
                        "source": seq.source,
                    }
                    for seq in seqs
                ]
                for name, seqs in bundle.splits.items()
            },
        },
        str(path),
    )


def load_dataset(path: str | Path) -> DatasetBundle:
    payload = torch.load(str(path), map_location="cpu", weights_only=False)
    splits = {
        name: [
            EncodedSequence(
                ids=row["ids"],
                type_tags=row["type_tags"],
                positions=[tuple(p) if p is not None else None
                           for p in row["positions"]],
                source=row.get("source", ""),
            )
            for row in rows
        ]
        for name, rows in payload["splits"].items()
    }
    return DatasetBundle(
        math_vocab=MathVocab.from_json(payload["math_vocab"]),
        text_vocab=TextVocab.from_json(payload["text_vocab"]),
        number_subtrees=payload["number_subtrees"],
        splits=splits,
    )


def collate_batch(
    sequences: list[EncodedSequence],
    rules: DecoderRules,
    dtype=torch.float32,
) -> dict[str, torch.Tensor]:
    """Right-pad a batch and attach shifted targets plus allowed masks.

    Position i targets token i+1; the final real position and all padding
    carry IGNORE_INDEX. Mask rows for padded positions are fully open so the
    loss never sees an empty softmax support.
    """
    batch = len(sequences)
    width = max(len(s) for s in sequences)
    ids = torch.zeros(batch, width, dtype=torch.long)
    types = torch.zeros(batch, width, dtype=torch.long)
    bins = torch.zeros(batch, width, BIN_LENGTH, dtype=dtype)
    targets = torch.full((batch, width), IGNORE_INDEX, dtype=torch.long)
    allowed = torch.ones(batch, width, rules.vocab_size, dtype=torch.bool)
    for i, seq in enumerate(sequences):
        n = len(seq)
        ids[i, :n] = torch.tensor(seq.ids, dtype=torch.long)
        types[i, :n] = torch.tensor(seq.type_tags, dtype=torch.long)
        bins[i, :n] = bin_encode_batch(seq.positions, dtype=dtype)
        if n > 1:
            targets[i, : n - 1] = torch.tensor(seq.ids[1:], dtype=torch.long)
        allowed[i, : n] = sequence_masks(rules, seq.ids)
    return {
        "ids": ids,
        "type_tags": types,
        "bins": bins,
        "targets": targets,
        "allowed": allowed,
    }


def iter_batches(
    sequences: list[EncodedSequence],
    rules: DecoderRules,
    batch_size: int,
    seed: int = 0,
    shuffle: bool = True,
):
    """Deterministic batch iterator; shuffling depends only on the seed."""
    order = list(range(len(sequences)))
    if shuffle:
        import random

        random.Random(seed).shuffle(order)
    for start in range(0, len(order), batch_size):
        chunk = [sequences[i] for i in order[start:start + batch_size]]
        yield collate_batch(chunk, rules)
