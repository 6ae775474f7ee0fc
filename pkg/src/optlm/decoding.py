"""Constrained generation over mixed text/math sequences.

A small stack automaton tracks the shape of the formula being generated and
exposes, at every step, the exact set of ids that keep the sequence valid:

  * text tokens may be followed by text tokens or a formula start;
  * a formula start must be followed by an operator, variable, or number;
  * a formula end must be followed by text;
  * inside a tree, operator/variable/number/end tokens follow each other,
    except that a completed tree takes the formula end marker only;
  * parents are barred at the depth cap, and only the end marker may fill a
    node's last child slot at the width cap;
  * a number head takes digit children, an OOV head takes text-token
    children, each closed by the end marker.

Tree positions of generated nodes are inferred from the previous node alone:
after a parent comes its first child, after a leaf its next sibling, and
after an end marker the closed parent's next sibling.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch

from .embedding import BIN_LENGTH, bin_encode_batch
from .errors import IllegalToken, LengthExceeded
from .tokens import (
    KIND_TO_TYPE,
    MAX_CHILD_COUNT,
    MAX_TREE_DEPTH,
    MathToken,
    MixedItem,
    MixedSequence,
    PARENT_KINDS,
    TokenKind,
    TreePos,
    TypeTag,
)
from .vocab import EncodedSequence, IdLayout


class Mode(Enum):
    TEXT = "text"
    MATH = "math"
    COMPLETE = "complete"   # tree fully generated, awaiting the end marker


@dataclass(frozen=True)
class DecoderState:
    """Value object describing the automaton after some prefix.

    ``frames`` holds (parent kind, children so far) for each open node;
    ``next_pos`` is the tree position the next math token would occupy.
    """

    mode: Mode = Mode.TEXT
    frames: tuple[tuple[TokenKind, int], ...] = ()
    next_pos: TreePos | None = None
    after_formula: bool = False

    @property
    def depth(self) -> int:
        return len(self.frames)

    def top(self) -> tuple[TokenKind, int] | None:
        return self.frames[-1] if self.frames else None


class DecoderRules:
    """Precomputed legal-next-token masks over the unified id space.

    Masks returned by :meth:`allowed` are cached and shared; treat them as
    read-only. The depth and width caps are configurable so that callers can
    bound worst-case tree sizes; they default to the global caps.
    """

    def __init__(
        self,
        layout: IdLayout,
        number_subtrees: bool = True,
        max_depth: int = MAX_TREE_DEPTH,
        max_width: int = MAX_CHILD_COUNT,
    ):
        self.layout = layout
        self.number_subtrees = number_subtrees
        self.max_depth = max_depth
        self.max_width = max_width
        self.vocab_size = layout.total

        groups = layout.id_groups()
        self.fs_id = groups["start_formula"][0]
        self.fe_id = groups["end_formula"][0]
        self.end_id = groups["end"][0]
        self.num_head_id = groups["num_head"][0]
        self.oov_head_id = groups["oov_head"][0]

        self._text = self._mask(groups["text"])
        self._digits = self._mask(groups["digit"])
        self._leaves = self._mask(
            groups["variable"] + groups["digit"] + groups["number"]
        )
        parents = list(groups["operator"]) + [self.oov_head_id]
        if number_subtrees:
            parents.append(self.num_head_id)
        self._parents = self._mask(parents)
        self._end = self._mask([self.end_id])
        self._fs = self._mask([self.fs_id])
        self._fe = self._mask([self.fe_id])
        self._cache: dict[tuple, torch.Tensor] = {}

    def _mask(self, ids) -> torch.Tensor:
        mask = torch.zeros(self.vocab_size, dtype=torch.bool)
        if ids:
            mask[torch.tensor(sorted(ids), dtype=torch.long)] = True
        return mask

    def _cached(self, key: tuple, *parts: torch.Tensor) -> torch.Tensor:
        mask = self._cache.get(key)
        if mask is None:
            mask = parts[0].clone()
            for part in parts[1:]:
                mask |= part
            self._cache[key] = mask
        return mask

    def allowed(self, state: DecoderState) -> torch.Tensor:
        """Boolean mask of ids legal after the prefix described by ``state``."""
        if state.mode == Mode.TEXT:
            if state.after_formula:
                return self._cached(("text-only",), self._text)
            return self._cached(("text",), self._text, self._fs)
        if state.mode == Mode.COMPLETE:
            return self._cached(("fe",), self._fe)

        top = state.top()
        if top is not None and top[1] >= self.max_width - 1:
            return self._cached(("end-only",), self._end)
        if top is not None and top[0] == TokenKind.NUM_HEAD:
            if top[1] == 0:
                return self._cached(("digits",), self._digits)
            return self._cached(("digits-end",), self._digits, self._end)
        if top is not None and top[0] == TokenKind.OOV_HEAD:
            if top[1] == 0:
                return self._cached(("oov",), self._text)
            return self._cached(("oov-end",), self._text, self._end)
        deep = len(state.next_pos) >= self.max_depth
        key = ("tree", deep, top is not None)
        if top is None:
            return (
                self._cached(key, self._leaves)
                if deep
                else self._cached(key, self._leaves, self._parents)
            )
        if deep:
            return self._cached(key, self._leaves, self._end)
        return self._cached(key, self._leaves, self._parents, self._end)

    def token_kind(self, token_id: int) -> TokenKind | None:
        """Kind of a math id; None for text ids."""
        if self.layout.is_text_id(token_id):
            return None
        return self.layout.math_token_at(token_id).kind


def infer_next_position(
    state: DecoderState, kind: TokenKind | None
) -> TreePos | None:
    """Tree position of the token after one of ``kind`` at ``state.next_pos``.

    Parents descend to their first child, leaves advance to their next
    sibling, and the end marker resumes at the closed parent's next sibling.
    None means the tree is complete.
    """
    pos = state.next_pos
    if pos is None:
        raise IllegalToken("no tree is open")
    if kind in PARENT_KINDS:
        return pos + (0,)
    if kind == TokenKind.END:
        parent = pos[:-1]
        if not parent:
            return None
        return parent[:-1] + (parent[-1] + 1,)
    # leaf: math leaves and text tokens inside an OOV sub-tree
    if not pos:
        return None
    return pos[:-1] + (pos[-1] + 1,)


def step(rules: DecoderRules, state: DecoderState, token_id: int) -> DecoderState:
    """Advance the automaton by one token. Raises IllegalToken if masked."""
    if not bool(rules.allowed(state)[token_id]):
        raise IllegalToken(f"token {token_id} not allowed in {state.mode.value} mode")
    if state.mode == Mode.TEXT:
        if token_id == rules.fs_id:
            return DecoderState(Mode.MATH, (), ())
        return DecoderState(Mode.TEXT)
    if state.mode == Mode.COMPLETE:
        return DecoderState(Mode.TEXT, after_formula=True)

    kind = rules.token_kind(token_id)
    pos = state.next_pos
    frames = list(state.frames)
    if kind == TokenKind.END:
        frames.pop()
        if not frames:
            return DecoderState(Mode.COMPLETE, (), None)
        return DecoderState(
            Mode.MATH, tuple(frames), pos[:-2] + (pos[-2] + 1,)
        )
    if kind in PARENT_KINDS:
        if frames:
            frames[-1] = (frames[-1][0], frames[-1][1] + 1)
        frames.append((kind, 0))
        return DecoderState(Mode.MATH, tuple(frames), pos + (0,))
    # leaf (math leaf kinds and text pieces inside an OOV sub-tree)
    if not frames:
        return DecoderState(Mode.COMPLETE, (), None)
    frames[-1] = (frames[-1][0], frames[-1][1] + 1)
    return DecoderState(Mode.MATH, tuple(frames), pos[:-1] + (pos[-1] + 1,))


def token_item(
    rules: DecoderRules, state: DecoderState, token_id: int
) -> MixedItem:
    """Materialize the sequence item a token id produces in ``state``."""
    layout = rules.layout
    if layout.is_text_id(token_id):
        piece = layout.text.piece_at(token_id) or ""
        if state.mode == Mode.MATH:
            return MixedItem(
                MathToken(TokenKind.MATH_TEXT, piece), TypeTag.TEXT, state.next_pos
            )
        return MixedItem(piece, TypeTag.TEXT)
    token = layout.math_token_at(token_id)
    pos = state.next_pos if state.mode == Mode.MATH else None
    return MixedItem(token, KIND_TO_TYPE[token.kind], pos)


def replay(rules: DecoderRules, ids) -> DecoderState:
    """Run the automaton over existing ids, validating every transition."""
    state = DecoderState()
    for token_id in ids:
        state = step(rules, state, int(token_id))
    return state


def sequence_masks(rules: DecoderRules, ids) -> torch.Tensor:
    """[L, V] masks; row i is the allowed set after consuming ids[: i + 1]."""
    out = torch.zeros(len(ids), rules.vocab_size, dtype=torch.bool)
    state = DecoderState()
    for i, token_id in enumerate(ids):
        state = step(rules, state, int(token_id))
        out[i] = rules.allowed(state)
    return out


@dataclass
class GenerationResult:
    sequence: MixedSequence
    ids: list[int]
    prompt_len: int
    complete: bool              # ended outside an open formula
    stop_reason: str            # "length" or "formula_end"

    @property
    def new_ids(self) -> list[int]:
        return self.ids[self.prompt_len:]


class _Beam:
    __slots__ = ("ids", "types", "positions", "items", "state", "score", "stopped")

    def __init__(self, encoded: EncodedSequence, items, state: DecoderState):
        self.ids = list(encoded.ids)
        self.types = list(encoded.type_tags)
        self.positions = list(encoded.positions)
        self.items = list(items)
        self.state = state
        self.score = 0.0
        self.stopped = False

    def clone(self) -> "_Beam":
        twin = object.__new__(_Beam)
        twin.ids = list(self.ids)
        twin.types = list(self.types)
        twin.positions = list(self.positions)
        twin.items = list(self.items)
        twin.state = self.state
        twin.score = self.score
        twin.stopped = self.stopped
        return twin

    def push(self, rules: DecoderRules, token_id: int):
        item = token_item(rules, self.state, token_id)
        self.ids.append(token_id)
        self.types.append(int(item.type_tag))
        self.positions.append(item.position)
        self.items.append(item)
        self.state = step(rules, self.state, token_id)


def _batch_logits(model, beams: list["_Beam"]) -> torch.Tensor:
    """Last-position logits for equal-length beams, batched."""
    device = next(model.parameters()).device
    ids = torch.tensor([b.ids for b in beams], dtype=torch.long, device=device)
    types = torch.tensor([b.types for b in beams], dtype=torch.long, device=device)
    bins = torch.stack(
        [bin_encode_batch(b.positions, device=device) for b in beams]
    )
    with torch.no_grad():
        logits = model.forward_ids(ids, types, bins)
    return logits[:, -1, :]


def _masked_log_probs(rules: DecoderRules, beams, logits) -> torch.Tensor:
    mask = torch.stack([rules.allowed(b.state) for b in beams])
    return torch.log_softmax(
        logits.masked_fill(~mask.to(logits.device), float("-inf")), dim=-1
    )


def _prompt_beam(
    rules: DecoderRules, prompt: EncodedSequence, max_len: int
) -> _Beam:
    if len(prompt.ids) >= max_len:
        raise LengthExceeded(
            f"prompt length {len(prompt.ids)} leaves no room under {max_len}"
        )
    state = DecoderState()
    items = []
    for token_id in prompt.ids:
        items.append(token_item(rules, state, int(token_id)))
        state = step(rules, state, int(token_id))
    return _Beam(prompt, items, state)


def _result(beam: _Beam, prompt_len: int, reason: str) -> GenerationResult:
    return GenerationResult(
        sequence=MixedSequence(beam.items),
        ids=beam.ids,
        prompt_len=prompt_len,
        complete=beam.state.mode == Mode.TEXT,
        stop_reason=reason,
    )


def generate(
    model,
    rules: DecoderRules,
    prompt: EncodedSequence,
    mode: str = "greedy",
    beam_width: int = 3,
    max_len: int = 256,
    seed: int = 0,
    top_k: int = 20,
    stop_at_formula_end: bool = False,
) -> GenerationResult:
    """Generate a continuation of ``prompt`` under the decoding constraints.

    ``mode`` is "greedy", "beam", or "sample" (top-k). With
    ``stop_at_formula_end`` generation halts right after the first complete
    formula, which is the shape of equation-style prompts.
    """
    if mode == "beam":
        return _beam_search(model, rules, prompt, beam_width, max_len,
                            stop_at_formula_end)
    results = generate_batch(
        model, rules, [prompt], mode=mode, max_len=max_len, seed=seed,
        top_k=top_k, stop_at_formula_end=stop_at_formula_end,
    )
    return results[0]


def generate_batch(
    model,
    rules: DecoderRules,
    prompts: list[EncodedSequence],
    mode: str = "greedy",
    max_len: int = 256,
    seed: int = 0,
    top_k: int = 20,
    stop_at_formula_end: bool = False,
) -> list[GenerationResult]:
    """Decode many prompts side by side with independent automaton states.

    Prompts are left-aligned in one batch; rows that stop early are padded
    and frozen. Results are deterministic for a given seed and prompt list.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unsupported batch mode {mode!r}")
    beams = [_prompt_beam(rules, p, max_len) for p in prompts]
    prompt_lens = [len(p.ids) for p in prompts]
    reasons = ["length"] * len(beams)
    generator = torch.Generator().manual_seed(seed)

    width = max(len(b.ids) for b in beams)
    live = list(range(len(beams)))
    # pad shorter prompts on the right; padded tails are causally inert
    padded = [_PaddedRow(b, width) for b in beams]
    while live:
        logits = _batch_logits_padded(model, padded, width)
        rows = [padded[i] for i in live]
        mask = torch.stack([rules.allowed(r.beam.state) for r in rows])
        row_logits = torch.stack(
            [logits[i, padded[i].length - 1] for i in live]
        )
        log_probs = torch.log_softmax(
            row_logits.masked_fill(~mask, float("-inf")), dim=-1
        )
        if mode == "greedy":
            choices = log_probs.argmax(dim=-1)
        else:
            k = min(top_k, log_probs.shape[-1])
            top_vals, top_ids = torch.topk(log_probs, k, dim=-1)
            pick = torch.multinomial(
                torch.softmax(top_vals, dim=-1), 1, generator=generator
            ).squeeze(-1)
            choices = top_ids[torch.arange(len(live)), pick]

        width += 1
        still = []
        for j, i in enumerate(live):
            token_id = int(choices[j])
            padded[i].append(token_id, rules)
            beam = padded[i].beam
            if stop_at_formula_end and token_id == rules.fe_id:
                reasons[i] = "formula_end"
            elif len(beam.ids) < max_len:
                still.append(i)
        for row in padded:
            row.pad_to(width)
        live = still
    return [
        _result(b, prompt_lens[i], reasons[i]) for i, b in enumerate(beams)
    ]


class _PaddedRow:
    """A beam plus right padding so rows share one batch width."""

    __slots__ = ("beam", "pad")

    def __init__(self, beam: _Beam, width: int):
        self.beam = beam
        self.pad = width - len(beam.ids)

    @property
    def length(self) -> int:
        return len(self.beam.ids)

    def append(self, token_id: int, rules: DecoderRules):
        self.beam.push(rules, token_id)
        self.pad -= 1

    def pad_to(self, width: int):
        self.pad = width - len(self.beam.ids)


def _batch_logits_padded(model, rows: list[_PaddedRow], width: int) -> torch.Tensor:
    device = next(model.parameters()).device
    ids = torch.zeros(len(rows), width, dtype=torch.long, device=device)
    types = torch.zeros(len(rows), width, dtype=torch.long, device=device)
    bins = torch.zeros(len(rows), width, BIN_LENGTH, device=device)
    for i, row in enumerate(rows):
        n = row.length
        ids[i, :n] = torch.tensor(row.beam.ids, dtype=torch.long)
        types[i, :n] = torch.tensor(row.beam.types, dtype=torch.long)
        bins[i, :n] = bin_encode_batch(row.beam.positions, device=device)
    with torch.no_grad():
        return model.forward_ids(ids, types, bins)


def _beam_search(
    model,
    rules: DecoderRules,
    prompt: EncodedSequence,
    beam_width: int,
    max_len: int,
    stop_at_formula_end: bool,
) -> GenerationResult:
    prompt_len = len(prompt.ids)
    beams = [_prompt_beam(rules, prompt, max_len)]
    finished: list[_Beam] = []
    while beams and len(beams[0].ids) < max_len:
        log_probs = _masked_log_probs(rules, beams, _batch_logits(model, beams))
        candidates = []
        k = min(beam_width, log_probs.shape[-1])
        top_vals, top_ids = torch.topk(log_probs, k, dim=-1)
        for b_idx, beam in enumerate(beams):
            for v, t in zip(top_vals[b_idx].tolist(), top_ids[b_idx].tolist()):
                if v == float("-inf"):
                    continue
                candidates.append((beam.score + v, b_idx, t))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_beams = []
        for score, b_idx, token_id in candidates[:beam_width]:
            child = beams[b_idx].clone()
            child.push(rules, token_id)
            child.score = score
            if stop_at_formula_end and token_id == rules.fe_id:
                child.stopped = True
                finished.append(child)
            else:
                next_beams.append(child)
        beams = next_beams
        if stop_at_formula_end and len(finished) >= beam_width:
            break
    if finished:
        best = max(finished, key=lambda b: b.score)
        return _result(best, prompt_len, "formula_end")
    best = max(beams, key=lambda b: b.score)
    return _result(best, prompt_len, "length")
