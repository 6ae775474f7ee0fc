"""Binary tree-position encoding and the four-term input embedding."""

import random

import pytest
import torch

from optlm.embedding import (
    BIN_LENGTH,
    BITS_PER_ENTRY,
    TokenEmbedder,
    bin_encode,
    bin_encode_batch,
)
from optlm.errors import SequenceTooLong, ShapeMismatch
from optlm.model import MathLM, ModelConfig
from optlm.tokens import MAX_CHILD_COUNT, MAX_TREE_DEPTH, TokenKind, op, var
from optlm.vocab import MathVocab, TextVocab, id_layout


def reference_active_indices(path) -> list[int]:
    """Independent expansion: string binary formatting, most significant
    digit first, one-hot pair per digit."""
    out = []
    for j, entry in enumerate(path):
        bits = format(entry, f"0{BITS_PER_ENTRY}b")
        for k, ch in enumerate(bits):
            out.append(j * 2 * BITS_PER_ENTRY + 2 * k + (1 if ch == "1" else 0))
    return out


def test_entry_five_pattern():
    vec = bin_encode((5,))
    first_block = vec[: 2 * BITS_PER_ENTRY].tolist()
    # bits 000101 -> pairs (1,0)(1,0)(1,0)(0,1)(1,0)(0,1)
    assert first_block == [1, 0, 1, 0, 1, 0, 0, 1, 1, 0, 0, 1]
    assert vec[2 * BITS_PER_ENTRY:].sum() == 0


def test_empty_path_is_all_zero():
    assert bin_encode(()).sum() == 0


def test_path_one_three_hand_expansion():
    vec = bin_encode((1, 3))
    active = sorted(torch.nonzero(vec).flatten().tolist())
    assert active == sorted(reference_active_indices((1, 3)))
    assert active == [0, 2, 4, 6, 8, 11, 12, 14, 16, 18, 21, 23]
    assert vec[24:].sum() == 0
    # one active bit per used pair
    assert vec.sum() == 2 * BITS_PER_ENTRY


def test_bin_encode_matches_reference_on_random_paths():
    rng = random.Random(3)
    for _ in range(300):
        depth = rng.randrange(0, MAX_TREE_DEPTH + 1)
        path = tuple(rng.randrange(MAX_CHILD_COUNT) for _ in range(depth))
        vec = bin_encode(path)
        active = sorted(torch.nonzero(vec).flatten().tolist())
        assert active == sorted(reference_active_indices(path))


def test_bin_encode_rejects_over_caps():
    with pytest.raises(SequenceTooLong):
        bin_encode(tuple(0 for _ in range(MAX_TREE_DEPTH + 1)))
    with pytest.raises(ValueError):
        bin_encode((MAX_CHILD_COUNT,))


def _vectorized_bins(entries: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Batch bit expansion used for the exhaustive scan (independent of
    bin_encode's per-bit loop)."""
    n, depth = entries.shape
    bins = torch.zeros(n, BIN_LENGTH)
    rows = torch.arange(n)
    for j in range(depth):
        valid = lengths > j
        e = entries[valid, j]
        r = rows[valid]
        for k in range(BITS_PER_ENTRY):
            bit = (e >> (BITS_PER_ENTRY - 1 - k)) & 1
            bins[r, j * 2 * BITS_PER_ENTRY + 2 * k + bit] = 1.0
    return bins


def test_embedding_collision_scan_depth_three():
    """All 266,305 paths of depth <= 3 give distinct projected embeddings,
    which also certifies the binary encodings themselves are distinct."""
    w = torch.randn(16, BIN_LENGTH, generator=torch.Generator().manual_seed(0))
    w *= 0.02
    side = torch.arange(MAX_CHILD_COUNT)
    groups = [
        (torch.zeros(1, 3, dtype=torch.long), torch.zeros(1, dtype=torch.long)),
    ]
    d1 = torch.zeros(MAX_CHILD_COUNT, 3, dtype=torch.long)
    d1[:, 0] = side
    groups.append((d1, torch.ones(MAX_CHILD_COUNT, dtype=torch.long)))
    d2 = torch.cartesian_prod(side, side)
    d2 = torch.cat([d2, torch.zeros(len(d2), 1, dtype=torch.long)], dim=1)
    groups.append((d2, torch.full((len(d2),), 2, dtype=torch.long)))
    d3 = torch.cartesian_prod(side, side, side)
    groups.append((d3, torch.full((len(d3),), 3, dtype=torch.long)))

    total = sum(len(e) for e, _ in groups)
    embeddings = torch.zeros(total, 16)
    cursor = 0
    for entries, lengths in groups:
        for start in range(0, len(entries), 16384):
            chunk = entries[start:start + 16384]
            chunk_len = lengths[start:start + 16384]
            bins = _vectorized_bins(chunk, chunk_len)
            embeddings[cursor:cursor + len(chunk)] = bins @ w.T
            cursor += len(chunk)
    assert cursor == total == 1 + 64 + 64 ** 2 + 64 ** 3
    unique = torch.unique(embeddings, dim=0)
    assert unique.shape[0] == total


def test_vectorized_bins_agree_with_bin_encode():
    rng = random.Random(11)
    paths = []
    for _ in range(100):
        depth = rng.randrange(0, 4)
        paths.append(tuple(rng.randrange(MAX_CHILD_COUNT) for _ in range(depth)))
    entries = torch.zeros(len(paths), 3, dtype=torch.long)
    lengths = torch.zeros(len(paths), dtype=torch.long)
    for i, p in enumerate(paths):
        lengths[i] = len(p)
        for j, e in enumerate(p):
            entries[i, j] = e
    fast = _vectorized_bins(entries, lengths)
    slow = torch.stack([bin_encode(p) for p in paths])
    assert torch.equal(fast[:, : slow.shape[1]], slow)


def _tiny_layout():
    text = TextVocab.build(["tiny corpus for testing"])
    return id_layout(text, MathVocab.default())


def _model(layout, **overrides) -> MathLM:
    cfg = ModelConfig(
        d_model=16, n_layers=1, n_heads=2, max_seq=64, seed=0, **overrides
    )
    return MathLM(cfg, layout)


def test_root_position_embeds_to_zero():
    layout = _tiny_layout()
    emb = _model(layout).embedder
    zero_bin = bin_encode_batch([None])
    out = emb.tree_pos_proj(zero_bin)
    assert torch.all(out == 0)


def test_tree_pos_embedding_deterministic():
    layout = _tiny_layout()
    emb = _model(layout).embedder
    bins = bin_encode_batch([(1, 3), (1, 3)])
    out = emb.tree_pos_proj(bins)
    assert torch.equal(out[0], out[1])


def test_math_embeddings_start_near_text_average():
    layout = _tiny_layout()
    emb = _model(layout).embedder
    tbar = emb.text_average_matrix()
    linked = emb.math_token_matrix()
    specials = emb.special_slot >= 0
    deviation = ((linked - tbar).norm(dim=1) / tbar.norm(dim=1)).detach()
    assert float(deviation[~specials].max()) < 0.05


def test_single_piece_symbol_average_is_that_embedding():
    layout = _tiny_layout()
    emb = _model(layout).embedder
    local = layout.math.local_index(
        var("x")
    )
    piece_id = layout.text.piece_id("x")
    tbar = emb.text_average_matrix()
    assert torch.allclose(tbar[local], emb.text_table.weight[piece_id])


def test_special_embeddings_independent_of_text_table():
    layout = _tiny_layout()
    emb = _model(layout).embedder
    before = emb.math_token_matrix().detach().clone()
    with torch.no_grad():
        emb.text_table.weight.add_(1.0)
    after = emb.math_token_matrix()
    specials = emb.special_slot >= 0
    assert torch.equal(before[specials], after[specials])
    assert not torch.allclose(before[~specials], after[~specials])


def test_type_term_applies_to_math_at_root():
    layout = _tiny_layout()
    model = _model(layout)
    emb = model.embedder
    fs = layout.special_id(TokenKind.START_FORMULA)
    plus = layout.math_id(op("+"))
    ids = torch.tensor([[plus]])
    types_op = torch.tensor([[1]])
    bins = torch.zeros(1, 1, BIN_LENGTH)
    with_type = emb(ids, types_op, bins)
    cfg2 = ModelConfig(
        d_model=16, n_layers=1, n_heads=2, max_seq=64, seed=0, use_type_emb=False
    )
    emb2 = MathLM(cfg2, layout).embedder
    with torch.no_grad():
        emb2.text_table.weight.copy_(emb.text_table.weight)
        emb2.seq_pos_table.weight.copy_(emb.seq_pos_table.weight)
        emb2.tree_pos_proj.weight.copy_(emb.tree_pos_proj.weight)
        emb2.link_hidden.weight.copy_(emb.link_hidden.weight)
        emb2.link_hidden.bias.copy_(emb.link_hidden.bias)
        emb2.link_out.weight.copy_(emb.link_out.weight)
        emb2.link_out.bias.copy_(emb.link_out.bias)
        emb2.special_table.weight.copy_(emb.special_table.weight)
    without_type = emb2(ids, types_op, bins)
    delta = with_type - without_type
    assert torch.allclose(delta[0, 0], emb.type_table.weight[1])


def test_tree_position_ablation_ignores_bins():
    layout = _tiny_layout()
    model = _model(layout, use_tree_pos=False)
    ids = torch.tensor([[5, 6]])
    types = torch.tensor([[0, 0]])
    a = model.embedder(ids, types, torch.zeros(1, 2, BIN_LENGTH))
    b = model.embedder(ids, types, torch.ones(1, 2, BIN_LENGTH))
    assert torch.equal(a, b)
    assert not hasattr(model.embedder, "tree_pos_proj")


def test_unshared_math_embeddings_have_own_table():
    layout = _tiny_layout()
    model = _model(layout, shared_math_emb=False)
    assert hasattr(model.embedder, "math_table")
    assert not hasattr(model.embedder, "link_out")
    # parameter bookkeeping: unshared trades the link MLP and special table
    # for a full math table
    shared = _model(layout)
    d = 16
    layout_m = layout.math_size
    diff = model.parameter_count() - shared.parameter_count()
    link_params = (d * d + d) * 2 + 5 * d
    assert diff == layout_m * d - link_params


def test_sequence_length_guard():
    layout = _tiny_layout()
    model = _model(layout)
    ids = torch.zeros(1, 65, dtype=torch.long)
    types = torch.zeros(1, 65, dtype=torch.long)
    bins = torch.zeros(1, 65, BIN_LENGTH)
    with pytest.raises(SequenceTooLong):
        model.embedder(ids, types, bins)


def test_shape_guards():
    layout = _tiny_layout()
    model = _model(layout)
    with pytest.raises(ShapeMismatch):
        model.embedder(
            torch.zeros(1, 4, dtype=torch.long),
            torch.zeros(1, 3, dtype=torch.long),
            torch.zeros(1, 4, BIN_LENGTH),
        )
    with pytest.raises(ShapeMismatch):
        model(torch.zeros(1, 4, 17))
